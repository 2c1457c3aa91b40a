"""Norm estimators and functional-inequality checkers on periodic fields.

Difference-quotient estimators (Hoelder, log-Lipschitz, second differences)
scan offsets along the two axes and both diagonals.  By default every integer
offset up to half a period is used; ``dyadic=True`` restricts to separations
``2^m`` grid cells, which is cheaper and still fine for regression use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .spectral_core import (
    TWO_PI,
    BoundaryField,
    TorusGrid2,
    fractional_laplacian,
    gradient,
    lp_decompose,
    partial,
)

DIRECTIONS = ((1, 0), (0, 1), (1, 1), (1, -1))


@dataclass(frozen=True)
class NormReport:
    name: str
    value: float
    s: float = float("nan")
    p: float = float("nan")
    q: float = float("nan")
    resolution: str = ""
    seminorm: float = float("nan")

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"norm value must be nonnegative, got {self.value}")

    def csv_row(self) -> str:
        return f"{self.name},{_fmt(self.s)},{_fmt(self.p)},{_fmt(self.q)},{self.value:.17g},{self.resolution}"


NORM_HEADER = "name,s,p,q,value,resolution"


@dataclass(frozen=True)
class InequalityVerdict:
    """``lhs <= constant * rhs``; ``constant`` is either declared or fitted."""

    name: str
    lhs: float
    rhs: float
    constant: float
    satisfied: bool

    @property
    def fitted(self) -> float:
        return fitted_constant(self.lhs, self.rhs)

    def csv_row(self) -> str:
        return f"{self.name},{self.lhs:.17g},{self.rhs:.17g},{self.constant:.17g},{str(self.satisfied).lower()}"

    @classmethod
    def judge(cls, name: str, lhs: float, rhs: float, constant: float | None = None) -> "InequalityVerdict":
        """Evaluate against ``constant``, or against the fitted ratio when it is None."""
        if constant is None:
            constant = fitted_constant(lhs, rhs)
        ok = bool(lhs <= constant * rhs) if math.isfinite(constant) else False
        return cls(name, float(lhs), float(rhs), float(constant), ok)


VERDICT_HEADER = "name,lhs,rhs,constant,satisfied"


def fitted_constant(lhs: float, rhs: float) -> float:
    """Smallest float ``C`` with ``lhs <= C * rhs`` (0 for a vanishing lhs)."""
    if lhs <= 0:
        return 0.0
    if rhs <= 0:
        return math.inf
    c = lhs / rhs
    while c * rhs < lhs:
        c = np.nextafter(c, math.inf)
    return float(c)


def _fmt(x: float) -> str:
    return "" if x != x else f"{x:g}"


def _res(grid: TorusGrid2) -> str:
    return f"{grid.n1}x{grid.n2}"


# --------------------------------------------------------------------------
# Besov-type norms


def band_sup_norms(f: BoundaryField) -> dict[int, float]:
    bands = lp_decompose(f)
    return {j: b.sup() for j, b in bands.bands.items()}


def besov_norm_bands(f: BoundaryField, s: float) -> NormReport:
    """``sup_j 2^(j s) ||Delta_j f||_inf`` over the representable bands."""
    vals = [2.0 ** (j * s) * v for j, v in band_sup_norms(f).items()]
    return NormReport("besov_bands", max(vals, default=0.0), s=s, p=math.inf, q=math.inf, resolution=_res(f.grid))


def vector_besov_norm(components, s: float) -> float:
    """Band norm of a vector field, using the pointwise Euclidean length per band."""
    decs = [lp_decompose(c) for c in components]
    out = 0.0
    for j in decs[0].bands:
        mag = np.sqrt(sum(d.bands[j].values ** 2 for d in decs))
        out = max(out, 2.0 ** (j * s) * float(mag.max()))
    return out


def _offsets(grid: TorusGrid2, dyadic: bool):
    """Yield ``(shift1, shift2, distance)`` along axes and diagonals up to half a period."""
    h1, h2 = grid.spacing
    m_max = min(grid.n1, grid.n2) // 2
    steps = [2**i for i in range(int(math.log2(m_max)) + 1)] if dyadic else range(1, m_max + 1)
    for m in steps:
        for d1, d2 in DIRECTIONS:
            yield m * d1, m * d2, math.hypot(m * d1 * h1, m * d2 * h2)


def besov1_second_difference(f: BoundaryField, dyadic: bool = True) -> NormReport:
    """``sup |f(x+y) + f(x-y) - 2 f(x)| / |y|`` over grid points and offsets."""
    v = f.values
    best = 0.0
    for a, b, dist in _offsets(f.grid, dyadic):
        d2 = np.roll(v, (-a, -b), axis=(0, 1)) + np.roll(v, (a, b), axis=(0, 1)) - 2.0 * v
        best = max(best, float(np.max(np.abs(d2))) / dist)
    return NormReport("besov1_second_difference", best, s=1.0, p=math.inf, q=math.inf, resolution=_res(f.grid))


def _first_difference_sup(f: BoundaryField, weight, dyadic: bool, max_dist: float = math.inf) -> float:
    v = f.values
    best = 0.0
    for a, b, dist in _offsets(f.grid, dyadic):
        if dist >= max_dist:
            continue
        diff = np.max(np.abs(np.roll(v, (-a, -b), axis=(0, 1)) - v))
        best = max(best, float(diff) / weight(dist))
    return best


def holder_norm(f: BoundaryField, alpha: float, dyadic: bool = False) -> NormReport:
    """``||f||_inf + sup |f(x) - f(y)| / |x - y|^alpha`` over sampled pairs."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    semi = _first_difference_sup(f, lambda d: d**alpha, dyadic)
    return NormReport(
        "holder", f.sup() + semi, s=alpha, p=math.inf, q=math.inf, resolution=_res(f.grid), seminorm=semi
    )


def holder_seminorm_exhaustive(f: BoundaryField, alpha: float) -> float:
    """All-pairs scan with periodic distance; O(N^2), meant for grids up to 64^2."""
    grid = f.grid
    v = f.values
    h1, h2 = grid.spacing
    best = 0.0
    for a in range(grid.n1):
        for b in range(grid.n2):
            if a == 0 and b == 0:
                continue
            d1 = min(a, grid.n1 - a) * h1
            d2 = min(b, grid.n2 - b) * h2
            diff = np.max(np.abs(np.roll(v, (-a, -b), axis=(0, 1)) - v))
            best = max(best, float(diff) / math.hypot(d1, d2) ** alpha)
    return best


def log_lipschitz_modulus(f: BoundaryField, dyadic: bool = False) -> NormReport:
    """``sup |f(x) - f(y)| / (|x - y| (1 - log|x - y|))`` over pairs closer than 1."""
    semi = _first_difference_sup(f, lambda d: d * (1.0 - math.log(d)), dyadic, max_dist=1.0)
    return NormReport("log_lipschitz", f.sup() + semi, resolution=_res(f.grid), seminorm=semi)


# --------------------------------------------------------------------------
# Sobolev-type norms


def sobolev_seminorm(f: BoundaryField, s: float) -> float:
    """Homogeneous ``H^s`` seminorm, ``((2pi)^2 sum_{k != 0} |k|^(2s) |f_k|^2)^(1/2)``."""
    kabs = f.grid.kabs
    with np.errstate(divide="ignore"):
        w = np.where(kabs > 0, kabs ** (2.0 * s), 0.0)
    return float(np.sqrt(TWO_PI**2 * np.sum(w * np.abs(f.coeffs) ** 2)))


def gagliardo_h_half(f: BoundaryField) -> NormReport:
    return NormReport("h_half", sobolev_seminorm(f, 0.5), s=0.5, p=2, resolution=_res(f.grid))


def gagliardo_h_half_quadrature(f: BoundaryField) -> float:
    """Double-integral form ``(1/4pi) int int |f(x)-f(y)|^2 / |x-y|^3`` with periodic distance.

    The singular cell ``|x - y| < eps`` uses the first-order Taylor expansion
    (contributing ``pi eps |grad f|^2``); offsets range over one period cell.
    """
    grid = f.grid
    v = f.values
    h1, h2 = grid.spacing
    area = grid.cell_area
    total = 0.0
    for a in range(-grid.n1 // 2, grid.n1 // 2):
        for b in range(-grid.n2 // 2, grid.n2 // 2):
            if a == 0 and b == 0:
                continue
            dist = math.hypot(a * h1, b * h2)
            sq = np.sum((np.roll(v, (-a, -b), axis=(0, 1)) - v) ** 2) * area
            total += sq * area / dist**3
    eps = math.sqrt(area / math.pi)
    g1, g2 = gradient(f)
    grad_sq = float(np.sum(g1.values**2 + g2.values**2) * area)
    total += math.pi * eps * grad_sq
    return math.sqrt(total / (4.0 * math.pi))


def negative_h2_norm(f: BoundaryField) -> NormReport:
    """``((2pi)^2 sum_k (1 + |k|^2)^-2 |f_k|^2)^(1/2)``, mean mode included."""
    w = (1.0 + f.grid.ksq) ** -2
    val = float(np.sqrt(TWO_PI**2 * np.sum(w * np.abs(f.coeffs) ** 2)))
    return NormReport("h_minus_2", val, s=-2.0, p=2, resolution=_res(f.grid))


# --------------------------------------------------------------------------
# BMO


def _mean_oscillation_sup(v: np.ndarray, s1: int, s2: int, st1: int, st2: int) -> float:
    n1, n2 = v.shape
    padded = np.pad(v, ((0, s1), (0, s2)), mode="wrap")
    win = sliding_window_view(padded, (s1, s2))[: n1 : st1, : n2 : st2]
    avg = win.mean(axis=(-2, -1), keepdims=True)
    return float(np.max(np.abs(win - avg).mean(axis=(-2, -1))))


def _bmo_sides(n: int) -> list[int]:
    """Dyadic sides n/2^m plus the intermediate 3n/2^(m+2) sides."""
    sides = set()
    m = 0
    while (n >> m) >= 1:
        sides.add(n >> m)
        if (3 * n) % (4 << m) == 0:
            sides.add(3 * n // (4 << m))
        m += 1
    return sorted(sides, reverse=True)


def bmo_norm(f: BoundaryField) -> NormReport:
    """Sup of mean oscillation over (near-)dyadic squares with half-side stride."""
    v = f.values
    n1, n2 = f.grid.shape
    best = 0.0
    for s1, s2 in zip(_bmo_sides(n1), _bmo_sides(n2)):
        if s1 * s2 > 1:
            best = max(best, _mean_oscillation_sup(v, s1, s2, max(s1 // 2, 1), max(s2 // 2, 1)))
    return NormReport("bmo", best, resolution=_res(f.grid))


def bmo_exhaustive(f: BoundaryField) -> float:
    """All square sides and all translates at unit stride (small grids only)."""
    v = f.values
    n = min(f.grid.shape)
    return max(_mean_oscillation_sup(v, s, s, 1, 1) for s in range(2, n + 1))


# --------------------------------------------------------------------------
# refined sup norm


def _eval_trig(coeffs: np.ndarray, k1: np.ndarray, k2: np.ndarray, x: np.ndarray):
    """Value, gradient and Hessian of the trigonometric interpolant at point ``x``."""
    ph = np.exp(1j * (k1 * x[0] + k2 * x[1])) * coeffs
    val = ph.sum().real
    g = np.array([(1j * k1 * ph).sum().real, (1j * k2 * ph).sum().real])
    hxx = -(k1 * k1 * ph).sum().real
    hxy = -(k1 * k2 * ph).sum().real
    hyy = -(k2 * k2 * ph).sum().real
    return val, g, np.array([[hxx, hxy], [hxy, hyy]])


def refined_sup(f: BoundaryField, factor: int = 4, candidates: int = 8, signed: bool = False) -> float:
    """Sup norm of the trigonometric interpolant (not just the nodes).

    Candidates come from a zero-padded grid ``factor`` times finer and are
    polished by Newton iterations on the exact interpolant (Nyquist modes
    dropped).  ``signed=True`` returns ``max f`` instead of ``max |f|``.
    """
    fine_field = upsample(f, factor)
    fine = fine_field.values
    target = fine if signed else np.abs(fine)
    m1, m2 = fine.shape
    c = fine_field.coeffs
    keep = np.abs(c) > 0
    k1, k2 = fine_field.grid.wavenumbers
    ck, q1, q2 = c[keep], k1[keep], k2[keep]
    best = float(target.max())
    h = TWO_PI / max(m1, m2)
    seen: list[np.ndarray] = []
    for flat in np.argsort(target.ravel())[::-1][: candidates * 16]:
        a, b = divmod(int(flat), m2)
        x = np.array([a * TWO_PI / m1, b * TWO_PI / m2])
        if any(np.hypot(*(x - y)) < 4 * h for y in seen):
            continue
        seen.append(x)
        if len(seen) > candidates:
            break
        sign = 1.0 if (signed or fine[a, b] >= 0) else -1.0
        for _ in range(30):
            _, g, hess = _eval_trig(ck, q1, q2, x)
            try:
                step = np.linalg.solve(hess, -g)
            except np.linalg.LinAlgError:
                break
            if np.hypot(*step) > 2 * h:
                break
            x = x + step
            if np.hypot(*step) < 1e-14:
                break
        best = max(best, sign * _eval_trig(ck, q1, q2, x)[0])
    return float(best)


# --------------------------------------------------------------------------
# inequality checkers


def check_log_interpolation(H: BoundaryField, constant: float | None = None) -> InequalityVerdict:
    """``||h||_inf <= C (||H||_inf + ||h||_B0 (1 + log+(||h||_H3/2 / ||h||_B0)))`` with ``h = grad H``."""
    h = gradient(H)
    lhs = float(np.sqrt(np.max(h[0].values ** 2 + h[1].values ** 2)))
    b0 = vector_besov_norm(h, 0.0)
    if b0 == 0.0:
        rhs = H.sup() if H.sup() > 0 else 0.0
    else:
        h32 = math.hypot(sobolev_seminorm(h[0], 1.5), sobolev_seminorm(h[1], 1.5))
        rhs = H.sup() + b0 * (1.0 + max(math.log(h32 / b0), 0.0))
    if lhs == 0.0 and rhs == 0.0:
        return InequalityVerdict("log_interpolation", 0.0, 0.0, 0.0 if constant is None else constant, True)
    return InequalityVerdict.judge("log_interpolation", lhs, rhs, constant)


def resample(f: BoundaryField, n1: int, n2: int | None = None) -> BoundaryField:
    """Spectral resampling onto an ``n1 x n2`` grid.

    Modes representable on both grids are kept (Nyquist modes of either grid
    dropped); refinement is exact trigonometric interpolation, coarsening is
    Fourier truncation.
    """
    n2 = n1 if n2 is None else n2
    g = f.grid
    new = TorusGrid2(n1, n2)
    k1, k2 = g.wavenumbers
    keep = (np.abs(k1) < min(g.n1, n1) // 2) & (np.abs(k2) < min(g.n2, n2) // 2)
    out = np.zeros(new.shape, dtype=complex)
    out[k1[keep].astype(int) % n1, k2[keep].astype(int) % n2] = f.coeffs[keep]
    return BoundaryField(new, coeffs=out)


def upsample(f: BoundaryField, factor: int = 2) -> BoundaryField:
    """Exact trigonometric interpolation onto a grid ``factor`` times finer."""
    return resample(f, f.grid.n1 * factor, f.grid.n2 * factor)


def _multi_indices(order: int):
    return [(a, order - a) for a in range(order + 1)]


def _d(f: BoundaryField, alpha) -> BoundaryField:
    out = f
    if alpha[0]:
        out = partial(out, 1, alpha[0])
    if alpha[1]:
        out = partial(out, 2, alpha[1])
    return out


def commutator_residual(f: BoundaryField, g: BoundaryField, order: int, constant: float | None = None) -> InequalityVerdict:
    """``max_|a|=order ||D^a(fg) - f D^a g||_2`` against the Kato-Ponce type right side.

    Products are formed on a grid twice as fine so they are alias-free.
    """
    if order not in (2, 3):
        raise ValueError("order must be 2 or 3")
    F, G = upsample(f), upsample(g)
    FG = F * G
    lhs = max((_d(FG, a) - F * _d(G, a)).l2() for a in _multi_indices(order))
    g1, g2 = gradient(F)
    grad_f = float(np.sqrt(np.max(g1.values**2 + g2.values**2)))
    rhs = grad_f * sobolev_seminorm(G, order - 1) + G.sup() * sobolev_seminorm(F, order)
    return InequalityVerdict.judge(f"commutator_{order}", lhs, rhs, constant)


def check_duality_product(w: BoundaryField, z: BoundaryField, constant: float | None = None) -> InequalityVerdict:
    """``||w z||_H-2 <= C ||(-Lap)^(-1/4) w||_inf (||z||_inf + ||z||_H1/2)``."""
    lhs = negative_h2_norm(upsample(w) * upsample(z)).value
    rhs = fractional_laplacian(w, -0.25).sup() * (z.sup() + sobolev_seminorm(z, 0.5))
    return InequalityVerdict.judge("duality_product", lhs, rhs, constant)


def check_duality_half(z: BoundaryField, constant: float | None = None) -> InequalityVerdict:
    """``||z (-Lap)^(1/2) z||_H-2 <= C (||z||_inf ||z||_H1/2 + ||z||_H1/2^2)``."""
    Z = upsample(z)
    lhs = negative_h2_norm(Z * fractional_laplacian(Z, 0.5)).value
    hz = sobolev_seminorm(z, 0.5)
    rhs = z.sup() * hz + hz * hz
    return InequalityVerdict.judge("duality_half", lhs, rhs, constant)


def bernstein_ratios(u: BoundaryField, alpha: float, p: float) -> dict[int, float]:
    """``||(-Lap)^alpha Delta_j u||_p / (2^(2 j alpha) ||Delta_j u||_p)`` per nonzero band."""
    out = {}
    for j, band in lp_decompose(u).bands.items():
        base = band.lp(p)
        if base > 1e-14 * max(1.0, u.sup()):
            out[j] = fractional_laplacian(band, alpha).lp(p) / (2.0 ** (2 * j * alpha) * base)
    return out

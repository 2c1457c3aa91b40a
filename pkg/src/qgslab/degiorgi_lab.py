"""Level-set instrumentation for the boundary equation.

Everything here reads stored boundary series (``FieldSeries``) and measures
the quantities a De Giorgi argument manipulates: truncation energies along a
level ladder, the nonlinear recurrence between them, space-time measures of
the three isoperimetric sets, drift-following recentring paths and the
oscillation cascade that turns per-level oscillation decay into a Hoelder
exponent.

Normalised coordinates: a window ending at ``t0`` is scaled by
``K0 = min(1, t0 / 4)``, so normalised time ``s`` in ``[-2, 0]`` is physical
time ``t0 + K0 s`` and normalised position ``y`` is ``x0 + K0 y``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import j0, j1, roots_legendre

from .analysis_norms import InequalityVerdict, NormReport, holder_norm
from .spectral_core import (
    TWO_PI,
    BoundaryField,
    FieldSeries,
    fractional_laplacian,
    has_zero_mean,
    integrate_piecewise_linear,
)


def window_scale(t0: float) -> float:
    """``K0 = min(1, t0 / 4)``."""
    if not t0 > 0:
        raise ValueError("window end t0 must be positive")
    return min(1.0, t0 / 4.0)


# --------------------------------------------------------------------------
# truncation ladder and energies


@dataclass(frozen=True)
class TruncationLadder:
    L: float
    k_max: int = 10
    t0: float = 1.0
    K0: float | None = None

    def __post_init__(self):
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError("ladder top L must be positive and finite")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.K0 is None:
            object.__setattr__(self, "K0", window_scale(self.t0))
        elif not 0 < self.K0 <= 1:
            raise ValueError("K0 must lie in (0, 1]")

    @property
    def ks(self) -> np.ndarray:
        return np.arange(self.k_max + 1)

    @property
    def levels(self) -> np.ndarray:
        """``L_k = L (1 - 2^-k)``."""
        return self.L * (1.0 - 2.0 ** -self.ks.astype(float))

    @property
    def times(self) -> np.ndarray:
        """Normalised ``T_k = -1 - 2^-k``."""
        return -1.0 - 2.0 ** -self.ks.astype(float)

    @property
    def mapped_times(self) -> np.ndarray:
        return self.t0 + self.K0 * self.times

    @property
    def window(self) -> tuple[float, float]:
        return self.t0 - 2.0 * self.K0, self.t0


@dataclass(frozen=True)
class LevelSetEnergySeries:
    ladder: TruncationLadder
    mass_sup: np.ndarray
    dissipation: np.ndarray

    @property
    def E(self) -> np.ndarray:
        return self.mass_sup + self.dissipation

    def __len__(self) -> int:
        return len(self.mass_sup)


def truncation_pieces(theta: BoundaryField, level: float) -> tuple[float, float]:
    """``(int theta_c^2, ||(-Lap)^(1/4) theta_c||_2^2)`` for ``theta_c = (theta - level)_+``."""
    v = np.maximum(theta.values - level, 0.0)
    if not v.any():
        return 0.0, 0.0
    g = theta.grid
    mass = float(np.sum(v * v) * g.cell_area)
    c = np.fft.fft2(v) / g.size
    diss = float(TWO_PI**2 * np.sum(g.kabs * np.abs(c) ** 2))
    return mass, diss


def _window_samples(series: FieldSeries, a: float, b: float) -> np.ndarray:
    """Indices of samples needed to interpolate on ``[a, b]``."""
    t = series.times
    lo = max(int(np.searchsorted(t, a, side="right")) - 1, 0)
    hi = min(int(np.searchsorted(t, b, side="left")) + 1, len(t))
    return np.arange(lo, hi)


def _sup_piecewise_linear(times, values, a, b) -> float:
    inner = (times > a) & (times < b)
    ends = np.interp([a, b], times, values) if len(times) > 1 else [values[0]] * 2
    return float(max(np.max(values[inner], initial=0.0), *ends))


def truncation_energy(theta_series: FieldSeries, ladder: TruncationLadder) -> LevelSetEnergySeries:
    """Sup-in-time mass plus time-integrated half-derivative energy per rung.

    Time dependence between snapshots is taken piecewise linear, for both
    the sup and the integral, so rung start times need not be sample times.
    """
    a, b = ladder.window
    if not theta_series.covers(a, b):
        raise ValueError(f"series span {theta_series.span} does not cover window [{a}, {b}]")
    idx = _window_samples(theta_series, a, b)
    times = theta_series.times[idx]
    levels = ladder.levels
    mass = np.zeros((len(levels), len(idx)))
    diss = np.zeros_like(mass)
    for col, i in enumerate(idx):
        f = theta_series.fields[i]
        for k, lev in enumerate(levels):
            mass[k, col], diss[k, col] = truncation_pieces(f, lev)
    starts = ladder.mapped_times
    sup = np.array([_sup_piecewise_linear(times, mass[k], starts[k], b) for k in range(len(levels))])
    integ = np.array([integrate_piecewise_linear(times, diss[k], starts[k], b) for k in range(len(levels))])
    return LevelSetEnergySeries(ladder, sup, integ)


# --------------------------------------------------------------------------
# recurrence


@dataclass(frozen=True)
class RecurrenceVerdict(InequalityVerdict):
    """``lhs`` is the fitted ``C`` and ``rhs`` is 1."""

    rungs: int = 0
    degenerate: bool = False
    decays: bool = False
    forced_decay: bool = False

    @property
    def flagged(self) -> bool:
        """True when neither the data nor the fitted recurrence show decay."""
        return not (self.decays or self.forced_decay)


def _recurrence_forces_decay(C: float, G0: float, steps: int = 80) -> bool:
    g = G0
    for k in range(1, steps + 1):
        g = C**k * g**1.5
        if not math.isfinite(g) or g > 1e300:
            return False
        if g < 1e-300:
            return True
    return g < 1e-12 * max(G0, 1e-300)


def verify_recurrence(
    E, L: float, decay_tol: float = 1e-8, decay_rung: int = 8, cap: float = math.inf
) -> RecurrenceVerdict:
    """Fit the least ``C`` with ``E_k <= C^k L^-2 E_{k-1}^{3/2}`` for all rungs.

    ``E`` may be a ``LevelSetEnergySeries`` or a plain sequence.  The verdict
    is satisfied when the fit is finite (and below ``cap``).  ``decays``
    reports the data (``E`` at ``decay_rung`` below ``decay_tol``);
    ``forced_decay`` reports whether iterating the fitted recurrence from
    ``E_0`` alone drives the energies to zero.  Fewer than four informative
    rungs marks the verdict degenerate.
    """
    E = np.asarray(E.E if isinstance(E, LevelSetEnergySeries) else E, dtype=float)
    if np.any(E < 0) or not np.all(np.isfinite(E)):
        raise ValueError("energies must be finite and nonnegative")
    if not L > 0:
        raise ValueError("L must be positive")
    C = 0.0
    rungs = 0
    for k in range(1, len(E)):
        if E[k - 1] > 0:
            rungs += 1
            if E[k] > 0:
                C = max(C, (E[k] * L * L / E[k - 1] ** 1.5) ** (1.0 / k))
        elif E[k] > 0:
            C = math.inf
    r = min(decay_rung, len(E) - 1)
    decays = bool(E[r] < decay_tol)
    G0 = E[0] / L**4
    forced = bool(E[0] == 0 or (math.isfinite(C) and _recurrence_forces_decay(C, G0)))
    ok = bool(math.isfinite(C) and C <= cap)
    return RecurrenceVerdict(
        "degiorgi_recurrence", float(C), 1.0, float(cap), ok,
        rungs=rungs, degenerate=rungs < 4, decays=decays, forced_decay=forced,
    )


# --------------------------------------------------------------------------
# cutoff family


def _psi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _dpsi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def smooth_step(t):
    """C-infinity step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    a, b = _psi(t), _psi(1.0 - np.asarray(t, dtype=float))
    return a / (a + b)


def smooth_step_prime(t):
    t = np.asarray(t, dtype=float)
    a, b = _psi(t), _psi(1.0 - t)
    da, db = _dpsi(t), _dpsi(1.0 - t)
    return (da * b + a * db) / (a + b) ** 2


def _hermite_quintic(x0, x1, left, right) -> np.ndarray:
    """Coefficients (ascending powers of ``x - x0``) matching value and two derivatives."""
    h = x1 - x0
    A = np.zeros((6, 6))
    rhs = np.array([*left, *right], dtype=float)
    for i in range(6):
        A[0, i] = 1.0 if i == 0 else 0.0
        A[1, i] = 1.0 if i == 1 else 0.0
        A[2, i] = 2.0 if i == 2 else 0.0
        A[3, i] = h**i
        A[4, i] = i * h ** (i - 1) if i >= 1 else 0.0
        A[5, i] = i * (i - 1) * h ** (i - 2) if i >= 2 else 0.0
    return np.linalg.solve(A, rhs)


@dataclass(frozen=True)
class CutoffFamily:
    """Radial cutoffs used by the local level-set energy estimates.

    All methods take radii ``r = |x|`` (arrays allowed).
    """

    eps: float = 0.05
    _quintic: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.eps < 0.25:
            raise ValueError("eps must lie in (0, 1/4)")
        left = (0.0, 0.0, 0.0)
        right = (self._far(3.0), self._far_d(3.0), self._far_dd(3.0))
        object.__setattr__(self, "_quintic", _hermite_quintic(1.75, 3.0, left, right))

    @staticmethod
    def _far(r):
        return np.maximum(np.asarray(r, dtype=float) ** 0.25 - 2.0, 0.0)

    @staticmethod
    def _far_d(r):
        r = np.asarray(r, dtype=float)
        return np.where(r**0.25 > 2.0, 0.25 * r**-0.75, 0.0)

    @staticmethod
    def _far_dd(r):
        r = np.asarray(r, dtype=float)
        return np.where(r**0.25 > 2.0, -0.1875 * r**-1.75, 0.0)

    def c(self, r):
        r = np.asarray(r, dtype=float)
        mid = np.polynomial.polynomial.polyval(r - 1.75, self._quintic)
        return np.where(r <= 1.75, 0.0, np.where(r >= 3.0, self._far(r), mid))

    def c_eps(self, r):
        r = np.asarray(r, dtype=float)
        return np.maximum(r**self.eps - 2.0 ** (4 * self.eps), 0.0)

    def phi(self, r):
        """1 on ``B_1``, 0 outside ``B_{3/2}``, radially decreasing."""
        return smooth_step((1.5 - np.asarray(r, dtype=float)) / 0.5)

    def phi0(self, r):
        return 1.0 + self.c(r) - self.phi(r)

    def phi1(self, r):
        return 1.0 + self.c(r) - 0.5 * self.phi(r)

    @staticmethod
    def gamma_params(k: int) -> tuple[float, float, float]:
        """``(height, plateau radius, support radius)`` of ``gamma_k``."""
        height = 0.5 + 2.0 ** (-k - 1)
        return height, 0.5 + 2.0 ** (-k - 2), 0.5 + 2.0 ** (-k - 1)

    def gamma(self, k: int, r):
        g, a, b = self.gamma_params(k)
        return g * smooth_step((b - np.asarray(r, dtype=float)) / (b - a))

    def gamma_prime(self, k: int, r):
        g, a, b = self.gamma_params(k)
        return -g / (b - a) * smooth_step_prime((b - np.asarray(r, dtype=float)) / (b - a))

    def gamma_grad_sup(self, k: int, samples: int = 4001) -> float:
        _, a, b = self.gamma_params(k)
        r = np.linspace(a, b, samples)
        return float(np.max(np.abs(self.gamma_prime(k, r))))

    def gamma_half_laplacian(self, k: int, r, rho_cutoff: float = 60.0, drho: float = 0.4, nodes: int = 64):
        """``(-Lap)^(1/2) gamma_k`` at radii ``r`` by a Hankel-transform integral.

        Uses ``Lambda f(r) = -int rho G(rho) J0(rho r) d rho`` with
        ``G(rho) = int f'(s) s J1(rho s) ds`` over the transition annulus,
        truncated at ``rho_cutoff / width``.
        """
        _, a, b = self.gamma_params(k)
        w = b - a
        xs, ws = roots_legendre(nodes)
        s = a + 0.5 * w * (xs + 1.0)
        fs = self.gamma_prime(k, s) * s * 0.5 * w * ws
        r = np.atleast_1d(np.asarray(r, dtype=float))
        rho_max = rho_cutoff / w
        n = int(math.ceil(rho_max / drho)) + 1
        total = np.zeros(len(r))
        chunk = 20000
        for start in range(0, n, chunk):
            rho = np.arange(start, min(start + chunk, n)) * drho
            G = j1(np.outer(rho, s)) @ fs
            wt = np.full(len(rho), drho)
            if start == 0:
                wt[0] = 0.5 * drho
            if start + chunk >= n:
                wt[-1] = 0.5 * drho
            total -= j0(np.outer(r, rho)) @ (wt * rho * G)
        return total

    def gamma_half_laplacian_sup(self, k: int, **kw) -> float:
        _, a, b = self.gamma_params(k)
        w = b - a
        r = np.unique(np.concatenate([
            np.linspace(0.0, 1.2, 49),
            np.linspace(a - 4 * w, b + 4 * w, 65),
        ]))
        r = r[r >= 0]
        return float(np.max(np.abs(self.gamma_half_laplacian(k, r, **kw))))

    def audit(self, k_max: int = 10) -> list[tuple[int, float, float]]:
        """Rows ``(k, ||grad gamma_k||_inf / 2^k, ||(-Lap)^(1/2) gamma_k||_inf / (k 2^k))``."""
        rows = []
        for k in range(1, k_max + 1):
            rows.append((k, self.gamma_grad_sup(k) / 2.0**k, self.gamma_half_laplacian_sup(k) / (k * 2.0**k)))
        return rows


# --------------------------------------------------------------------------
# isoperimetric sets


class IsoperimetricMeasures(NamedTuple):
    A: float
    C: float
    D: float


def _normalised_radius(grid, x0, K0) -> np.ndarray:
    return grid.periodic_distance(*x0) / K0


def _space_time_measure(series: FieldSeries, t0: float, K0: float, s_range, mask_fn) -> float:
    """Integral over normalised time of the normalised area where ``mask_fn`` holds."""
    a, b = t0 + K0 * s_range[0], t0 + K0 * s_range[1]
    idx = _window_samples(series, a, b)
    cell = series.grid.cell_area / K0**2
    areas = np.array([float(np.count_nonzero(mask_fn(series.fields[i].values))) * cell for i in idx])
    s = (series.times[idx] - t0) / K0
    return integrate_piecewise_linear(s, areas, *s_range)


def isoperimetric_measures(
    theta_series: FieldSeries, t0: float | None = None, x0=(0.0, 0.0), cutoffs: CutoffFamily | None = None
) -> IsoperimetricMeasures:
    """Space-time measures of the sets ``A``, ``C``, ``D`` in normalised units.

    Balls use the periodic distance; normalised radius 2 must stay below
    ``pi / K0`` which always holds since ``K0 <= 1``.
    """
    cutoffs = cutoffs or CutoffFamily()
    t0 = theta_series.times[-1] if t0 is None else t0
    K0 = window_scale(t0)
    if not theta_series.covers(t0 - 2 * K0, t0):
        raise ValueError("series does not cover the normalised window [-2, 0]")
    r = _normalised_radius(theta_series.grid, x0, K0)
    b1, b2 = r < 1.0, r < 2.0
    lo, hi = cutoffs.phi0(r), cutoffs.phi1(r)
    A = _space_time_measure(theta_series, t0, K0, (-1.0, 0.0), lambda v: b1 & (v > 0.5))
    C = _space_time_measure(theta_series, t0, K0, (-2.0, -1.0), lambda v: b1 & (v <= 0.0))
    D = _space_time_measure(theta_series, t0, K0, (-2.0, 0.0), lambda v: b2 & (lo < v) & (v <= hi))
    return IsoperimetricMeasures(A, C, D)


def oscillation_set_overlaps(
    theta_series: FieldSeries, depth: int, t0: float | None = None, x0=(0.0, 0.0), cutoffs: CutoffFamily | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Measures of ``D_j = {phi0 < theta_j <= phi1}`` and of pairwise intersections.

    ``theta_j = 2^j (theta - (1 - 2^-j))`` for ``j = 0..depth``.  Returns
    ``(sizes, overlaps)`` with ``overlaps[i, j]`` the measure of
    ``D_i`` intersected with ``D_j``.
    """
    cutoffs = cutoffs or CutoffFamily()
    t0 = theta_series.times[-1] if t0 is None else t0
    K0 = window_scale(t0)
    r = _normalised_radius(theta_series.grid, x0, K0)
    b2 = r < 2.0
    lo, hi = cutoffs.phi0(r), cutoffs.phi1(r)

    def member(j):
        return lambda v: b2 & (lo < 2.0**j * (v - 1.0 + 2.0**-j)) & (2.0**j * (v - 1.0 + 2.0**-j) <= hi)

    n = depth + 1
    over = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            mi, mj = member(i), member(j)
            over[i, j] = over[j, i] = _space_time_measure(
                theta_series, t0, K0, (-2.0, 0.0), lambda v, mi=mi, mj=mj: mi(v) & mj(v)
            )
    return np.diag(over).copy(), over


# --------------------------------------------------------------------------
# drift-following paths


@dataclass(frozen=True)
class RecenterPath:
    times: np.ndarray
    points: np.ndarray
    velocity: np.ndarray

    @property
    def speed_sup(self) -> float:
        return float(np.max(np.hypot(self.velocity[:, 0], self.velocity[:, 1]), initial=0.0))

    def at(self, t: float) -> np.ndarray:
        order = np.argsort(self.times)
        ts = self.times[order]
        return np.array([np.interp(t, ts, self.points[order, i]) for i in range(2)])


class BallAverager:
    """Ball averages of a time-interpolated vector field at arbitrary centres.

    ``method="spectral"`` averages the trigonometric interpolant exactly via
    the multiplier ``2 J1(|k| R) / (|k| R)``; ``method="nodes"`` averages the
    grid values at nodes inside the periodic ball.
    """

    def __init__(self, u_series: tuple[FieldSeries, FieldSeries], radius: float, method: str = "spectral"):
        u1, u2 = u_series
        if not np.array_equal(u1.times, u2.times):
            raise ValueError("velocity components must share sample times")
        if not radius > 0:
            raise ValueError("radius must be positive")
        if method not in ("spectral", "nodes"):
            raise ValueError(f"unknown averaging method {method!r}")
        self.times = u1.times
        self.grid = u1.grid
        self.radius = radius
        self.method = method
        g = self.grid
        if method == "spectral":
            k1, k2 = g.wavenumbers
            keep = np.ones(g.shape, dtype=bool)
            keep[g.nyquist[0]] = False
            keep[g.nyquist[1]] = False
            x = g.kabs[keep] * radius
            with np.errstate(invalid="ignore", divide="ignore"):
                mult = np.where(x > 0, 2.0 * j1(x) / np.where(x > 0, x, 1.0), 1.0)
            self.k1, self.k2 = k1[keep], k2[keep]
            self.data = [
                np.stack([a.coeffs[keep] * mult, b.coeffs[keep] * mult]) for a, b in zip(u1.fields, u2.fields)
            ]
        else:
            self.data = [np.stack([a.values, b.values]) for a, b in zip(u1.fields, u2.fields)]
        for f in self.data:
            if not np.all(np.isfinite(f)):
                raise ValueError("velocity series must be finite")

    def _frame(self, t: float):
        ts = self.times
        if not (ts[0] - 1e-9 <= t <= ts[-1] + 1e-9):
            raise ValueError(f"time {t} outside velocity series")
        if len(ts) == 1:
            return self.data[0]
        i = min(max(int(np.searchsorted(ts, t, side="right")) - 1, 0), len(ts) - 2)
        w = min(max((t - ts[i]) / (ts[i + 1] - ts[i]), 0.0), 1.0)
        return (1 - w) * self.data[i] + w * self.data[i + 1]

    def __call__(self, t: float, x) -> np.ndarray:
        d = self._frame(t)
        if self.method == "spectral":
            ph = np.exp(1j * (self.k1 * x[0] + self.k2 * x[1]))
            return (d @ ph).real
        dist = self.grid.periodic_distance(float(x[0]), float(x[1]))
        inside = dist < self.radius
        if not inside.any():
            inside = dist == dist.min()
        return d[:, inside].mean(axis=1)


def drift_recenter_path(
    u_series: tuple[FieldSeries, FieldSeries],
    radius: float = 1.0,
    t_start: float | None = None,
    t_end: float | None = None,
    start=(0.0, 0.0),
    substeps: int = 1,
    method: str = "spectral",
) -> RecenterPath:
    """Integrate ``dG/dt = average of u over the ball B_radius(G(t))``.

    Two-stage (Heun) steps between consecutive sample times, each split
    into ``substeps``; ``t_end < t_start`` integrates backward.  Returns
    the path, the drift at every node and (via ``speed_sup``) ``sup |dG/dt|``.
    """
    avg = BallAverager(u_series, radius, method)
    ts = avg.times
    t_start = float(ts[0]) if t_start is None else float(t_start)
    t_end = float(ts[-1]) if t_end is None else float(t_end)
    lo, hi = min(t_start, t_end), max(t_start, t_end)
    inner = ts[(ts > lo) & (ts < hi)]
    knots = np.unique(np.concatenate([[lo, hi], inner]))
    if t_end < t_start:
        knots = knots[::-1]
    nodes = [knots[0]]
    for a, b in zip(knots[:-1], knots[1:]):
        nodes.extend(a + (b - a) * np.arange(1, substeps + 1) / substeps)
    nodes = np.array(nodes)
    pts = np.zeros((len(nodes), 2))
    vel = np.zeros((len(nodes), 2))
    pts[0] = start
    vel[0] = avg(nodes[0], pts[0])
    for i in range(1, len(nodes)):
        h = nodes[i] - nodes[i - 1]
        k1 = vel[i - 1]
        pred = pts[i - 1] + h * k1
        k2 = avg(nodes[i], pred)
        pts[i] = pts[i - 1] + 0.5 * h * (k1 + k2)
        vel[i] = avg(nodes[i], pts[i])
    return RecenterPath(nodes, pts, vel)


# --------------------------------------------------------------------------
# oscillation cascade


@dataclass
class OscillationTrace:
    K: float
    K0: float
    t0: float
    x0: tuple[float, float]
    radii: list[float] = field(default_factory=list)
    sup: list[float] = field(default_factory=list)
    inf: list[float] = field(default_factory=list)
    osc: list[float] = field(default_factory=list)
    U: list[float] = field(default_factory=list)
    forcing: list[float] = field(default_factory=list)
    paths: list[RecenterPath | None] = field(default_factory=list)
    truncated: bool = False
    q: float = math.nan
    r_estimate: float = math.nan
    r_proof: float = math.nan
    zeta: float = math.nan

    @property
    def depth(self) -> int:
        return len(self.osc)

    @property
    def osc_renormalised(self) -> list[float]:
        """Oscillation after the per-level affine renormalisation by ``1/q``."""
        if not math.isfinite(self.q) or self.q <= 0:
            return list(self.osc)
        return [o / self.q**k for k, o in enumerate(self.osc)]

    @property
    def K_admissible(self) -> bool:
        """``K <= 1 - zeta / 2`` for the fitted ``zeta``."""
        return bool(math.isfinite(self.zeta) and self.K <= 1.0 - self.zeta / 2.0)


def _disk_stencil(rings: int = 8, spokes: int = 24) -> np.ndarray:
    pts = [np.zeros(2)]
    for i in range(1, rings + 1):
        rr = i / rings
        ang = TWO_PI * (np.arange(spokes) + 0.5 * (i % 2)) / spokes
        pts.extend(np.stack([rr * np.cos(ang), rr * np.sin(ang)], axis=1))
    return np.array(pts)


def _ball_extrema(f: BoundaryField, centre, radius: float, node_cells: float = 4.0) -> tuple[float, float]:
    """Max and min of ``f`` over a periodic ball.

    Balls wider than ``node_cells`` grid spacings use the grid nodes inside;
    smaller balls evaluate the trigonometric interpolant on a polar stencil.
    """
    g = f.grid
    h = max(g.spacing)
    if radius >= node_cells * h:
        inside = g.periodic_distance(float(centre[0]), float(centre[1])) <= radius
        v = f.values[inside]
        return float(v.max()), float(v.min())
    pts = np.asarray(centre) + radius * _disk_stencil()
    k1, k2 = g.wavenumbers
    c = f.coeffs.copy()
    c[g.nyquist[0]] = 0.0
    c[g.nyquist[1]] = 0.0
    keep = c != 0
    if not keep.any():
        return 0.0, 0.0
    ph = np.exp(1j * (np.outer(pts[:, 0], k1[keep]) + np.outer(pts[:, 1], k2[keep])))
    v = (ph @ c[keep]).real
    return float(v.max()), float(v.min())


def _fit_ratio(osc: list[float], floor: float = 1e-12) -> float:
    """Per-level decay ratio from a least-squares fit of ``log osc`` on ``k``."""
    ks = np.array([k for k, o in enumerate(osc) if o > floor], dtype=float)
    if len(ks) < 2:
        return math.nan
    y = np.log([osc[int(k)] for k in ks])
    slope = np.polyfit(ks, y, 1)[0]
    return float(math.exp(slope))


def cascade(
    theta_series: FieldSeries,
    u_series: tuple[FieldSeries, FieldSeries] | None,
    f_series: FieldSeries | None,
    K: float,
    depth: int,
    t0: float | None = None,
    x0=(0.0, 0.0),
    min_radius_cells: float = 0.125,
    substeps: int = 1,
) -> OscillationTrace:
    """Zoom by ``K`` per level around ``(t0, x0)``, following the averaged drift.

    Level ``k`` has physical scale ``rho_k = K0 K^k``.  Its centre path
    ``X_k`` solves the drift ODE with ball radius ``rho_k`` backward from
    ``X_k(t0) = x0`` (level 0 is not recentred).  The oscillation is taken
    over ``[t0 - rho_k / 4, t0]`` and balls of radius ``rho_k / 4`` around
    ``X_k``, normalised by ``sup |theta|`` over the window.

    ``U_k`` is the sup over ``[t0 - 2 rho_k, t0]`` of the level-k recentring
    speed ``K |dX_k/dt - dX_{k-1}/dt|``.  With ``q`` the fitted per-level
    oscillation ratio, ``r_estimate = log q / log K`` and the conservative
    ``r_proof = log q / log D`` with ``D = min(K / 4, 1 / (8 max U))``.
    ``forcing[k]`` is the rescaled forcing size
    ``rho_k / (norm q^k) * (rho_k^-1/2 ||g||_inf + [g]_1/2)`` with
    ``g = (-Lap)^(-1/4) f``, maximised over the level window.
    """
    if not 0 < K < 1:
        raise ValueError("dilation factor K must lie in (0, 1)")
    if depth < 1:
        raise ValueError("depth must be at least 1")
    t0 = float(theta_series.times[-1]) if t0 is None else float(t0)
    K0 = window_scale(t0)
    if not theta_series.covers(t0 - 2 * K0, t0):
        raise ValueError("theta series does not cover the normalised window [-2, 0]")
    grid = theta_series.grid
    h = max(grid.spacing)
    idx = _window_samples(theta_series, t0 - 2 * K0, t0)
    norm = max(theta_series.fields[i].sup() for i in idx)
    trace = OscillationTrace(K=K, K0=K0, t0=t0, x0=(float(x0[0]), float(x0[1])))
    if 2.0 * K0 >= math.pi:
        raise ValueError("ball B_2 wraps around the torus")

    forcing_norms = None
    if f_series is not None:
        forcing_norms = []
        for t, f in f_series:
            g = fractional_laplacian(f - f.mean, -0.25)
            rep = holder_norm(g, 0.5)
            forcing_norms.append((t, g.sup(), rep.seminorm))

    prev_path: RecenterPath | None = None
    prev_avg: BallAverager | None = None
    for k in range(depth + 1):
        rho = K0 * K**k
        if rho / 4.0 < min_radius_cells * h:
            warnings.warn(f"cascade truncated at level {k}: radius below grid resolution", stacklevel=2)
            trace.truncated = True
            break
        path = None
        avg = None
        U = 0.0
        if k > 0 and u_series is not None:
            path = drift_recenter_path(
                u_series, radius=rho, t_start=t0, t_end=t0 - 2 * rho, start=x0, substeps=substeps
            )
            avg = BallAverager(u_series, rho)
            speeds = []
            for t, X, V in zip(path.times, path.points, path.velocity):
                Vp = prev_avg(t, prev_path.at(t)) if prev_path is not None else np.zeros(2)
                speeds.append(K * float(np.hypot(*(V - Vp))))
            U = max(speeds)
        centre = (lambda t: np.asarray(x0, dtype=float)) if path is None else path.at
        a = t0 - rho / 4.0
        ts = [a] + [float(t) for t in theta_series.times if a < t <= t0]
        hi, lo = -math.inf, math.inf
        for t in ts:
            mx, mn = _ball_extrema(theta_series.at(t), centre(t), rho / 4.0)
            hi, lo = max(hi, mx), min(lo, mn)
        if norm > 0:
            hi, lo = hi / norm, lo / norm
        else:
            hi = lo = 0.0
        trace.radii.append(rho)
        trace.sup.append(hi)
        trace.inf.append(lo)
        trace.osc.append(max(hi - lo, 0.0))
        trace.U.append(U)
        trace.paths.append(path)
        prev_path, prev_avg = path, avg

    q = _fit_ratio(trace.osc)
    trace.q = q
    if math.isfinite(q) and 0 < q:
        trace.r_estimate = math.log(q) / math.log(K)
        trace.zeta = 4.0 * (1.0 - q)
        Umax = max(trace.U, default=0.0)
        D = min(K / 4.0, 1.0 / (8.0 * Umax)) if Umax > 0 else K / 4.0
        trace.r_proof = math.log(q) / math.log(D)
    if forcing_norms is not None:
        qq = q if (math.isfinite(q) and q > 0) else 1.0
        for k, rho in enumerate(trace.radii):
            window = [(s, g) for t, s, g in forcing_norms if t0 - 2 * rho - 1e-12 <= t <= t0 + 1e-12]
            if not window or norm == 0:
                trace.forcing.append(0.0)
                continue
            val = max(rho ** -0.5 * s + g for s, g in window)
            trace.forcing.append(rho / (norm * qq**k) * val)
    return trace


# --------------------------------------------------------------------------
# forcing and energy-inequality audits


@dataclass(frozen=True)
class ForcingSeries:
    times: np.ndarray
    reports: list[NormReport]

    @property
    def M(self) -> float:
        return max((r.value for r in self.reports), default=0.0)


def forcing_monitor(f_series: FieldSeries, tol: float = 1e-10) -> ForcingSeries:
    """Per-time ``C^(1/2)`` norm of ``(-Lap)^(-1/4) f``."""
    reports = []
    for t, f in f_series:
        if not has_zero_mean(f, tol):
            raise ValueError(f"forcing at t={t} has nonzero mean")
        g = fractional_laplacian(f - f.mean, -0.25)
        rep = holder_norm(g, 0.5)
        reports.append(NormReport("forcing_c_half", rep.value, s=0.5, resolution=rep.resolution, seminorm=rep.seminorm))
    return ForcingSeries(f_series.times.copy(), reports)


def energy_inequality_audit(theta_series: FieldSeries, levels, constant: float | None = None) -> list[InequalityVerdict]:
    """Per level ``c``: ``d/dt int theta_c^2 + ||(-Lap)^(1/4) theta_c||^2 <= C (int theta_c + |{theta_c > 0}|)``.

    Time derivatives are centred differences at interior samples; the verdict
    records the sample with the largest ratio, so the fitted constant is the
    least one valid at every sample.
    """
    ts = theta_series.times
    if len(ts) < 3:
        raise ValueError("need at least three samples")
    out = []
    for c in levels:
        mass = np.zeros(len(ts))
        diss = np.zeros(len(ts))
        lin = np.zeros(len(ts))
        for i, f in enumerate(theta_series.fields):
            mass[i], diss[i] = truncation_pieces(f, c)
            v = np.maximum(f.values - c, 0.0)
            lin[i] = float((v.sum() + np.count_nonzero(v)) * f.grid.cell_area)
        best = (0.0, 0.0, -math.inf)
        for i in range(1, len(ts) - 1):
            dmass = (mass[i + 1] - mass[i - 1]) / (ts[i + 1] - ts[i - 1])
            lhs, rhs = dmass + diss[i], lin[i]
            ratio = lhs / rhs if rhs > 0 else (math.inf if lhs > 1e-14 else -math.inf)
            if ratio > best[2]:
                best = (lhs, rhs, ratio)
        lhs, rhs, _ = best
        out.append(InequalityVerdict.judge(f"energy_inequality_c={c:g}", max(lhs, 0.0), rhs, constant))
    return out

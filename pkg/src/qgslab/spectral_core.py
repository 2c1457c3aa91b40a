"""Grids, Fourier multipliers, dyadic bands and the slab Neumann solver.

Conventions used throughout the package:

* the horizontal domain is the torus ``[0, 2pi)^2`` sampled on an ``n1 x n2``
  grid, with ``values[i1, i2]`` living at ``(i1 * h1, i2 * h2)``;
* Fourier coefficients are ``fft2(values) / (n1 * n2)``, i.e. the normalised
  coefficients ``(2pi)^-2 * integral(f * exp(-i k.x))``;
* the vertical direction is the slab ``[0, z_max]`` sampled at the uniform
  cosine-collocation nodes ``z_j = j * z_max / (nz - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid2:
    """Uniform periodic grid on ``[0, 2pi)^2``."""

    n1: int
    n2: int

    def __post_init__(self):
        for name, n in (("n1", self.n1), ("n2", self.n2)):
            if int(n) != n or n < 8 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 8, got {n}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    @property
    def spacing(self) -> tuple[float, float]:
        return (TWO_PI / self.n1, TWO_PI / self.n2)

    @property
    def cell_area(self) -> float:
        return (TWO_PI / self.n1) * (TWO_PI / self.n2)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x1 = np.arange(self.n1) * (TWO_PI / self.n1)
        x2 = np.arange(self.n2) * (TWO_PI / self.n2)
        return np.meshgrid(x1, x2, indexing="ij")

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        k1 = np.fft.fftfreq(self.n1, 1.0 / self.n1)
        k2 = np.fft.fftfreq(self.n2, 1.0 / self.n2)
        return np.meshgrid(k1, k2, indexing="ij")

    @cached_property
    def ksq(self) -> np.ndarray:
        k1, k2 = self.wavenumbers
        return k1 * k1 + k2 * k2

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.ksq)

    @cached_property
    def nyquist(self) -> tuple[np.ndarray, np.ndarray]:
        """Masks of the self-conjugate Nyquist rows/columns along each axis."""
        k1, k2 = self.wavenumbers
        return (k1 == -self.n1 // 2, k2 == -self.n2 // 2)

    def periodic_offsets(self, x1: float, x2: float) -> tuple[np.ndarray, np.ndarray]:
        """Signed offsets of every node from ``(x1, x2)``, wrapped into ``[-pi, pi)``."""
        g1, g2 = self.coords
        return (g1 - x1 + np.pi) % TWO_PI - np.pi, (g2 - x2 + np.pi) % TWO_PI - np.pi

    def periodic_distance(self, x1: float, x2: float) -> np.ndarray:
        """Distance on the torus from every node to the point ``(x1, x2)``."""
        return np.hypot(*self.periodic_offsets(x1, x2))


class BoundaryField:
    """Real periodic scalar held in both physical and spectral form.

    Either representation may be supplied; the other is computed on first use.
    Instances are treated as immutable.
    """

    __slots__ = ("grid", "_values", "_coeffs")

    def __init__(self, grid: TorusGrid2, values=None, coeffs=None):
        if (values is None) == (coeffs is None):
            raise ValueError("supply exactly one of values or coeffs")
        self.grid = grid
        self._values = None
        self._coeffs = None
        if values is not None:
            values = np.asarray(values, dtype=float)
            if values.shape != grid.shape:
                raise ValueError(f"values shape {values.shape} != grid {grid.shape}")
            self._values = values
        else:
            coeffs = np.asarray(coeffs, dtype=complex)
            if coeffs.shape != grid.shape:
                raise ValueError(f"coeffs shape {coeffs.shape} != grid {grid.shape}")
            self._coeffs = coeffs

    @classmethod
    def from_function(cls, grid: TorusGrid2, func) -> "BoundaryField":
        x1, x2 = grid.coords
        return cls(grid, values=np.broadcast_to(func(x1, x2), grid.shape).copy())

    @classmethod
    def zeros(cls, grid: TorusGrid2) -> "BoundaryField":
        return cls(grid, values=np.zeros(grid.shape))

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            self._values = np.fft.ifft2(self._coeffs * self.grid.size).real
        return self._values

    @property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            self._coeffs = np.fft.fft2(self._values) / self.grid.size
        return self._coeffs

    @property
    def mean(self) -> float:
        return float(self.coeffs[0, 0].real)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2(self) -> float:
        return float(np.sqrt(np.sum(self.values**2) * self.grid.cell_area))

    def lp(self, p: float) -> float:
        if np.isinf(p):
            return self.sup()
        return float((np.sum(np.abs(self.values) ** p) * self.grid.cell_area) ** (1.0 / p))

    def with_coeffs(self, coeffs: np.ndarray) -> "BoundaryField":
        return BoundaryField(self.grid, coeffs=coeffs)

    def __add__(self, other):
        if isinstance(other, BoundaryField):
            return BoundaryField(self.grid, values=self.values + other.values)
        return BoundaryField(self.grid, values=self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, BoundaryField):
            return BoundaryField(self.grid, values=self.values - other.values)
        return BoundaryField(self.grid, values=self.values - other)

    def __mul__(self, other):
        if isinstance(other, BoundaryField):
            return BoundaryField(self.grid, values=self.values * other.values)
        return BoundaryField(self.grid, values=self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return BoundaryField(self.grid, values=-self.values)

    def __repr__(self):
        return f"BoundaryField({self.grid.n1}x{self.grid.n2}, sup={self.sup():.3e})"


def _zero_mean_scale(f: BoundaryField) -> float:
    return max(1.0, float(np.max(np.abs(f.coeffs))))


def has_zero_mean(f: BoundaryField, tol: float = 1e-12) -> bool:
    return abs(f.coeffs[0, 0]) <= tol * _zero_mean_scale(f)


def apply_multiplier(f: BoundaryField, symbol: np.ndarray, odd_axis: int | None = None) -> BoundaryField:
    """Multiply the coefficients by ``symbol``.

    ``odd_axis`` marks symbols that are odd in ``k_axis``; their Nyquist
    row/column is zeroed so the output stays real.
    """
    c = f.coeffs * symbol
    if odd_axis is not None:
        c = np.where(f.grid.nyquist[odd_axis - 1], 0.0, c)
    return BoundaryField(f.grid, coeffs=c)


def fractional_laplacian(f: BoundaryField, alpha: float) -> BoundaryField:
    """``(-Laplacian)^alpha`` as the symbol ``|k|^(2 alpha)`` with the mean mode removed."""
    if not -1.0 <= alpha <= 2.0:
        raise ValueError(f"alpha={alpha} outside [-1, 2]")
    if alpha < 0 and not has_zero_mean(f):
        raise ValueError("mean-mode singularity: negative power of the Laplacian on a field with nonzero mean")
    kabs = f.grid.kabs
    with np.errstate(divide="ignore"):
        sym = np.where(kabs > 0, kabs ** (2.0 * alpha), 0.0)
    return apply_multiplier(f, sym)


def riesz_transform(f: BoundaryField, axis: int) -> BoundaryField:
    """Riesz transform with symbol ``i k_axis / |k|``."""
    if axis not in (1, 2):
        raise ValueError("axis must be 1 or 2")
    k = f.grid.wavenumbers[axis - 1]
    kabs = f.grid.kabs
    with np.errstate(invalid="ignore", divide="ignore"):
        sym = np.where(kabs > 0, 1j * k / kabs, 0.0)
    return apply_multiplier(f, sym, odd_axis=axis)


def partial(f: BoundaryField, axis: int, order: int = 1) -> BoundaryField:
    """Spectral derivative along ``axis`` (1 or 2)."""
    if axis not in (1, 2):
        raise ValueError("axis must be 1 or 2")
    k = f.grid.wavenumbers[axis - 1]
    sym = (1j * k) ** order
    return apply_multiplier(f, sym, odd_axis=axis if order % 2 else None)


def gradient(f: BoundaryField) -> tuple[BoundaryField, BoundaryField]:
    return partial(f, 1), partial(f, 2)


def perp_gradient(f: BoundaryField) -> tuple[BoundaryField, BoundaryField]:
    """``(-d2 f, d1 f)``."""
    d1, d2 = gradient(f)
    return -d2, d1


def laplacian(f: BoundaryField) -> BoundaryField:
    return apply_multiplier(f, -f.grid.ksq)


def poisson_extend(theta: BoundaryField, z: float) -> BoundaryField:
    """Convolution with the Poisson kernel at height ``z`` (symbol ``exp(-z|k|)``)."""
    if z < 0:
        raise ValueError(f"height z={z} must be nonnegative")
    if z == 0:
        return BoundaryField(theta.grid, coeffs=theta.coeffs.copy())
    return apply_multiplier(theta, np.exp(-z * theta.grid.kabs))


# --------------------------------------------------------------------------
# Littlewood-Paley bands


def band_index(grid: TorusGrid2) -> np.ndarray:
    """Sharp dyadic band of every mode: ``2^(j-1) < |k| <= 2^j``; -1 marks k=0."""
    q = np.rint(grid.ksq).astype(np.int64)
    idx = np.full(q.shape, -1, dtype=np.int64)
    j = 0
    while np.any((idx < 0) & (q > 0)):
        hi = 4**j
        lo = 4 ** (j - 1) if j > 0 else 0
        idx[(q > lo) & (q <= hi)] = j
        j += 1
    return idx


@dataclass
class DyadicBandSet:
    """Littlewood-Paley pieces ``Delta_j f`` for ``j_min <= j <= j_max``."""

    j_min: int
    j_max: int
    bands: dict[int, BoundaryField]
    mean: float

    def __getitem__(self, j: int) -> BoundaryField:
        return self.bands[j]

    def reconstruct(self) -> BoundaryField:
        grid = next(iter(self.bands.values())).grid
        total = np.full(grid.shape, self.mean)
        for b in self.bands.values():
            total = total + b.values
        return BoundaryField(grid, values=total)

    def nonzero(self, tol: float = 1e-12) -> list[int]:
        return [j for j, b in self.bands.items() if np.max(np.abs(b.coeffs)) > tol]


def lp_decompose(f: BoundaryField) -> DyadicBandSet:
    idx = band_index(f.grid)
    j_max = int(idx.max())
    c = f.coeffs
    bands = {j: BoundaryField(f.grid, coeffs=np.where(idx == j, c, 0.0)) for j in range(j_max + 1)}
    return DyadicBandSet(0, j_max, bands, float(c[0, 0].real))


# --------------------------------------------------------------------------
# Slab


@dataclass(frozen=True)
class SlabGrid3:
    """Torus times ``[0, z_max]`` with uniform cosine-collocation nodes."""

    torus: TorusGrid2
    nz: int
    z_max: float

    def __post_init__(self):
        if int(self.nz) != self.nz or self.nz < 8:
            raise ValueError(f"nz must be an integer >= 8, got {self.nz}")
        if not self.z_max > 0:
            raise ValueError(f"z_max must be positive, got {self.z_max}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nz, self.torus.n1, self.torus.n2)

    @cached_property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.z_max, self.nz)

    @property
    def dz(self) -> float:
        return self.z_max / (self.nz - 1)

    @cached_property
    def z_weights(self) -> np.ndarray:
        """Trapezoid weights; the cosine transform is orthogonal under them."""
        w = np.full(self.nz, self.dz)
        w[0] = w[-1] = 0.5 * self.dz
        return w

    @cached_property
    def vertical_wavenumbers(self) -> np.ndarray:
        return np.arange(self.nz) * np.pi / self.z_max


def dct1(a: np.ndarray, axis: int = 0) -> np.ndarray:
    return sfft.dct(a, type=1, axis=axis)


def idct1(a: np.ndarray, axis: int = 0) -> np.ndarray:
    return sfft.idct(a, type=1, axis=axis)


class SlabField:
    """Real scalar on the slab nodes, shape ``(nz, n1, n2)``."""

    def __init__(self, grid: SlabGrid3, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} != slab {grid.shape}")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: SlabGrid3) -> "SlabField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: SlabGrid3, func) -> "SlabField":
        x1, x2 = grid.torus.coords
        z = grid.z[:, None, None]
        return cls(grid, np.broadcast_to(func(z, x1[None], x2[None]), grid.shape).copy())

    @property
    def coeffs(self) -> np.ndarray:
        """Per-level horizontal Fourier coefficients."""
        return np.fft.fft2(self.values, axes=(1, 2)) / self.grid.torus.size

    def level(self, j: int) -> BoundaryField:
        return BoundaryField(self.grid.torus, values=self.values[j])

    def slice_at(self, z0: float) -> BoundaryField:
        return trace_slice(self, z0)

    def integral_sq(self) -> float:
        """``||u||^2`` over the slab (trapezoid in z)."""
        per_level = np.sum(self.values**2, axis=(1, 2)) * self.grid.torus.cell_area
        return float(np.dot(self.grid.z_weights, per_level))

    def __add__(self, other: "SlabField") -> "SlabField":
        return SlabField(self.grid, self.values + other.values)

    def __sub__(self, other: "SlabField") -> "SlabField":
        return SlabField(self.grid, self.values - other.values)


class HarmonicSlabField(SlabField):
    """Harmonic extension kept in closed form: ``coef(k) * exp(-z|k|) / |k|`` per mode.

    Node values are materialised for the grid, but slices, vertical
    derivatives and the Laplacian are evaluated from the exact profile.
    """

    def __init__(self, grid: SlabGrid3, theta: BoundaryField):
        self.theta = theta
        self.grid = grid
        kabs = grid.torus.kabs
        with np.errstate(divide="ignore", invalid="ignore"):
            self._base = np.where(kabs > 0, theta.coeffs / kabs, 0.0)
        vals = np.stack([self._profile(z, 0) for z in grid.z])
        super().__init__(grid, vals)

    def _profile(self, z: float, dz_order: int) -> np.ndarray:
        kabs = self.grid.torus.kabs
        c = self._base * np.exp(-z * kabs) * (-kabs) ** dz_order
        return np.fft.ifft2(c * self.grid.torus.size).real

    def slice_at(self, z0: float) -> BoundaryField:
        _check_height(self.grid, z0)
        return BoundaryField(self.grid.torus, values=self._profile(z0, 0))

    def dz_at(self, z0: float, order: int = 1) -> BoundaryField:
        _check_height(self.grid, z0)
        return BoundaryField(self.grid.torus, values=self._profile(z0, order))

    def laplacian_at(self, z0: float) -> BoundaryField:
        """Laplacian from the closed-form vertical and horizontal second derivatives."""
        return self.dz_at(z0, 2) + laplacian(self.slice_at(z0))


def _check_height(grid: SlabGrid3, z0: float):
    if not 0.0 <= z0 <= grid.z_max:
        raise ValueError(f"height z0={z0} outside [0, {grid.z_max}]")


def harmonic_neumann_extension(theta: BoundaryField, grid: SlabGrid3) -> HarmonicSlabField:
    """Harmonic ``psi`` on the half-space with ``-d_z psi(0) = theta``."""
    if theta.grid != grid.torus:
        raise ValueError("theta grid does not match slab torus")
    if not has_zero_mean(theta):
        raise ValueError("theta must have zero mean: the k=0 Neumann problem has no decaying solution")
    return HarmonicSlabField(grid, theta)


def neumann_symbol(grid: SlabGrid3) -> np.ndarray:
    """Eigenvalues ``-(m pi / z_max)^2 - |k|^2`` of the cosine/Fourier Laplacian, shape (nz, n1, n2)."""
    mz = grid.vertical_wavenumbers[:, None, None]
    return -(mz**2) - grid.torus.ksq[None]


def solve_neumann_poisson(omega: SlabField) -> SlabField:
    """Solve ``Laplacian psi = omega`` with zero Neumann data at both ends of the slab.

    The (k=0, m=0) mode is pinned to zero.
    """
    grid = omega.grid
    spec = np.fft.fft2(dct1(omega.values, axis=0), axes=(1, 2))
    sym = neumann_symbol(grid)
    sym[0, 0, 0] = 1.0
    spec = spec / sym
    spec[0, 0, 0] = 0.0
    return SlabField(grid, idct1(np.fft.ifft2(spec, axes=(1, 2)).real, axis=0))


def slab_laplacian(u: SlabField) -> SlabField:
    """Cosine/Fourier spectral Laplacian (meaningful for Neumann-compatible fields)."""
    spec = np.fft.fft2(dct1(u.values, axis=0), axes=(1, 2)) * neumann_symbol(u.grid)
    return SlabField(u.grid, idct1(np.fft.ifft2(spec, axes=(1, 2)).real, axis=0))


def slab_dz(u: SlabField) -> SlabField:
    """Vertical derivative of the cosine interpolant (sine series, zero at both ends)."""
    grid = u.grid
    a = dct1(u.values, axis=0)
    m = grid.vertical_wavenumbers
    # d/dz cos(m z) = -m sin(m z); evaluate the sine series on the nodes directly
    basis = -m[None, :] * np.sin(np.outer(grid.z, m))
    norm = np.full(grid.nz, 2.0 * (grid.nz - 1))
    coeff = a / norm[:, None, None]
    coeff[1:-1] *= 2.0
    return SlabField(grid, np.tensordot(basis, coeff, axes=(1, 0)))


def trace_slice(u: SlabField, z0: float) -> BoundaryField:
    """Horizontal slice at height ``z0``: exact on nodes, 4-point Lagrange otherwise."""
    grid = u.grid
    _check_height(grid, z0)
    if isinstance(u, HarmonicSlabField):
        return u.slice_at(z0)
    z = grid.z
    hit = np.flatnonzero(z == z0)
    if hit.size:
        return BoundaryField(grid.torus, values=u.values[hit[0]].copy())
    j = int(np.searchsorted(z, z0)) - 1
    lo = min(max(j - 1, 0), grid.nz - 4)
    nodes = range(lo, lo + 4)
    out = np.zeros(grid.torus.shape)
    for a in nodes:
        w = 1.0
        for b in nodes:
            if b != a:
                w *= (z0 - z[b]) / (z[a] - z[b])
        out += w * u.values[a]
    return BoundaryField(grid.torus, values=out)


# --------------------------------------------------------------------------
# Snapshot format


def write_snapshot(path, field) -> None:
    """Header ``QGF1 n1 n2 [nz z_max]`` then row-major little-endian float64."""
    if isinstance(field, SlabField):
        g = field.grid
        header = f"QGF1 {g.torus.n1} {g.torus.n2} {g.nz} {float(g.z_max)!r}\n"
    elif isinstance(field, BoundaryField):
        header = f"QGF1 {field.grid.n1} {field.grid.n2}\n"
    else:
        raise TypeError(f"cannot snapshot {type(field).__name__}")
    data = np.ascontiguousarray(field.values, dtype="<f8").tobytes()
    Path(path).write_bytes(header.encode("utf-8") + data)


def read_snapshot(path):
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError("snapshot header missing")
    parts = raw[:nl].decode("utf-8").split()
    if not parts or parts[0] != "QGF1" or len(parts) not in (3, 5):
        raise ValueError(f"bad snapshot header: {raw[:nl]!r}")
    torus = TorusGrid2(int(parts[1]), int(parts[2]))
    body = np.frombuffer(raw[nl + 1 :], dtype="<f8").astype(float)
    if len(parts) == 3:
        return BoundaryField(torus, values=body.reshape(torus.shape))
    grid = SlabGrid3(torus, int(parts[3]), float(parts[4]))
    return SlabField(grid, body.reshape(grid.shape))


# --------------------------------------------------------------------------
# Time series of boundary fields


class FieldSeries:
    """Boundary fields sampled at increasing times, linear in between."""

    def __init__(self, times, fields):
        times = np.asarray(times, dtype=float)
        fields = list(fields)
        if times.ndim != 1 or len(times) != len(fields) or len(times) == 0:
            raise ValueError("need one field per time and at least one sample")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        grid = fields[0].grid
        if any(f.grid != grid for f in fields):
            raise ValueError("all fields must share one grid")
        self.times = times
        self.fields = fields
        self.grid = grid

    @classmethod
    def constant(cls, field: BoundaryField, times) -> "FieldSeries":
        return cls(times, [field] * len(times))

    @classmethod
    def from_function(cls, grid: TorusGrid2, times, func) -> "FieldSeries":
        """``func(t, x1, x2)`` sampled at every time."""
        x1, x2 = grid.coords
        return cls(times, [BoundaryField(grid, values=np.broadcast_to(func(t, x1, x2), grid.shape).copy()) for t in times])

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        return iter(zip(self.times, self.fields))

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def covers(self, a: float, b: float, tol: float = 1e-9) -> bool:
        return bool(self.times[0] <= a + tol and self.times[-1] >= b - tol)

    def _bracket(self, t: float):
        if not self.covers(t, t):
            raise ValueError(f"time {t} outside series span {self.span}")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self.times) - 2) if len(self.times) > 1 else 0
        if len(self.times) == 1:
            return 0, 0, 0.0
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return i, i + 1, float(min(max(w, 0.0), 1.0))

    def at(self, t: float) -> BoundaryField:
        i, j, w = self._bracket(t)
        if w == 0.0:
            return self.fields[i]
        if w == 1.0:
            return self.fields[j]
        return BoundaryField(self.grid, values=(1 - w) * self.fields[i].values + w * self.fields[j].values)

    def map(self, func) -> "FieldSeries":
        return FieldSeries(self.times, [func(f) for f in self.fields])

    def save(self, directory, name: str, steps=None) -> list[Path]:
        """Write ``<name>_<step>.qgf`` files plus ``<name>_index.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        steps = range(len(self)) if steps is None else steps
        paths = []
        lines = ["step,t"]
        for step, (t, f) in zip(steps, self):
            p = directory / f"{name}_{int(step):06d}.qgf"
            write_snapshot(p, f)
            paths.append(p)
            lines.append(f"{int(step)},{t:.17g}")
        index = directory / f"{name}_index.csv"
        index.write_text("\n".join(lines) + "\n")
        return [index] + paths

    @classmethod
    def load(cls, directory, name: str) -> "FieldSeries":
        directory = Path(directory)
        rows = (directory / f"{name}_index.csv").read_text().split()[1:]
        times, fields = [], []
        for row in rows:
            step, t = row.split(",")
            times.append(float(t))
            fields.append(read_snapshot(directory / f"{name}_{int(step):06d}.qgf"))
        return cls(times, fields)


def integrate_piecewise_linear(times: np.ndarray, values: np.ndarray, a: float, b: float) -> float:
    """Integral over ``[a, b]`` of the piecewise-linear interpolant of samples."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if b < a:
        raise ValueError("empty interval")
    if len(times) == 1:
        return float(values[0] * (b - a))
    inner = (times > a) & (times < b)
    t = np.concatenate([[a], times[inner], [b]])
    v = np.concatenate([[np.interp(a, times, values)], values[inner], [np.interp(b, times, values)]])
    return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)))

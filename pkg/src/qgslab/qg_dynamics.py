"""Time integration of the coupled interior/boundary system.

The solver evolves the boundary trace ``theta = -d_z psi(z=0)`` and the
interior potential vorticity ``pv = Laplacian psi`` on the slab.  Every stage
rebuilds the stream function from the pair:

* ``psi1`` is the harmonic extension of ``theta`` with closed-form profile
  ``exp(-z|k|)/|k|`` per mode, evaluated on the z-nodes;
* ``psi2`` solves the Neumann problem ``Laplacian psi2 = pv`` by cosine/Fourier
  diagonalisation.

The boundary equation sees the surface stream function
``psi_s = theta/|k| + G[pv]``, where ``G[pv] = -sum_j w_j exp(-z_j|k|)/|k| pv_j`` is
the trapezoid form of the Neumann Green representation of ``psi2(z=0)``.  With
that choice the semi-discrete system satisfies the energy identity
``d/dt (E/2) = -||grad psi_s||^2`` exactly, so the measured balance residual is
pure time-integration error.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.fft as sfft

from .analysis_norms import InequalityVerdict, NormReport, vector_besov_norm
from .spectral_core import (
    TWO_PI,
    BoundaryField,
    SlabField,
    SlabGrid3,
    TorusGrid2,
    dct1,
    harmonic_neumann_extension,
    has_zero_mean,
    partial,
    slab_dz,
    solve_neumann_poisson,
    trace_slice,
)


class CFLError(ValueError):
    """Raised when ``max|u| dt / dx`` exceeds one."""


class SolverAbort(RuntimeError):
    """Non-finite values appeared; ``last_state`` holds the last good state."""

    def __init__(self, message: str, last_state: "QGState", series: "BudgetSeries"):
        super().__init__(message)
        self.last_state = last_state
        self.series = series


@dataclass(frozen=True)
class RunConfig:
    n1: int = 64
    n2: int = 64
    nz: int = 16
    z_max: float = 2 * math.pi
    dt: float = 2e-3
    t_end: float = 1.0
    dealias: float = 2.0 / 3.0
    init: str = "random"
    theta_amp: float = 1.0
    pv_amp: float = 1.0
    k_max: int = 6
    mz_max: int = 3
    cadence: int = 10
    seed: int = 0
    forcing: bool = True
    advection: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.dealias <= 1:
            raise ValueError("dealias must lie in (0, 1]")
        if not self.t_end >= 0:
            raise ValueError("t_end must be nonnegative")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")

    @property
    def slab(self) -> SlabGrid3:
        return SlabGrid3(TorusGrid2(self.n1, self.n2), self.nz, self.z_max)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class EnergyBudget:
    t: float
    kinetic: float
    boundary_dissipation: float
    pv_l2: float
    pv_l4: float
    pv_linf: float
    trace_l2: float

    def is_valid(self) -> bool:
        vals = [getattr(self, f.name) for f in fields(self)]
        return all(math.isfinite(v) for v in vals) and all(v >= 0 for v in vals[1:])


BUDGET_COLUMNS = [f.name for f in fields(EnergyBudget)]


class BudgetSeries(list):
    """List of ``EnergyBudget`` records with CSV persistence."""

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(b, name) for b in self])

    def to_csv(self, path=None) -> str:
        lines = [",".join(BUDGET_COLUMNS)]
        for b in self:
            lines.append(",".join(f"{getattr(b, c):.17g}" for c in BUDGET_COLUMNS))
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "BudgetSeries":
        rows = Path(path).read_text().strip().splitlines()
        header = rows[0].split(",")
        if header != BUDGET_COLUMNS:
            raise ValueError(f"unexpected budget columns {header}")
        return cls(EnergyBudget(*map(float, r.split(","))) for r in rows[1:])


@dataclass
class QGState:
    t: float
    theta: BoundaryField
    pv: SlabField
    dt: float
    _psi: tuple | None = field(default=None, repr=False)

    @property
    def grid(self) -> SlabGrid3:
        return self.pv.grid

    def _reconstruct(self):
        if self._psi is None:
            self._psi = reconstruct(self.theta, self.pv)
        return self._psi

    @property
    def psi1(self) -> SlabField:
        return self._reconstruct()[0]

    @property
    def psi2(self) -> SlabField:
        return self._reconstruct()[1]


def reconstruct(theta: BoundaryField, pv: SlabField) -> tuple[SlabField, SlabField]:
    """Split ``psi = psi1 + psi2`` into harmonic and Neumann-Poisson parts."""
    return harmonic_neumann_extension(theta, pv.grid), solve_neumann_poisson(pv)


# --------------------------------------------------------------------------
# spectral kernel on half-plane (rfft) coefficients


def _phi1(x: np.ndarray) -> np.ndarray:
    out = np.ones_like(x)
    nz = x > 0
    out[nz] = -np.expm1(-x[nz]) / x[nz]
    return out


def _phi2(x: np.ndarray) -> np.ndarray:
    out = np.full_like(x, 0.5)
    small = (x > 0) & (x < 1e-3)
    big = x >= 1e-3
    xs = x[small]
    out[small] = 0.5 - xs / 6 + xs**2 / 24 - xs**3 / 120
    xb = x[big]
    out[big] = (np.expm1(-xb) + xb) / xb**2
    return out


class QGSolver:
    """Holds transform data and evaluates right-hand sides on packed coefficients.

    Only modes inside the dealiasing mask are stored: a field is an array of
    shape ``(..., M)`` holding the normalised half-plane coefficients
    ``rfft2(values) / (n1 n2)`` at the ``M`` retained wavenumbers.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.slab = config.slab
        self.torus = self.slab.torus
        n1, n2 = self.torus.shape
        self.norm = n1 * n2
        self.half_shape = (n1, n2 // 2 + 1)
        k1 = np.broadcast_to(np.fft.fftfreq(n1, 1.0 / n1)[:, None], self.half_shape)
        k2 = np.broadcast_to(np.fft.rfftfreq(n2, 1.0 / n2)[None, :], self.half_shape)
        frac = config.dealias
        mask = (
            (np.abs(k1) <= frac * n1 / 2)
            & (np.abs(k2) <= frac * n2 / 2)
            & (k1 != -n1 // 2)
            & (k2 != n2 // 2)
        )
        self.index = np.flatnonzero(mask.ravel())
        self.k1 = k1.ravel()[self.index]
        self.k2 = k2.ravel()[self.index]
        self.ksq = self.k1**2 + self.k2**2
        self.kabs = np.sqrt(self.ksq)
        with np.errstate(divide="ignore"):
            self.inv_kabs = np.where(self.kabs > 0, 1.0 / self.kabs, 0.0)
        # Hermitian weights for inner products over the full plane
        self.herm = np.where((self.k2 == 0) | (self.k2 == n2 // 2), 1.0, 2.0)
        z = self.slab.z
        self.w = self.slab.z_weights
        self.decay = np.exp(-z[:, None] * self.kabs[None]) * self.inv_kabs[None]
        self.green = self.w[:, None] * self.decay
        eye = np.eye(self.slab.nz)
        self.cos_fwd = sfft.dct(eye, type=1, axis=0)
        self.cos_inv = sfft.idct(eye, type=1, axis=0)
        mz = self.slab.vertical_wavenumbers[:, None]
        sym = -(mz**2) - self.ksq[None]
        zero = np.flatnonzero(self.ksq == 0)
        sym[0, zero] = 1.0
        self.inv_sym = 1.0 / sym
        self.inv_sym[0, zero] = 0.0
        dt = config.dt
        x = dt * self.kabs
        self.expdt = np.exp(-x)
        self.phi1 = dt * _phi1(x)
        self.phi2 = dt * _phi2(x)
        self.dx = min(self.torus.spacing)

    # transforms -----------------------------------------------------------
    def fwd(self, a: np.ndarray) -> np.ndarray:
        lead = a.shape[:-2]
        h = sfft.rfft2(a, axes=(-2, -1)).reshape(lead + (-1,))
        return h[..., self.index] / self.norm

    def inv(self, a: np.ndarray) -> np.ndarray:
        lead = a.shape[:-1]
        full = np.zeros(lead + (self.half_shape[0] * self.half_shape[1],), dtype=complex)
        full[..., self.index] = a * self.norm
        return sfft.irfft2(full.reshape(lead + self.half_shape), s=self.torus.shape, axes=(-2, -1))

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(TWO_PI**2 * np.sum(self.herm * (a * np.conj(b)).real))

    # reconstruction -------------------------------------------------------
    def psi2(self, pv_h: np.ndarray) -> np.ndarray:
        return self.cos_inv @ (self.inv_sym * (self.cos_fwd @ pv_h))

    def psi2_surface(self, pv_h: np.ndarray) -> np.ndarray:
        return -np.einsum("jm,jm->m", self.green, pv_h)

    def psi_surface(self, theta_h: np.ndarray, pv_h: np.ndarray) -> np.ndarray:
        return theta_h * self.inv_kabs + self.psi2_surface(pv_h)

    def velocity(self, psi_h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.inv(-1j * self.k2 * psi_h), self.inv(1j * self.k1 * psi_h)

    def advect(self, psi_h: np.ndarray, q_h: np.ndarray) -> tuple[np.ndarray, float]:
        """Dealiased ``-(perp-grad psi) . grad q`` and the peak speed."""
        u, v = self.velocity(psi_h)
        qx = self.inv(1j * self.k1 * q_h)
        qy = self.inv(1j * self.k2 * q_h)
        speed = float(np.sqrt(np.max(u * u + v * v)))
        return -self.fwd(u * qx + v * qy), speed

    # right-hand sides -----------------------------------------------------
    def boundary_rhs(self, theta_h, pv_h):
        """Nonlinear part (advection plus forcing) of the boundary equation."""
        ps2 = self.psi2_surface(pv_h)
        out = np.zeros_like(theta_h)
        speed = 0.0
        if self.config.advection:
            out, speed = self.advect(theta_h * self.inv_kabs + ps2, theta_h)
        if self.config.forcing:
            out = out - self.ksq * ps2
        return out, speed

    def interior_rhs(self, theta_h, pv_h):
        if not self.config.advection:
            return np.zeros_like(pv_h), 0.0
        psi_h = theta_h[None] * self.decay + self.psi2(pv_h)
        return self.advect(psi_h, pv_h)

    def check_cfl(self, speed: float):
        c = speed * self.config.dt / self.dx
        if c > 1:
            raise CFLError(f"CFL number {c:.3f} > 1 (max|u|={speed:.3e}); reduce dt below {self.dx / speed:.3e}")

    # stepping -------------------------------------------------------------
    def step(self, theta_h, pv_h):
        """One synchronous step: ETD2RK on the boundary, SSP-RK3 in the interior."""
        dt = self.config.dt
        nb0, s0 = self.boundary_rhs(theta_h, pv_h)
        li0, s1 = self.interior_rhs(theta_h, pv_h)
        self.check_cfl(max(s0, s1))
        th_a = self.expdt * theta_h + self.phi1 * nb0
        pv_1 = pv_h + dt * li0
        nb1, _ = self.boundary_rhs(th_a, pv_1)
        li1, _ = self.interior_rhs(th_a, pv_1)
        th_new = th_a + self.phi2 * (nb1 - nb0)
        pv_2 = 0.75 * pv_h + 0.25 * (pv_1 + dt * li1)
        li2, _ = self.interior_rhs(0.5 * (theta_h + th_new), pv_2)
        pv_new = pv_h / 3.0 + (2.0 / 3.0) * (pv_2 + dt * li2)
        return th_new, pv_new

    def boundary_only_step(self, theta_h, pv_h):
        nb0, s0 = self.boundary_rhs(theta_h, pv_h)
        self.check_cfl(s0)
        th_a = self.expdt * theta_h + self.phi1 * nb0
        nb1, _ = self.boundary_rhs(th_a, pv_h)
        return th_a + self.phi2 * (nb1 - nb0)

    def interior_only_step(self, theta_h, pv_h):
        dt = self.config.dt
        li0, s = self.interior_rhs(theta_h, pv_h)
        self.check_cfl(s)
        pv_1 = pv_h + dt * li0
        pv_2 = 0.75 * pv_h + 0.25 * (pv_1 + dt * self.interior_rhs(theta_h, pv_1)[0])
        return pv_h / 3.0 + (2.0 / 3.0) * (pv_2 + dt * self.interior_rhs(theta_h, pv_2)[0])

    # diagnostics ----------------------------------------------------------
    def kinetic(self, theta_h, pv_h) -> float:
        """``||grad psi||^2`` over the slab via the Green identity for the split."""
        q1 = self.inner(theta_h * self.inv_kabs, theta_h)
        q12 = 2.0 * self.inner(theta_h, self.psi2_surface(pv_h))
        p2 = self.psi2(pv_h)
        per_level = TWO_PI**2 * np.sum(self.herm * (p2 * np.conj(pv_h)).real, axis=1)
        return q1 + q12 - float(np.dot(self.w, per_level))

    def surface_gradient_sq(self, theta_h, pv_h) -> float:
        ps = self.psi_surface(theta_h, pv_h)
        return self.inner(self.ksq * ps, ps)

    def pv_norms(self, pv_h) -> tuple[float, float, float]:
        pv = self.inv(pv_h)
        sq = pv * pv
        area = self.torus.cell_area
        l2 = np.dot(self.w, np.sum(sq, axis=(1, 2))) * area
        l4 = np.dot(self.w, np.sum(sq * sq, axis=(1, 2))) * area
        return float(np.sqrt(l2)), float(l4**0.25), float(np.sqrt(np.max(sq)))

    def budget(self, t, theta_h, pv_h, dissipation) -> EnergyBudget:
        l2, l4, linf = self.pv_norms(pv_h)
        trace = math.sqrt(max(self.inner(theta_h, theta_h), 0.0))
        return EnergyBudget(t, self.kinetic(theta_h, pv_h), dissipation, l2, l4, linf, trace)

    # state conversion -----------------------------------------------------
    def to_spectral(self, state: "QGState"):
        return self.fwd(state.theta.values), self.fwd(state.pv.values)

    def to_state(self, t, theta_h, pv_h) -> QGState:
        theta = BoundaryField(self.torus, values=self.inv(theta_h))
        return QGState(t, theta, SlabField(self.slab, self.inv(pv_h)), self.config.dt)

    def surface_fields(self, theta_h, pv_h) -> dict[str, BoundaryField]:
        """Surface drift components and the forcing ``Laplacian psi2`` at z=0."""
        ps2 = self.psi2_surface(pv_h)
        u, v = self.velocity(theta_h * self.inv_kabs + ps2)
        f = self.inv(-self.ksq * ps2) if self.config.forcing else np.zeros(self.torus.shape)
        mk = lambda a: BoundaryField(self.torus, values=a)  # noqa: E731
        return {"u1": mk(u), "u2": mk(v), "forcing": mk(f)}


# --------------------------------------------------------------------------
# initial data


def band_limited_field(grid: TorusGrid2, rng: np.random.Generator, k_max: float, amp: float) -> np.ndarray:
    """Seeded random field with modes ``1 <= |k| <= k_max``, scaled to sup ``amp``."""
    noise = rng.standard_normal(grid.shape)
    c = np.fft.fft2(noise)
    kabs = grid.kabs
    keep = (kabs >= 1) & (kabs <= k_max)
    with np.errstate(divide="ignore"):
        shape = np.where(keep, 1.0 / np.maximum(kabs, 1.0), 0.0)
    vals = np.fft.ifft2(c * shape).real
    peak = np.max(np.abs(vals))
    return vals * (amp / peak) if peak > 0 else vals


def initial_state(config: RunConfig) -> QGState:
    slab = config.slab
    torus = slab.torus
    rng = np.random.default_rng(config.seed)
    if config.init == "zero":
        theta = np.zeros(torus.shape)
        pv = np.zeros(slab.shape)
    elif config.init == "random":
        theta = band_limited_field(torus, rng, config.k_max, config.theta_amp)
        pv = np.zeros(slab.shape)
        for m in range(config.mz_max + 1):
            prof = np.cos(m * np.pi * slab.z / slab.z_max) / (1.0 + m) ** 2
            pv += prof[:, None, None] * band_limited_field(torus, rng, config.k_max, 1.0)[None]
        peak = np.max(np.abs(pv))
        if peak > 0:
            pv *= config.pv_amp / peak
    elif config.init.startswith("modes:"):
        theta, pv = _mode_list(config.init[len("modes:"):], slab)
    else:
        raise ValueError(f"unknown initial-data descriptor {config.init!r}")
    return QGState(0.0, BoundaryField(torus, values=theta), SlabField(slab, pv), config.dt)


def _mode_list(spec: str, slab: SlabGrid3):
    """``theta:k1:k2:amp;pv:m:k1:k2:amp`` cosine modes separated by semicolons."""
    x1, x2 = slab.torus.coords
    theta = np.zeros(slab.torus.shape)
    pv = np.zeros(slab.shape)
    for item in filter(None, (s.strip() for s in spec.split(";"))):
        parts = item.split(":")
        if parts[0] == "theta" and len(parts) == 4:
            k1, k2, a = int(parts[1]), int(parts[2]), float(parts[3])
            theta += a * np.cos(k1 * x1 + k2 * x2)
        elif parts[0] == "pv" and len(parts) == 5:
            m, k1, k2, a = int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4])
            prof = np.cos(m * np.pi * slab.z / slab.z_max)
            pv += a * prof[:, None, None] * np.cos(k1 * x1 + k2 * x2)[None]
        else:
            raise ValueError(f"bad mode entry {item!r}")
    return theta, pv


# --------------------------------------------------------------------------
# public operations


def _solver_for(state: QGState, **overrides) -> QGSolver:
    g = state.grid
    cfg = RunConfig(n1=g.torus.n1, n2=g.torus.n2, nz=g.nz, z_max=g.z_max, dt=state.dt, **overrides)
    return QGSolver(cfg)


def boundary_step(state: QGState, **overrides) -> BoundaryField:
    """Advance theta by one step with the interior vorticity frozen."""
    if not has_zero_mean(state.theta):
        raise ValueError("theta must have zero mean")
    solver = _solver_for(state, **overrides)
    th, pv = solver.to_spectral(state)
    return BoundaryField(solver.torus, values=solver.inv(solver.boundary_only_step(th, pv)))


def interior_step(state: QGState, **overrides) -> SlabField:
    """Advance pv by one SSP-RK3 step with theta frozen."""
    solver = _solver_for(state, **overrides)
    th, pv = solver.to_spectral(state)
    return SlabField(solver.slab, solver.inv(solver.interior_only_step(th, pv)))


Observer = Callable[[int, float, np.ndarray, np.ndarray, QGSolver], None]


def integrate(solver: QGSolver, theta_h, pv_h, t_start: float, n_steps: int, first: int = 1, dissipation: float = 0.0):
    """Yield ``(step, t, theta_h, pv_h, budget)`` for steps ``first..n_steps``.

    ``theta_h``/``pv_h`` are the packed coefficients at step ``first - 1`` and
    ``dissipation`` the cumulative boundary dissipation there, so a run can
    be resumed bit-for-bit from a checkpoint.  Raises ``SolverAbort`` (with an
    empty series) on non-finite values.
    """
    dt = solver.config.dt
    diss = dissipation
    g_prev = solver.surface_gradient_sq(theta_h, pv_h)
    t = t_start + (first - 1) * dt
    for i in range(first, n_steps + 1):
        th_new, pv_new = solver.step(theta_h, pv_h)
        if not (np.all(np.isfinite(th_new)) and np.all(np.isfinite(pv_new))):
            last = solver.to_state(t, theta_h, pv_h)
            raise SolverAbort(f"non-finite values at step {i}, t={t + dt:.6g}", last, BudgetSeries())
        theta_h, pv_h = th_new, pv_new
        t = t_start + i * dt
        g_new = solver.surface_gradient_sq(theta_h, pv_h)
        diss += 0.5 * dt * (g_prev + g_new)
        g_prev = g_new
        yield i, t, theta_h, pv_h, solver.budget(t, theta_h, pv_h, diss)


def advance(
    state: QGState,
    t_end: float,
    config: RunConfig | None = None,
    observer: Observer | None = None,
) -> tuple[QGState, BudgetSeries]:
    """Integrate to ``t_end``; the budget is recorded at every accepted step.

    ``observer(step, t, theta_h, pv_h, solver)`` is called at the configured
    cadence (and at the final step) for snapshot persistence.
    """
    if t_end < state.t:
        raise ValueError("t_end precedes the state time")
    if config is None:
        config = replace(_solver_for(state).config)
    solver = QGSolver(config)
    theta_h, pv_h = solver.to_spectral(state)
    n = int(round((t_end - state.t) / config.dt))
    t = state.t
    series = BudgetSeries([solver.budget(t, theta_h, pv_h, 0.0)])
    if observer is not None:
        observer(0, t, theta_h, pv_h, solver)
    try:
        for i, t, theta_h, pv_h, b in integrate(solver, theta_h, pv_h, state.t, n):
            series.append(b)
            if observer is not None and (i % config.cadence == 0 or i == n):
                observer(i, t, theta_h, pv_h, solver)
    except SolverAbort as exc:
        raise SolverAbort(str(exc), exc.last_state, series) from None
    return solver.to_state(t, theta_h, pv_h), series


def run(config: RunConfig, observer: Observer | None = None) -> tuple[QGState, BudgetSeries]:
    return advance(initial_state(config), config.t_end, config, observer)


def config_dict(config: RunConfig) -> dict:
    return asdict(config)


# --------------------------------------------------------------------------
# a priori audit


@dataclass(frozen=True)
class SliceBounds:
    """Horizontal-slice norms of ``grad psi2`` at one time (maxima over the audited heights)."""

    t: float
    besov1: float
    l4: float
    linf: float
    surface_34: float


def psi2_slice_norms(state: QGState, heights=None) -> SliceBounds:
    """``B^1_{inf,inf}``, ``L^4`` and ``L^inf`` of ``grad psi2`` on slices, plus ``||Lambda^{3/2} psi2(z=0)||_2``.

    ``heights`` defaults to every z-node.  The vertical component uses the
    sine-series derivative of the cosine interpolant.
    """
    psi2 = state.psi2
    grid = psi2.grid
    dz = slab_dz(psi2)
    zs = grid.z if heights is None else np.asarray(heights, dtype=float)
    b1 = l4 = linf = 0.0
    area = grid.torus.cell_area
    for z0 in zs:
        p = trace_slice(psi2, z0)
        comps = (partial(p, 1), partial(p, 2), trace_slice(dz, z0))
        b1 = max(b1, vector_besov_norm(comps, 1.0))
        mag2 = sum(c.values**2 for c in comps)
        l4 = max(l4, float((np.sum(mag2**2) * area) ** 0.25))
        linf = max(linf, float(np.sqrt(np.max(mag2))))
    surf = trace_slice(psi2, 0.0)
    s34 = math.sqrt(TWO_PI**2 * float(np.sum(surf.grid.kabs**3 * np.abs(surf.coeffs) ** 2)))
    return SliceBounds(float(state.t), b1, l4, linf, s34)


APRIORI_ITEMS = (
    "energy_balance",
    "pv_l2",
    "pv_l4",
    "pv_linf",
    "surface_psi2_h32",
    "slice_besov1",
    "trace_growth",
    "slice_l4",
    "slice_linf",
)


def audit_apriori(
    series,
    initial: EnergyBudget | None = None,
    slices=None,
    tol: float = 0.02,
    constants: dict | None = None,
    data_norm: float | None = None,
) -> list[InequalityVerdict]:
    """Verdicts for the a priori estimates over a budget series.

    * ``energy_balance``: ``max_t kinetic/2 + dissipation <= (1 + tol) kinetic(0)/2``;
    * ``pv_l2``, ``pv_l4``, ``pv_linf``: ``max_t |pv_p(t) - pv_p(0)| <= tol pv_p(0)``;
    * ``trace_growth``: ``max_t trace_l2(t)/(1+t) <= C data_norm``;
    * with ``slices`` (a list of ``SliceBounds``): ``surface_psi2_h32`` against
      ``pv_l2(0)``, ``slice_besov1`` against ``pv_linf(0)``, and ``slice_l4`` /
      ``slice_linf`` against ``data_norm``.

    Constants for the last group are taken from ``constants`` (keyed by item
    name) when given, otherwise fitted.  ``data_norm`` defaults to
    ``sqrt(kinetic(0))``.
    """
    series = list(series)
    if not series:
        raise ValueError("empty budget series")
    b0 = series[0] if initial is None else initial
    constants = dict(constants or {})
    col = lambda name: np.array([getattr(b, name) for b in series])  # noqa: E731
    t = col("t")
    scale = math.sqrt(b0.kinetic) if data_norm is None else float(data_norm)
    out = []
    energy = float(np.max(0.5 * col("kinetic") + col("boundary_dissipation")))
    out.append(InequalityVerdict.judge("energy_balance", energy, 0.5 * b0.kinetic, 1.0 + tol))
    for p in ("pv_l2", "pv_l4", "pv_linf"):
        ref = getattr(b0, p)
        drift = float(np.max(np.abs(col(p) - ref)))
        out.append(InequalityVerdict.judge(p, drift, ref, tol))

    def fitted_or(name, lhs, rhs):
        return InequalityVerdict.judge(name, lhs, rhs, constants.get(name))

    out.append(fitted_or("trace_growth", float(np.max(col("trace_l2") / (1.0 + t))), scale))
    if slices:
        sl = list(slices)
        out.append(fitted_or("surface_psi2_h32", max(s.surface_34 for s in sl), b0.pv_l2))
        out.append(fitted_or("slice_besov1", max(s.besov1 for s in sl), b0.pv_linf))
        out.append(fitted_or("slice_l4", max(s.l4 for s in sl), scale))
        out.append(fitted_or("slice_linf", max(s.linf for s in sl), scale))
    return out


# --------------------------------------------------------------------------
# Sobolev growth


def _dz_series(values: np.ndarray, grid: SlabGrid3, order: int) -> np.ndarray:
    """``order``-th z-derivative of the cosine interpolant, on the nodes."""
    if order == 0:
        return values
    a = dct1(values, axis=0) / (2.0 * (grid.nz - 1))
    a[1:-1] *= 2.0
    m = grid.vertical_wavenumbers
    zm = np.outer(grid.z, m)
    # d^n/dz^n cos(mz) cycles through -sin, -cos, sin, cos with factor m^n
    basis = [np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), np.sin][order % 4](zm) * m[None, :] ** order
    return np.tensordot(basis, a, axes=(1, 0))


@dataclass
class GrowthFit:
    rate: float
    doubling_time: float
    doublings: list[float]
    super_exponential: bool
    envelope_rate: float = 0.0
    envelope_r2: float = 1.0


@dataclass
class SobolevGrowthReport:
    times: np.ndarray
    norms: dict[str, np.ndarray]
    fits: dict[str, GrowthFit]

    def reports(self) -> list[NormReport]:
        """One ``NormReport`` per (quantity, time)."""
        out = []
        for name, vals in self.norms.items():
            s = float(name.split("_s")[-1])
            for v in vals:
                out.append(NormReport(name, float(v), s=s))
        return out

    def to_csv(self) -> str:
        names = list(self.norms)
        lines = [",".join(["t"] + names)]
        for i, t in enumerate(self.times):
            lines.append(",".join([f"{t:.17g}"] + [f"{self.norms[n][i]:.17g}" for n in names]))
        return "\n".join(lines) + "\n"


def sobolev_norms(state: QGState, s: int) -> tuple[float, float]:
    """Flat quantity ``||grad-bar^{s+1} grad psi|| + ||grad-bar^s pv||`` and full ``||grad psi||_{H^s}``.

    Vertical derivatives of ``psi`` beyond the first come from
    ``d_zz psi = pv - Laplacian-bar psi``, applied recursively.
    """
    grid = state.grid
    torus = grid.torus
    w = grid.z_weights
    ksq = torus.ksq[None]
    psi = state.psi1.values + state.psi2.values
    pv = state.pv.values
    psi1 = state.psi1
    d1 = np.stack([psi1.dz_at(z).values for z in grid.z]) + slab_dz(state.psi2).values
    hat = lambda a: np.fft.fft2(a, axes=(1, 2)) / torus.size  # noqa: E731
    lap = lambda a_h: -ksq * a_h  # noqa: E731
    D = [hat(psi), hat(d1)]
    pv_dz = [hat(_dz_series(pv, grid, a)) for a in range(s)]
    while len(D) < s + 2:
        a = len(D) - 2
        D.append(pv_dz[a] - lap(D[a]))

    def sq(weight, a_h):
        per_level = TWO_PI**2 * np.sum(weight * np.abs(a_h) ** 2, axis=(1, 2))
        return float(np.dot(w, per_level))

    flat = math.sqrt(sq(ksq ** (s + 2), D[0]) + sq(ksq ** (s + 1), D[1])) + math.sqrt(sq(ksq**s, hat(pv)))
    full = 0.0
    for a in range(s + 1):
        for n in range(s + 1 - a):
            full += sq(ksq ** (n + 1), D[a]) + sq(ksq**n, D[a + 1])
    return flat, math.sqrt(full)


def _loglinear(t: np.ndarray, lv: np.ndarray) -> tuple[float, float]:
    """Slope and R^2 of a least-squares line; R^2 is 1 for a constant series."""
    coef = np.polyfit(t, lv, 1)
    resid = lv - np.polyval(coef, t)
    total = float(np.sum((lv - lv.mean()) ** 2))
    if total <= 1e-24 * max(1.0, float(np.sum(lv**2))):
        return float(coef[0]), 1.0
    return float(coef[0]), 1.0 - float(np.sum(resid**2)) / total


def _growth_fit(t: np.ndarray, v: np.ndarray, accel: float) -> GrowthFit:
    doublings = []
    if v[0] > 0:
        level = 2.0 * v[0]
        for i in range(1, len(v)):
            while v[i - 1] < level <= v[i]:
                doublings.append(float(t[i - 1] + (level - v[i - 1]) / (v[i] - v[i - 1]) * (t[i] - t[i - 1])))
                level *= 2.0
    pos = v > 0
    if pos.sum() < 3:
        return GrowthFit(0.0, math.inf, doublings, False)
    tt, vv = t[pos], v[pos]
    lv = np.log(vv)
    rate, _ = _loglinear(tt, lv)
    half = len(tt) // 2
    r1, _ = _loglinear(tt[: half + 1], lv[: half + 1])
    r2, _ = _loglinear(tt[half:], lv[half:])
    sup = bool(r2 > 0 and r2 > r1 + max(accel * abs(r1), 0.1) and vv[-1] > vv[: half + 1].max())
    env_rate, env_r2 = _loglinear(tt, np.log(np.maximum.accumulate(vv)))
    return GrowthFit(rate, math.log(2) / rate if rate > 0 else math.inf, doublings, sup, env_rate, env_r2)


def sobolev_growth_monitor(states, s_values=(2, 3), accel: float = 0.5) -> SobolevGrowthReport:
    """Flat and full Sobolev norms along a state series, with log-linear growth fits.

    ``super_exponential`` is flagged when the log-growth rate over the second
    half of the window is positive, exceeds the first-half rate by more than
    ``max(accel * |rate|, 0.1)``, and the final value tops every first-half
    value.  ``envelope_rate``/``envelope_r2`` fit the running maximum
    ``sup_{s<=t} N(s)``.
    """
    states = list(states)
    for s in s_values:
        if s not in (2, 3):
            raise ValueError(f"s must be 2 or 3, got {s}")
    norms: dict[str, list[float]] = {}
    for s in s_values:
        norms[f"flat_s{s}"] = []
        norms[f"full_s{s}"] = []
    for st in states:
        for s in s_values:
            flat, full = sobolev_norms(st, s)
            norms[f"flat_s{s}"].append(flat)
            norms[f"full_s{s}"].append(full)
    return growth_report([st.t for st in states], norms, accel)


def growth_report(times, norms: dict, accel: float = 0.5) -> SobolevGrowthReport:
    """Fit every norm series in ``norms`` (name -> values at ``times``)."""
    times = np.asarray(times, dtype=float)
    arr = {k: np.asarray(v, dtype=float) for k, v in norms.items()}
    fits = {k: _growth_fit(times, v, accel) for k, v in arr.items()}
    return SobolevGrowthReport(times, arr, fits)

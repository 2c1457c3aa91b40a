import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.special import j1

from helpers import TWO_PI, band_limited, mode_sum, truncation_energy_oracle
from qgslab.analysis_norms import holder_norm
from qgslab.degiorgi_lab import (
    CutoffFamily,
    LevelSetEnergySeries,
    TruncationLadder,
    cascade,
    drift_recenter_path,
    energy_inequality_audit,
    forcing_monitor,
    isoperimetric_measures,
    oscillation_set_overlaps,
    truncation_energy,
    verify_recurrence,
    window_scale,
)
from qgslab.spectral_core import BoundaryField, FieldSeries, TorusGrid2

G64 = TorusGrid2(64, 64)


def const_series(grid, value, times):
    return FieldSeries.constant(BoundaryField(grid, values=np.full(grid.shape, float(value))), times)


def decaying_mode_series(grid, times, amp=1.0):
    x1, _ = grid.coords
    return FieldSeries(times, [BoundaryField(grid, values=amp * math.exp(-t) * np.cos(x1)) for t in times])


# --- ladder and truncation energies ---------------------------------------------------


def test_window_scale():
    assert window_scale(2.0) == 0.5 and window_scale(10.0) == 1.0
    with pytest.raises(ValueError):
        window_scale(0.0)


def test_ladder_levels_and_times():
    lad = TruncationLadder(2.0, 4, t0=1.0)
    assert np.allclose(lad.levels, 2.0 * (1 - 2.0 ** -np.arange(5)))
    assert np.allclose(lad.mapped_times, 1.0 + 0.25 * (-1 - 2.0 ** -np.arange(5)))
    with pytest.raises(ValueError):
        TruncationLadder(0.0)


def test_truncation_energy_zero():
    E = truncation_energy(const_series(G64, 0.0, [0.0, 1.0]), TruncationLadder(1.0, 6, 1.0))
    assert np.all(E.E == 0.0)


def test_truncation_energy_constant_half_level():
    L = 3.0
    E = truncation_energy(const_series(G64, L / 2, [0.0, 0.5, 1.0]), TruncationLadder(L, 6, 1.0))
    assert E.E[0] == pytest.approx((L / 2) ** 2 * TWO_PI**2, rel=1e-12)
    assert np.all(E.E[1:] == 0.0)


def test_truncation_energy_matches_quadrature_oracle():
    times = np.linspace(0.0, 1.0, 11)
    th = FieldSeries(times, [band_limited(32, s, k_max=6) * (1 + 0.3 * t) for s, t in enumerate(times)])
    lad = TruncationLadder(0.8, 8, t0=1.0)
    E = truncation_energy(th, lad)
    assert np.max(np.abs(E.E - truncation_energy_oracle(th, lad))) <= 1e-10 * max(1.0, E.E.max())


def test_truncation_energy_requires_window():
    with pytest.raises(ValueError, match="cover"):
        truncation_energy(const_series(G64, 1.0, [0.9, 1.0]), TruncationLadder(1.0, 3, 1.0))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), L=st.floats(0.1, 3.0))
def test_truncation_energy_monotone_in_k(seed, L):
    times = [0.0, 0.5, 1.0]
    th = FieldSeries(times, [band_limited(32, seed + i, k_max=5) for i in range(3)])
    E = truncation_energy(th, TruncationLadder(L, 8, 1.0)).E
    assert np.all(np.diff(E) <= 1e-12 * max(E[0], 1.0))


# --- recurrence --------------------------------------------------------------------------


def test_recurrence_geometric_toy():
    ks = np.arange(9)
    E = 4.0 ** (-ks * 1.5**ks)
    v = verify_recurrence(E, 1.0)
    assert v.satisfied and v.lhs < 16.0
    for k in range(1, 9):
        assert E[k] <= v.lhs**k * E[k - 1] ** 1.5 * (1 + 1e-12)
    assert v.decays and v.forced_decay and not v.flagged


def test_recurrence_constant_energies_flagged():
    v = verify_recurrence(np.ones(11), 1.0)
    assert not v.decays and not v.forced_decay and v.flagged


def test_recurrence_zero_after_first_rung():
    v = verify_recurrence([1.0] + [0.0] * 10, 2.0)
    assert v.lhs == 0.0 and v.satisfied and v.decays and v.degenerate


def test_recurrence_infinite_when_energy_reappears():
    v = verify_recurrence([1.0, 0.0, 0.5, 0.1], 1.0)
    assert v.lhs == math.inf and not v.satisfied


def test_recurrence_input_checks():
    with pytest.raises(ValueError):
        verify_recurrence([1.0, -1.0], 1.0)
    with pytest.raises(ValueError):
        verify_recurrence([1.0, 0.5], 0.0)


# --- cutoffs -----------------------------------------------------------------------------


def test_cutoff_shapes():
    cf = CutoffFamily()
    r = np.linspace(0, 4, 401)
    assert np.all(cf.c(r[r <= 1.75]) == 0.0)
    assert np.allclose(cf.c(r[r >= 3.0]), np.maximum(r[r >= 3.0] ** 0.25 - 2, 0))
    assert np.all(cf.phi(r[r <= 1.0]) == 1.0) and np.all(cf.phi(r[r >= 1.5]) == 0.0)
    assert np.all(np.diff(cf.phi(r)) <= 1e-15)
    assert np.all(cf.phi0(r) <= cf.phi1(r))


def test_cutoff_transition_is_c2():
    cf = CutoffFamily()
    for r0 in (1.75, 3.0):
        h = 1e-5
        left = (cf.c(r0) - cf.c(r0 - h)) / h
        right = (cf.c(r0 + h) - cf.c(r0)) / h
        assert abs(left - right) < 1e-3


def test_gamma_parameters():
    g, a, b = CutoffFamily.gamma_params(3)
    assert (g, a, b) == (0.5 + 2**-4, 0.5 + 2**-5, 0.5 + 2**-4)


def test_gamma_half_laplacian_against_fft_oracle():
    """Hankel route vs the FFT multiplier |k| on a large periodic box (images decay like |x|^-3)."""
    cf = CutoffFamily()
    n, box = 2048, 32.0
    x = (np.arange(n) - n // 2) * (box / n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    k = np.fft.fftfreq(n, box / n) * TWO_PI
    K = np.hypot(*np.meshgrid(k, k, indexing="ij"))
    lam = np.fft.ifft2(np.fft.fft2(cf.gamma(1, np.hypot(X, Y))) * K).real
    rs = np.array([0.0, 0.3, 1.0, 2.0])
    idx = (n // 2 + np.round(rs / (box / n))).astype(int)
    ref = lam[idx, n // 2]
    assert np.allclose(cf.gamma_half_laplacian(1, rs), ref, rtol=0.01, atol=1e-3)


def test_cutoff_audit_bounds():
    rows = CutoffFamily().audit(10)
    grad = [g for _, g, _ in rows]
    half = [h for _, _, h in rows]
    assert max(grad) <= 6.0 + 1e-9 and grad[-1] == pytest.approx(4.0, rel=0.01)
    assert max(half) <= 5.3
    assert half[-1] < half[0]


# --- isoperimetric sets ------------------------------------------------------------------------

G256 = TorusGrid2(256, 256)


def test_isoperimetric_theta_one():
    m = isoperimetric_measures(const_series(G256, 1.0, [0.0, 4.0]), t0=4.0)
    assert m.A == pytest.approx(math.pi, rel=0.01)
    assert m.C == 0.0 and m.D == 0.0


def test_isoperimetric_theta_minus_one():
    m = isoperimetric_measures(const_series(G256, -1.0, [0.0, 4.0]), t0=4.0)
    assert m.A == 0.0
    assert m.C == pytest.approx(math.pi, rel=0.01)


def test_isoperimetric_linear_in_time():
    """theta = 1 + s in normalised time: A covers s > -1/2, C covers all of [-2, -1]."""
    ts = np.linspace(2.0, 4.0, 201)  # t0 = 4, K0 = 1
    ser = FieldSeries(ts, [BoundaryField(G256, values=np.full(G256.shape, 1.0 + (t - 4.0))) for t in ts])
    m = isoperimetric_measures(ser, t0=4.0)
    area = np.count_nonzero(G256.periodic_distance(0, 0) < 1.0) * G256.cell_area
    assert m.A == pytest.approx(0.5 * area, abs=area * 0.02)
    assert m.C == pytest.approx(area, abs=area * 0.02)


def test_oscillation_sets_disjoint():
    ts = np.linspace(2.0, 4.0, 9)
    x1, x2 = G64.coords
    ser = FieldSeries(ts, [BoundaryField(G64, values=0.9 * np.cos(x1 - 0.1 * t) * np.cos(x2)) for t in ts])
    sizes, over = oscillation_set_overlaps(ser, 4, t0=4.0)
    off = over - np.diag(np.diag(over))
    assert np.max(off) <= 1e-12
    assert np.sum(sizes) <= 2 * math.pi * 4 + 1e-9


# --- paths ---------------------------------------------------------------------------------------


def test_path_constant_drift():
    ts = [0.0, 0.5, 1.0]
    u = (const_series(G64, 0.3, ts), const_series(G64, -0.2, ts))
    p = drift_recenter_path(u, radius=0.5)
    assert np.allclose(p.points, np.outer(p.times, [0.3, -0.2]), atol=1e-13)


def test_path_zero_drift():
    ts = [0.0, 1.0]
    u = (const_series(G64, 0.0, ts), const_series(G64, 0.0, ts))
    assert np.all(drift_recenter_path(u).points == 0.0)


def test_path_rotational_second_order():
    ts = np.linspace(0.0, 1.0, 5)
    x1, x2 = G64.coords
    u1 = FieldSeries.constant(BoundaryField(G64, values=-np.sin(x2)), ts)
    u2 = FieldSeries.constant(BoundaryField(G64, values=np.sin(x1)), ts)
    R = 0.4
    m = 2 * j1(R) / R
    ref = solve_ivp(lambda t, y: [-m * math.sin(y[1]), m * math.sin(y[0])], (0, 1), [0.3, 0.2], rtol=1e-12, atol=1e-12)
    errs = []
    for sub in (1, 2, 4):
        p = drift_recenter_path((u1, u2), radius=R, start=(0.3, 0.2), substeps=sub)
        errs.append(np.hypot(*(p.points[-1] - ref.y[:, -1])))
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5


def test_path_backward_integration():
    ts = [0.0, 1.0]
    u = (const_series(G64, 1.0, ts), const_series(G64, 0.0, ts))
    p = drift_recenter_path(u, t_start=1.0, t_end=0.0)
    assert p.points[-1] == pytest.approx([-1.0, 0.0])


# --- cascade ------------------------------------------------------------------------------------------


def test_cascade_constant_field():
    ser = const_series(G64, 0.7, [0.0, 1.0, 2.0])
    tr = cascade(ser, None, None, 0.5, 3, t0=2.0)
    assert all(o == 0.0 for o in tr.osc)


def test_cascade_decaying_mode_positive_exponent():
    ts = np.linspace(0.0, 2.0, 21)
    tr = cascade(decaying_mode_series(G64, ts), None, None, 0.5, 3, t0=2.0, x0=(1.0, 0.5))
    assert tr.r_estimate > 0
    assert all(b <= a * 0.9 for a, b in zip(tr.osc, tr.osc[1:]))


def test_cascade_synthetic_cusp_exponent():
    """Node-sampled periodic |x|^(1/3) recovers its exponent; balls stay at least two cells wide."""
    g = TorusGrid2(512, 512)
    cusp = BoundaryField(g, values=g.periodic_distance(0.0, 0.0) ** (1 / 3))
    ser = FieldSeries.constant(cusp, [0.0, 2.0, 4.0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr = cascade(ser, None, None, 0.5, 10, t0=4.0, min_radius_cells=2.0)
    assert tr.depth >= 4
    assert tr.r_estimate == pytest.approx(1 / 3, abs=0.05)


def test_cascade_rejects_bad_K():
    with pytest.raises(ValueError):
        cascade(const_series(G64, 0.0, [0.0, 1.0]), None, None, 1.5, 3, t0=1.0)


def test_cascade_truncates_with_warning():
    ser = const_series(TorusGrid2(16, 16), 0.1, [0.0, 1.0])
    with pytest.warns(UserWarning, match="truncated"):
        tr = cascade(ser, None, None, 0.5, 12, t0=1.0, min_radius_cells=1.0)
    assert tr.truncated


# --- forcing and energy inequality ---------------------------------------------------------------


def test_forcing_monitor_zero_and_unit_mode():
    ts = [0.0, 1.0]
    assert forcing_monitor(const_series(G64, 0.0, ts)).M == 0.0
    cos = mode_sum(G64, [(1, 0, 1.0, 0.0)])
    fm = forcing_monitor(FieldSeries.constant(cos, ts))
    assert fm.M == pytest.approx(holder_norm(cos, 0.5).value, rel=1e-12)


def test_forcing_monitor_rejects_mean():
    with pytest.raises(ValueError, match="mean"):
        forcing_monitor(const_series(G64, 1.0, [0.0, 1.0]))


def test_energy_inequality_decaying_mode():
    ts = np.linspace(0.0, 1.0, 11)
    out = energy_inequality_audit(decaying_mode_series(G64, ts), [0.0, 0.25, 0.5])
    for v in out:
        assert math.isfinite(v.constant) and v.satisfied

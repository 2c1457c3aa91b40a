import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import band_limited, mode_sum
from qgslab.analysis_norms import resample
from qgslab.duhamel_bootstrap import (
    additive_regularity_probe,
    besov_forcing_bound,
    divergence,
    duhamel_convolve,
    duhamel_series,
    harmonic_gradient,
    local_difference_profile,
    poisson_band_damping,
    riesz_band_ratio,
    tip_regularised_cusp,
    velocity_regularity_transfer,
)
from qgslab.qg_dynamics import RunConfig, run
from qgslab.spectral_core import BoundaryField, FieldSeries, TorusGrid2, poisson_extend

G16 = TorusGrid2(16, 16)
G64 = TorusGrid2(64, 64)


def sin1(grid, amp=1.0):
    return mode_sum(grid, [(1, 0, 0.0, amp)])


# --- Duhamel convolution ------------------------------------------------------------


def test_duhamel_constant_single_mode():
    src = FieldSeries.constant(sin1(G16, -1.0), [0.0, 0.5, 2.0])
    for t in (0.0, 0.3, 1.0, 2.0):
        g = duhamel_convolve(src, t)
        assert np.abs(g.values + (1 - math.exp(-t)) * sin1(G16).values).max() < 1e-15


def test_duhamel_divergence_form_source():
    omega = mode_sum(G16, [(1, 0, 1.0, 0.0)])
    src = divergence(omega, BoundaryField.zeros(G16))
    assert np.abs(src.values + sin1(G16).values).max() < 1e-14


def test_duhamel_zero_source():
    src = FieldSeries.constant(BoundaryField.zeros(G16), [0.0, 1.0])
    assert np.all(duhamel_convolve(src, 0.7).values == 0.0)


def _oscillatory(n_samples, omega, t_end=1.0):
    ts = np.linspace(0.0, t_end, n_samples)
    base = mode_sum(TorusGrid2(8, 8), [(1, 0, 1.0, 0.0)])
    src = FieldSeries(ts, [BoundaryField(base.grid, values=math.cos(omega * s) * base.values) for s in ts])
    g = duhamel_convolve(src, t_end)
    exact = (math.cos(omega * t_end) + omega * math.sin(omega * t_end) - math.exp(-t_end)) / (1 + omega**2)
    return np.abs(g.values - exact * base.values).max()


def test_duhamel_oscillatory_source_closed_form():
    assert _oscillatory(10_001, 3.0) < 1e-8


def test_duhamel_quadrature_second_order():
    errs = [_oscillatory(n, 3.0) for n in (41, 81, 161)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_duhamel_rejects_bad_input():
    src = FieldSeries.constant(sin1(G16), [0.0, 1.0])
    with pytest.raises(ValueError):
        duhamel_convolve(src, 1.5)
    with pytest.raises(ValueError):
        duhamel_convolve(src, -0.1)
    biased = FieldSeries.constant(BoundaryField(G16, values=np.ones(G16.shape)), [0.0, 1.0])
    with pytest.raises(ValueError):
        duhamel_convolve(biased, 0.5)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.floats(0.0, 3.0))
def test_zero_source_is_poisson_semigroup(seed, t):
    th = band_limited(32, seed)
    src = FieldSeries.constant(BoundaryField.zeros(th.grid), [0.0, 3.0])
    g = duhamel_convolve(src, t, initial=th)
    assert np.abs(g.values - poisson_extend(th, t).values).max() < 1e-14


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), split=st.floats(0.05, 0.95))
def test_duhamel_restarts_from_intermediate_value(seed, split):
    rng = np.random.default_rng(seed)
    ts = np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0, 1, 5)]))
    src = FieldSeries(ts, [band_limited(16, seed + i, k_max=5) for i in range(len(ts))])
    mid = duhamel_convolve(src, split)
    tail = [t for t in ts if t > split]
    later = FieldSeries([split] + tail, [src.at(split)] + [src.at(t) for t in tail])
    again = duhamel_convolve(later, 1.0, initial=mid)
    assert np.abs(again.values - duhamel_convolve(src, 1.0).values).max() < 1e-13


def test_duhamel_series_multiple_times():
    src = FieldSeries.constant(sin1(G16, -1.0), [0.0, 1.0])
    ds = duhamel_series(src, [1.0, 0.25, 0.5])
    assert list(ds.results) == [0.25, 0.5, 1.0]
    assert np.array_equal(ds.times, src.times)


# --- splitting identity -------------------------------------------------------------


def _split_error(dt):
    cfg = RunConfig(n1=32, n2=32, nz=8, dt=dt, t_end=0.2, seed=5, cadence=1)
    ts, th, adv, frc = [], [], [], []

    def obs(i, t, th_h, pv_h, s):
        ts.append(t)
        a, _ = s.advect(th_h * s.inv_kabs + s.psi2_surface(pv_h), th_h)
        th.append(BoundaryField(s.torus, values=s.inv(th_h)))
        adv.append(BoundaryField(s.torus, values=s.inv(a)))
        frc.append(s.surface_fields(th_h, pv_h)["forcing"])

    run(cfg, obs)
    T = ts[-1]
    g0 = poisson_extend(th[0], T)
    g1 = duhamel_convolve(FieldSeries(ts, adv), T)
    g2 = duhamel_convolve(FieldSeries(ts, frc), T)
    return np.abs((g0 + g1 + g2).values - th[-1].values).max()


def test_splitting_identity_to_integrator_order():
    errs = [_split_error(dt) for dt in (4e-3, 2e-3, 1e-3)]
    assert errs[-1] < 1e-6
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


# --- additive regularity ------------------------------------------------------------


def _constant_probe(f, h, a1, a2, **kw):
    ts = [0.0, 0.5, 1.0]
    hs = FieldSeries.constant(h, ts)
    return additive_regularity_probe(FieldSeries.constant(f, ts), (hs, hs), 1.0, a1, a2, **kw)


def test_probe_zero_f_is_degenerate():
    r = _constant_probe(BoundaryField.zeros(G64), band_limited(64, 1), 0.5, 0.5)
    assert r.degenerate and r.value == 0.0 and r.const_fit == 0.0


def test_probe_constant_fields_anchor_to_zero():
    c = BoundaryField(G64, values=np.full(G64.shape, 3.0))
    assert _constant_probe(c, band_limited(64, 2), 0.5, 0.5).degenerate
    assert _constant_probe(band_limited(64, 2), c, 0.5, 0.5).degenerate


def test_probe_single_anchored_modes_at_alpha_one():
    f = mode_sum(G64, [(1, 0, 0.0, 1.0)])
    h = mode_sum(G64, [(0, 1, 0.0, 1.0)])
    r = _constant_probe(f, h, 0.5, 0.5)
    assert r.s == 1.0 and not r.degenerate
    assert math.isfinite(r.value) and r.value > 0
    assert math.isfinite(r.const_fit) and r.const_fit > 0


def test_probe_rejects_exponents():
    f = band_limited(32, 0)
    with pytest.raises(ValueError):
        _constant_probe(f, f, 1.0, 0.5)
    with pytest.raises(ValueError):
        _constant_probe(f, f, 0.0, 0.5)


@pytest.mark.slow
@pytest.mark.parametrize("a1,a2", [(1 / 3, 1 / 3), (0.45, 0.45), (0.2, 0.2)])
def test_probe_recovers_cusp_sum_exponent(a1, a2):
    grid = TorusGrid2(512, 512)
    h = grid.spacing[0]
    r = _constant_probe(tip_regularised_cusp(grid, a1, h), tip_regularised_cusp(grid, a2, h), a1, a2)
    assert r.exponent >= a1 + a2 - 0.05


def test_tip_regularised_cusp_anchored():
    c = tip_regularised_cusp(G64, 0.5, G64.spacing[0])
    assert c.values[0, 0] == 0.0
    far = G64.periodic_distance(0.0, 0.0) > 1.0
    assert np.allclose(c.values[far], G64.periodic_distance(0.0, 0.0)[far] ** 0.5, rtol=1e-12)


def test_taylor_remainder_removes_anisotropic_gradient():
    # g = sin(x1) + 2 sin(x2) at the origin: the remainder subtracts y1 + 2 y2 and is
    # bounded by (|y1|^3 + 2 |y2|^3) / 6; swapping the gradient axes leaves an O(|y|) term
    g = mode_sum(G64, [(1, 0, 0.0, 1.0), (0, 1, 0.0, 2.0)])
    dist, diff = local_difference_profile(g, (0.0, 0.0), 2)
    near = dist < 0.2
    assert np.all(diff[near] <= 3 * dist[near] ** 3 / 6 + 1e-14)


# --- Besov forcing ------------------------------------------------------------------


def test_besov_forcing_single_mode():
    w1 = FieldSeries.constant(mode_sum(G16, [(1, 0, 1.0, 0.0)]), [0.0, 0.5, 1.0])
    w2 = FieldSeries.constant(BoundaryField.zeros(G16), [0.0, 0.5, 1.0])
    v = besov_forcing_bound((w1, w2))
    assert v.lhs == pytest.approx(1 - math.exp(-1.0), rel=1e-14)
    assert v.rhs == pytest.approx(1.0, rel=1e-14)
    assert v.satisfied and v.constant <= 1.0


def test_besov_forcing_zero():
    z = FieldSeries.constant(BoundaryField.zeros(G16), [0.0, 1.0])
    v = besov_forcing_bound((z, z))
    assert v.lhs == 0.0 and v.rhs == 0.0 and v.satisfied


def test_besov_forcing_rejects_mean():
    one = FieldSeries.constant(BoundaryField(G16, values=np.ones(G16.shape)), [0.0, 1.0])
    with pytest.raises(ValueError):
        besov_forcing_bound((one, one))


def _omega(n, seed):
    base = [band_limited(64, seed + i, k_max=20, slope=0.5) for i in range(4)]
    up = [resample(b, n) if n != 64 else b for b in base]
    ts = [0.0, 0.5]
    return FieldSeries(ts, up[:2]), FieldSeries(ts, up[2:])


@pytest.mark.parametrize("seed", [0, 10, 20])
def test_besov_forcing_stable_under_resolution_doubling(seed):
    c64 = besov_forcing_bound(_omega(64, seed)).constant
    c128 = besov_forcing_bound(_omega(128, seed)).constant
    assert c128 == pytest.approx(c64, rel=0.2)


# --- velocity transfer --------------------------------------------------------------


def test_velocity_transfer_single_mode():
    th = mode_sum(G64, [(1, 0, 1.0, 0.0)])
    x1, _ = G64.coords
    for z in (0.0, 0.5, 2.0):
        p, r1, r2 = harmonic_gradient(th, z)
        assert np.abs(p.values - math.exp(-z) * np.cos(x1)).max() < 1e-15
        assert np.abs(r1.values + math.exp(-z) * np.sin(x1)).max() < 1e-15
        assert np.abs(r2.values).max() < 1e-15
    rep = velocity_regularity_transfer(th)
    assert rep.value == pytest.approx(1.0, rel=1e-14)
    assert rep.const_fit == pytest.approx(1.0, rel=1e-14) and rep.satisfied
    top = [max(p) for p in rep.per_height]
    assert int(np.argmax(top)) == rep.heights.index(0.0)


def test_velocity_transfer_zero():
    rep = velocity_regularity_transfer(BoundaryField.zeros(G64))
    assert rep.value == 0.0 and rep.const_fit == 0.0 and rep.satisfied


@pytest.mark.parametrize("seed", range(5))
def test_velocity_transfer_sup_at_surface(seed):
    rep = velocity_regularity_transfer(band_limited(64, seed, k_max=24))
    at0 = rep.per_height[rep.heights.index(0.0)]
    for per in rep.per_height:
        for a, b in zip(per, at0):
            assert a <= b + 1e-10
    assert rep.satisfied


def test_velocity_transfer_requires_mean_zero():
    with pytest.raises(ValueError):
        velocity_regularity_transfer(BoundaryField(G64, values=np.ones(G64.shape)))


# --- band bounds --------------------------------------------------------------------


def test_riesz_band_ratio_can_exceed_one():
    # both modes sit in band 3; R1 turns the sines into cosines, which align at x1 = 0
    th = mode_sum(G64, [(5, 0, 0.0, 1 / 25), (7, 0, 0.0, 1 / 49)])
    assert riesz_band_ratio(th, 1) == pytest.approx(1.045, abs=5e-3)


def test_riesz_band_ratio_random_corpus():
    worst = max(max(riesz_band_ratio(band_limited(64, s, k_max=24), a) for a in (1, 2)) for s in range(20))
    assert worst <= 1 + 1e-10


@pytest.mark.parametrize("z", [0.05, 0.2, 1.0])
def test_poisson_band_damping_random_corpus(z):
    for seed in range(10):
        ratios = poisson_band_damping(band_limited(64, seed, k_max=24), z)
        assert ratios and max(ratios.values()) <= 1 + 1e-10


def test_poisson_band_damping_single_mode_exact():
    # |k| = 5 lies in band 3 with lower edge 4
    th = mode_sum(G64, [(3, 4, 1.0, 0.0)])
    r = poisson_band_damping(th, 0.3)
    assert r == {3: pytest.approx(math.exp(-0.3 * (5 - 4)), rel=1e-13)}

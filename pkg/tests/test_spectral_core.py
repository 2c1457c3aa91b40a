import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import TWO_PI, band_limited, dft_multiplier, mode_sum
from qgslab.spectral_core import (
    BoundaryField,
    FieldSeries,
    SlabField,
    SlabGrid3,
    TorusGrid2,
    apply_multiplier,
    fractional_laplacian,
    harmonic_neumann_extension,
    lp_decompose,
    partial,
    poisson_extend,
    read_snapshot,
    riesz_transform,
    slab_dz,
    slab_laplacian,
    solve_neumann_poisson,
    trace_slice,
    write_snapshot,
)

G32 = TorusGrid2(32, 32)
G64 = TorusGrid2(64, 64)

modes = st.tuples(st.integers(-10, 10), st.integers(-10, 10)).filter(lambda k: k != (0, 0))


def close(a, b, tol=1e-12):
    a = a.values if isinstance(a, BoundaryField) else a
    b = b.values if isinstance(b, BoundaryField) else b
    return np.max(np.abs(a - b)) <= tol


# --- fractional Laplacian -------------------------------------------------


def test_fractional_laplacian_unit_mode_half():
    f = mode_sum(G32, [(1, 0, 1.0, 0.0)])
    assert close(fractional_laplacian(f, 0.5), f)


def test_fractional_laplacian_full_laplacian():
    f = mode_sum(G32, [(2, 1, 1.0, 0.0)])
    assert close(fractional_laplacian(f, 1.0), 5.0 * f.values, 1e-11)


@pytest.mark.parametrize("alpha", [0.0, 0.25, 1.0, 2.0])
def test_fractional_laplacian_kills_constants(alpha):
    f = BoundaryField(G32, values=np.full(G32.shape, 3.7))
    assert close(fractional_laplacian(f, alpha), 0.0)


def test_negative_power_rejects_mean():
    f = BoundaryField(G32, values=np.full(G32.shape, 1.0))
    with pytest.raises(ValueError, match="mean"):
        fractional_laplacian(f, -0.5)


@settings(max_examples=40, deadline=None)
@given(k=modes, alpha=st.floats(-1.0, 2.0), phase=st.floats(0, 2 * math.pi))
def test_multiplier_identities_single_mode(k, alpha, phase):
    """Every single mode is an eigenfunction of the three multipliers with the stated scalar."""
    k1, k2 = k
    f = mode_sum(G64, [(k1, k2, math.cos(phase), math.sin(phase))])
    kk = math.hypot(k1, k2)
    # roundoff in the empty modes is amplified by the largest symbol on the grid
    scale = max(1.0, kk ** (2 * alpha))
    leak = 1e-15 * G64.kabs.max() ** (2 * max(alpha, 0.0))
    assert close(fractional_laplacian(f, alpha), kk ** (2 * alpha) * f.values, 1e-12 * scale + leak)
    assert close(poisson_extend(f, 0.3), math.exp(-0.3 * kk) * f.values)
    # R1 of cos(k.x + p) is -(k1/|k|) sin(k.x + p)
    x1, x2 = G64.coords
    ph = k1 * x1 + k2 * x2
    g = math.cos(phase) * np.sin(ph) - math.sin(phase) * np.cos(ph)
    assert close(riesz_transform(f, 1), -(k1 / kk) * g)
    assert close(riesz_transform(f, 2), -(k2 / kk) * g)


# --- Riesz ------------------------------------------------------------------


def test_riesz_sin_axis1_is_cos():
    f = mode_sum(G32, [(1, 0, 0.0, 1.0)])
    assert close(riesz_transform(f, 1), mode_sum(G32, [(1, 0, 1.0, 0.0)]))


def test_riesz_sin_x1_axis2_vanishes():
    f = mode_sum(G32, [(1, 0, 0.0, 1.0)])
    assert close(riesz_transform(f, 2), 0.0)


def test_riesz_cos_x2_against_brute_force_multiplier():
    f = mode_sum(TorusGrid2(16, 16), [(0, 1, 1.0, 0.0)])
    ref = dft_multiplier(f, lambda a, b: 1j * b / math.hypot(a, b) if (a, b) != (0, 0) else 0.0)
    assert np.max(np.abs(ref.imag)) < 1e-12
    assert close(riesz_transform(f, 2), ref.real)
    assert close(riesz_transform(f, 2), -mode_sum(f.grid, [(0, 1, 0.0, 1.0)]).values)


def test_riesz_random_field_against_brute_force_multiplier():
    f = band_limited(16, seed=3, k_max=6)
    for axis in (1, 2):
        sym = lambda a, b, ax=axis: 1j * (a if ax == 1 else b) / math.hypot(a, b) if (a, b) != (0, 0) else 0.0
        assert close(riesz_transform(f, axis), dft_multiplier(f, sym).real, 1e-12)


@settings(max_examples=25, deadline=None)
@given(s1=st.integers(0, 10_000), s2=st.integers(0, 10_000), axis=st.sampled_from([1, 2]))
def test_riesz_skew_symmetry(s1, s2, axis):
    f, g = band_limited(32, s1), band_limited(32, s2)
    lhs = np.sum(riesz_transform(f, axis).values * g.values)
    rhs = -np.sum(f.values * riesz_transform(g, axis).values)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_riesz_rejects_bad_axis():
    with pytest.raises(ValueError):
        riesz_transform(mode_sum(G32, [(1, 0, 1.0, 0.0)]), 3)


# --- Poisson ----------------------------------------------------------------


def test_poisson_unit_mode():
    f = mode_sum(G32, [(1, 0, 1.0, 0.0)])
    assert close(poisson_extend(f, 1.0), math.exp(-1.0) * f.values)


def test_poisson_identity_at_zero():
    f = band_limited(32, 5)
    assert close(poisson_extend(f, 0.0), f)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.floats(0, 3), b=st.floats(0, 3))
def test_poisson_semigroup(seed, a, b):
    f = band_limited(32, seed)
    assert close(poisson_extend(poisson_extend(f, a), b), poisson_extend(f, a + b))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), z=st.floats(0, 4))
def test_poisson_contraction(seed, z):
    f = band_limited(32, seed, k_max=12)
    assert poisson_extend(f, z).sup() <= f.sup() * (1 + 1e-12)


def test_poisson_rejects_negative_height():
    with pytest.raises(ValueError):
        poisson_extend(band_limited(16, 0), -0.1)


# --- bands ------------------------------------------------------------------


def test_bands_single_mode():
    f = mode_sum(G32, [(4, 0, 0.0, 1.0)])
    d = lp_decompose(f)
    assert d.nonzero() == [2]
    assert close(d[2], f)


def test_bands_two_modes():
    f = mode_sum(G32, [(1, 0, 1.0, 0.0), (0, 8, 1.0, 0.0)])
    assert lp_decompose(f).nonzero() == [0, 3]


def test_band_membership_against_loop():
    """Every integer mode lands in the unique j with 2^(j-1) < |k| <= 2^j."""
    d = lp_decompose(band_limited(32, 1, k_max=15))
    for j, b in d.bands.items():
        for a, c in zip(*np.nonzero(np.abs(b.coeffs) > 1e-14)):
            ka = a if a < 16 else a - 32
            kb = c if c < 16 else c - 32
            r = math.hypot(ka, kb)
            lo = 2.0 ** (j - 1) if j > 0 else 0.0
            assert lo < r <= 2.0**j + 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-2, 2))
def test_band_reconstruction(seed, shift):
    f = band_limited(64, seed, k_max=30) + shift
    assert close(lp_decompose(f).reconstruct(), f, 1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), alpha=st.sampled_from([0.25, 0.5, 1.0]), p=st.sampled_from([2.0, math.inf]))
def test_bernstein_sharp_annulus(seed, alpha, p):
    d = lp_decompose(band_limited(64, seed, k_max=30))
    for j in d.nonzero():
        b = d[j]
        r = fractional_laplacian(b, alpha).lp(p) / (2.0 ** (2 * j * alpha) * b.lp(p))
        assert 2.0 ** (-2 * alpha) - 1e-12 <= r <= 2.0 ** (2 * alpha) + 1e-12


# --- slab ---------------------------------------------------------------------


SLAB = SlabGrid3(G32, 33, 2.0)


def test_harmonic_extension_unit_mode():
    theta = mode_sum(G32, [(1, 0, 1.0, 0.0)])
    psi = harmonic_neumann_extension(theta, SLAB)
    for z in (0.0, 0.37, 1.0, 2.0):
        assert close(psi.slice_at(z), math.exp(-z) * theta.values)
    assert close(-psi.dz_at(0.0), theta)


def test_harmonic_extension_laplacian_residual():
    theta = band_limited(32, 7, k_max=10)
    psi = harmonic_neumann_extension(theta, SLAB)
    for z in SLAB.z[::4]:
        # independent route: per mode, d_zz e^{-z|k|} = |k|^2 e^{-z|k|} cancels -|k|^2
        assert psi.laplacian_at(z).sup() < 1e-8
    assert close(-psi.dz_at(0.0), theta, 1e-12)


def test_harmonic_extension_requires_zero_mean():
    with pytest.raises(ValueError, match="zero mean"):
        harmonic_neumann_extension(band_limited(32, 1) + 1.0, SLAB)


def _cos_mode(grid, m, k1, k2, amp=1.0):
    mz = m * math.pi / grid.z_max
    return SlabField.from_function(grid, lambda z, x1, x2: amp * np.cos(mz * z) * np.cos(k1 * x1 + k2 * x2))


def test_neumann_poisson_diagonal_mode():
    om = _cos_mode(SLAB, 1, 2, 1, amp=-2.0)
    psi = solve_neumann_poisson(om)
    lam = (math.pi / SLAB.z_max) ** 2 + 5.0
    assert close(psi.values, -om.values / lam, 1e-12)


def test_neumann_poisson_zero():
    assert close(solve_neumann_poisson(SlabField.zeros(SLAB)).values, 0.0)


def test_neumann_poisson_random_residual():
    rng = np.random.default_rng(4)
    om = SlabField.zeros(SLAB)
    for _ in range(8):
        m, k1, k2 = rng.integers(0, 6), rng.integers(-6, 7), rng.integers(-6, 7)
        om = om + _cos_mode(SLAB, m, k1, k2, amp=rng.normal())
    om = SlabField(SLAB, om.values - np.dot(SLAB.z_weights, om.values.mean(axis=(1, 2))) / SLAB.z_max)
    psi = solve_neumann_poisson(om)
    assert np.max(np.abs(slab_laplacian(psi).values - om.values)) < 1e-8
    assert np.max(np.abs(slab_dz(psi).values[[0, -1]])) < 1e-8


def test_decomposition_consistency():
    """A field built from Neumann data theta and Laplacian omega is recovered by the two solvers."""
    theta = band_limited(32, 2, k_max=5)
    psi1 = harmonic_neumann_extension(theta, SLAB)
    om = _cos_mode(SLAB, 2, 1, 3) + _cos_mode(SLAB, 0, 2, 0, 0.5)
    psi2 = solve_neumann_poisson(om)
    total = psi1 + psi2
    # -d_z at 0: psi2 contributes nothing, psi1 gives theta
    assert close(-(psi1.dz_at(0.0).values + slab_dz(psi2).values[0]), theta, 1e-10)
    assert np.max(np.abs(slab_laplacian(psi2).values - om.values)) < 1e-8
    assert total.values.shape == SLAB.shape


def test_trace_slice_on_and_off_nodes():
    u = SlabField.from_function(SLAB, lambda z, x1, x2: np.exp(-z) * np.cos(x1))
    c = mode_sum(G32, [(1, 0, 1.0, 0.0)])
    assert close(trace_slice(u, 0.0), c)
    assert close(trace_slice(u, 1.0), math.exp(-1.0) * c.values, 1e-12)  # z=1 is a node (dz = 1/16)
    z0 = 0.3 + 1e-3
    err = np.max(np.abs(trace_slice(u, z0).values - math.exp(-z0) * c.values))
    assert err < SLAB.dz**4  # cubic Lagrange: error O(dz^4)


def test_trace_slice_convergence_order():
    errs = []
    for nz in (17, 33, 65):
        g = SlabGrid3(TorusGrid2(8, 8), nz, 2.0)
        u = SlabField.from_function(g, lambda z, x1, x2: np.sin(3 * z) + 0 * x1)
        z0 = 0.5 * (g.z[3] + g.z[4])
        errs.append(np.max(np.abs(trace_slice(u, z0).values - math.sin(3 * z0))))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 3.5)


def test_trace_estimate_h_half():
    """||u(0)||_{H^1/2} <= 1.05 ||grad u||_{L^2(slab)} for random slab fields."""
    g = SlabGrid3(G32, 65, 4.0)
    rng = np.random.default_rng(8)
    for _ in range(5):
        u = SlabField.zeros(g)
        for _ in range(6):
            m, k1, k2 = rng.integers(0, 8), rng.integers(-5, 6), rng.integers(-5, 6)
            u = u + _cos_mode(g, m, k1, k2, amp=rng.normal())
        u0 = u.level(0)
        h_half = math.sqrt(TWO_PI**2 * np.sum(G32.kabs * np.abs(u0.coeffs) ** 2))
        grads = [partial(u.level(j), 1).values for j in range(g.nz)]
        g1 = SlabField(g, np.stack(grads))
        g2 = SlabField(g, np.stack([partial(u.level(j), 2).values for j in range(g.nz)]))
        grad_sq = g1.integral_sq() + g2.integral_sq() + slab_dz(u).integral_sq()
        assert h_half <= 1.05 * math.sqrt(grad_sq)


# --- persistence -------------------------------------------------------------------


def test_snapshot_roundtrip(tmp_path):
    f = band_limited(16, 0)
    write_snapshot(tmp_path / "f.qgf", f)
    g = read_snapshot(tmp_path / "f.qgf")
    assert np.array_equal(g.values, f.values)
    s = _cos_mode(SlabGrid3(TorusGrid2(8, 8), 9, 1.5), 1, 1, 0)
    write_snapshot(tmp_path / "s.qgf", s)
    t = read_snapshot(tmp_path / "s.qgf")
    assert np.array_equal(t.values, s.values) and t.grid == s.grid


def test_snapshot_rejects_garbage(tmp_path):
    (tmp_path / "bad.qgf").write_bytes(b"NOPE 1 2\n")
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "bad.qgf")


def test_series_interpolation_and_roundtrip(tmp_path):
    a, b = band_limited(16, 0), band_limited(16, 1)
    s = FieldSeries([0.0, 2.0], [a, b])
    assert close(s.at(0.5), 0.75 * a.values + 0.25 * b.values, 1e-15)
    s.save(tmp_path, "th", steps=[0, 10])
    r = FieldSeries.load(tmp_path, "th")
    assert np.array_equal(r.times, s.times) and close(r.fields[1], b, 0.0)
    with pytest.raises(ValueError):
        s.at(2.5)


def test_apply_multiplier_zeroes_nyquist_for_odd_symbols():
    g = TorusGrid2(8, 8)
    f = BoundaryField(g, values=np.cos(4 * g.coords[0]))  # pure Nyquist mode
    out = apply_multiplier(f, 1j * g.wavenumbers[0], odd_axis=1)
    assert close(out, 0.0)

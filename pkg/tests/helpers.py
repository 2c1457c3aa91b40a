"""Shared test data builders and brute-force oracles."""

import numpy as np

from qgslab.spectral_core import BoundaryField, TorusGrid2

TWO_PI = 2.0 * np.pi


def band_limited(n, seed, k_max=8, amp=1.0, slope=1.0):
    """Mean-zero random field with modes 1 <= |k| <= k_max, sup-normalised to ``amp``."""
    rng = np.random.default_rng(seed)
    grid = TorusGrid2(n, n)
    k = np.fft.fftfreq(n, 1.0 / n)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    kabs = np.hypot(k1, k2)
    c = np.fft.fft2(rng.standard_normal((n, n)))
    c = np.where((kabs >= 1) & (kabs <= k_max), c / np.maximum(kabs, 1.0) ** slope, 0.0)
    v = np.fft.ifft2(c).real
    return BoundaryField(grid, values=v * amp / np.abs(v).max())


def mode_sum(grid, terms):
    """Evaluate ``sum a cos(k.x) + b sin(k.x)`` for ``terms = [(k1, k2, a, b), ...]`` on the nodes."""
    x1, x2 = grid.coords
    out = np.zeros(grid.shape)
    for k1, k2, a, b in terms:
        ph = k1 * x1 + k2 * x2
        out += a * np.cos(ph) + b * np.sin(ph)
    return BoundaryField(grid, values=out)


def dft_multiplier(f, symbol):
    """Apply ``symbol(k1, k2)`` mode by mode with an explicit DFT double loop (small grids only)."""
    n1, n2 = f.grid.shape
    x1, x2 = f.grid.coords
    out = np.zeros((n1, n2), dtype=complex)
    for a in range(n1):
        ka = a if a < n1 // 2 else a - n1
        for b in range(n2):
            kb = b if b < n2 // 2 else b - n2
            e = np.exp(1j * (ka * x1 + kb * x2))
            c = np.sum(f.values * np.conj(e)) / (n1 * n2)
            out += symbol(ka, kb) * c * e
    return out


def truncation_energy_oracle(series, ladder):
    """Direct quadrature: per-snapshot integrals, then piecewise-linear sup and trapezoid in time."""
    t0 = ladder.t0
    out = []
    for lev, start in zip(ladder.levels, ladder.mapped_times):
        mass, diss = [], []
        for f in series.fields:
            v = np.maximum(f.values - lev, 0.0)
            mass.append(np.sum(v * v) * f.grid.cell_area)
            c = np.fft.rfft2(v) / f.grid.size
            n2 = f.grid.n2
            k1 = np.fft.fftfreq(f.grid.n1, 1 / f.grid.n1)[:, None]
            k2 = np.arange(c.shape[1])[None, :]
            w = np.full(c.shape[1], 2.0)
            w[0] = 1.0
            if n2 % 2 == 0:
                w[-1] = 1.0
            diss.append(TWO_PI**2 * np.sum(w[None, :] * np.hypot(k1, k2) * np.abs(c) ** 2))
        knots = np.unique(np.concatenate([[start, t0], series.times[(series.times > start) & (series.times < t0)]]))
        m = np.interp(knots, series.times, mass)
        d = np.interp(knots, series.times, diss)
        out.append(m.max() + np.sum(0.5 * (d[1:] + d[:-1]) * np.diff(knots)))
    return np.array(out)

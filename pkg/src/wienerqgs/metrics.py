"""Estimation error and density distances."""

from __future__ import annotations

import numpy as np

from .gauss import GaussianMixture


def mse(true_states, estimates):
    """Mean over time of the squared Euclidean error."""
    x = np.asarray(true_states, dtype=float)
    e = np.asarray(estimates, dtype=float)
    if x.shape[0] != e.shape[0]:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {e.shape[0]}")
    d = (x - e).reshape(x.shape[0], -1)
    return float(np.mean(np.sum(d * d, axis=1)))


def marginal_density(mix, grid, coord=0):
    """Density of coordinate ``coord`` of a mixture on a 1-D grid."""
    m = mix.marginal([coord]) if mix.dim > 1 else mix
    if not m.normalized:
        m = m.normalize()
    return m.pdf(np.asarray(grid, dtype=float)[:, None])


def _on_grid(obj, grid):
    if isinstance(obj, GaussianMixture):
        return marginal_density(obj, grid)
    vals = np.asarray(obj, dtype=float)
    if vals.shape != grid.shape:
        raise ValueError(f"density has {vals.shape} values for a grid of {grid.shape}")
    return vals


def pdf_distance(a, b, grid):
    """L1 distance on a uniform grid: ``sum |p_a - p_b| * step``.

    ``a`` and ``b`` are mixtures or density values already on ``grid``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1-D array of at least 2 points")
    steps = np.diff(grid)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError("grid must be uniform")
    pa = _on_grid(a, grid)
    pb = _on_grid(b, grid)
    return float(np.sum(np.abs(pa - pb)) * steps[0])


def default_grid(mean, sd, points=400, lo=None, hi=None):
    """``mean +- 5 sd`` unless ``lo``/``hi`` are given."""
    lo = mean - 5.0 * sd if lo is None else lo
    hi = mean + 5.0 * sd if hi is None else hi
    return np.linspace(lo, hi, int(points))

"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array


def as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def orbit_rng(master_seed, index):
    """Substream for orbit ``index``: ``SeedSequence(master_seed, spawn_key=(index,))``.

    This is the only seed-splitting rule in the package; ensemble results
    depend on it and nothing else, so they do not change with worker count.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def check_symbols(symbols):
    s = check_array(np.asarray(symbols).reshape(-1, 1), dtype=np.int64,
                    ensure_min_samples=2)
    s = s.ravel()
    if s.min() < 0:
        raise ValueError("symbols must be non-negative")
    return s


def check_series(X, ensure_2d=True):
    """Return a float array of shape ``(n_orbits, n_steps)``.

    One-dimensional input is treated as a single orbit.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return check_array(X, dtype=np.float64, ensure_2d=ensure_2d)


def check_grid(grid, n_max):
    grid = np.asarray(grid, dtype=np.int64).ravel()
    if grid.size == 0:
        raise ValueError("empty grid")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if grid[0] < 1 or grid[-1] > n_max:
        raise ValueError(f"grid must lie in [1, {n_max}]")
    return grid


def geometric_grid(start, stop, points):
    """Strictly increasing integer grid, roughly geometric."""
    g = np.unique(np.round(np.geomspace(start, stop, points)).astype(np.int64))
    return g

"""Brownian ensembles and canonical-process alpha paths on a time grid."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .hybrid import AlphaGrid, TimeGrid

SQRT3_OVER_PI = np.sqrt(3.0) / np.pi


def liu_normal_inverse(alpha, t=1.0):
    """Inverse uncertainty distribution of the canonical process at time ``t``.

    ``(sqrt(3) t / pi) * ln(alpha / (1 - alpha))``.
    """
    a = np.asarray(alpha, dtype=float)
    if np.any(a <= 0.0) or np.any(a >= 1.0):
        raise ConfigurationError("alpha must lie in the open interval (0, 1)")
    return SQRT3_OVER_PI * t * np.log(a / (1.0 - a))


@dataclass(frozen=True)
class PathBundle:
    """Simulated drivers on a common time grid.

    Attributes
    ----------
    grid : TimeGrid
    alpha : AlphaGrid
    brownian : ndarray, shape (M, N+1, m)
    canonical : ndarray, shape (L, N+1, d)
    seed : int
    """

    grid: TimeGrid
    alpha: AlphaGrid
    brownian: np.ndarray
    canonical: np.ndarray
    seed: int = 0

    @property
    def L(self):
        return self.canonical.shape[0]

    @property
    def M(self):
        return self.brownian.shape[0]

    @property
    def N(self):
        return self.grid.N

    @property
    def m(self):
        return self.brownian.shape[2]

    @property
    def d(self):
        return self.canonical.shape[2]

    @property
    def dB(self):
        """Brownian increments, shape (M, N, m)."""
        return np.diff(self.brownian, axis=1)

    @property
    def dC(self):
        """Canonical increments, shape (L, N, d)."""
        return np.diff(self.canonical, axis=1)


def _path_normals(seed, start, stop, N, m):
    out = np.empty((stop - start, N, m))
    for i in range(start, stop):
        # one Philox key per path: results do not depend on how paths are chunked
        key = np.array([seed, i], dtype=np.uint64)
        out[i - start] = np.random.Generator(np.random.Philox(key=key)).standard_normal((N, m))
    return out


def gen_brownian(grid, m, ensemble, threads=1):
    """Exact Gaussian increments on ``grid`` for ``ensemble.paths`` paths.

    Returns an array of shape ``(M, N+1, m)`` with ``B_0 = 0``.
    """
    if m < 1:
        raise ConfigurationError(f"dims.m must be >= 1, got {m}", ["dims.m"])
    M, N = ensemble.paths, grid.N
    if M < 1 or N < 1:
        raise ConfigurationError("need at least one path and one step")
    threads = max(1, int(threads))
    bounds = np.linspace(0, M, min(threads, M) + 1).astype(int)
    jobs = list(zip(bounds[:-1], bounds[1:]))
    if len(jobs) == 1:
        z = _path_normals(ensemble.seed, 0, M, N, m)
    else:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            parts = pool.map(lambda ab: _path_normals(ensemble.seed, ab[0], ab[1], N, m), jobs)
            z = np.concatenate(list(parts), axis=0)
    z *= np.sqrt(grid.dt)[None, :, None]
    B = np.zeros((M, N + 1, m))
    np.cumsum(z, axis=1, out=B[:, 1:])
    return B


def gen_canonical(grid, d, alpha):
    """Linear alpha paths ``C_t(alpha_j) = Phi^{-1}(alpha_j) t``, shape ``(L, N+1, d)``.

    All ``d`` components share the same level (comonotone components).
    """
    if d < 1:
        raise ConfigurationError(f"dims.d must be >= 1, got {d}", ["dims.d"])
    slope = liu_normal_inverse(alpha.levels)
    C = slope[:, None] * grid.nodes[None, :]
    return np.repeat(C[:, :, None], d, axis=2)


def simulate(grid, ensemble, m=1, d=1, threads=1):
    """Generate a :class:`PathBundle` for ``grid`` and ``ensemble``."""
    return PathBundle(grid=grid, alpha=ensemble.alpha,
                      brownian=gen_brownian(grid, m, ensemble, threads),
                      canonical=gen_canonical(grid, d, ensemble.alpha),
                      seed=ensemble.seed)


def dump_paths_csv(bundle, path):
    """Write all sample paths as long-format CSV.

    Brownian rows carry ``alpha_index = -1`` and canonical rows
    ``path_index = -1``: each process does not depend on the other coordinate.
    """
    t = bundle.grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha_index", "path_index", "node_index", "time",
                    "component_kind", "component_index", "value"])
        for i in range(bundle.M):
            for k in range(bundle.N + 1):
                for c in range(bundle.m):
                    w.writerow([-1, i, k, f"{t[k]:.17e}", "B", c, f"{bundle.brownian[i, k, c]:.17e}"])
        for j in range(bundle.L):
            for k in range(bundle.N + 1):
                for c in range(bundle.d):
                    w.writerow([j, -1, k, f"{t[k]:.17e}", "C", c, f"{bundle.canonical[j, k, c]:.17e}"])

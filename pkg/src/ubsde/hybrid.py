"""Discrete hybrid sample space and the two-layer expectation.

A sample is a cell ``(j, i)``: ``j`` indexes a quantile level of the
uncertainty coordinate, ``i`` a Monte-Carlo path of the Brownian
coordinate.  The expectation of an uncertain random variable is taken
over the uncertainty coordinate first (a Choquet-type integral against the
uncertain measure) and then averaged over paths.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, InvalidValueError


@dataclass(frozen=True)
class TimeGrid:
    """Time nodes ``0 = t_0 < t_1 < ... < t_N = T``."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ConfigurationError("time grid needs at least two nodes", ["grid.N"])
        if nodes[0] != 0.0:
            raise ConfigurationError("time grid must start at 0", ["grid.nodes"])
        if not np.all(np.isfinite(nodes)) or np.any(np.diff(nodes) <= 0):
            raise ConfigurationError("time nodes must be finite and strictly increasing",
                                     ["grid.nodes"])
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, T, N):
        if not isinstance(N, (int, np.integer)) or N < 1:
            raise ConfigurationError(f"grid.N must be a positive integer, got {N!r}", ["grid.N"])
        if not np.isfinite(T) or T <= 0:
            raise ConfigurationError(f"grid.T must be positive, got {T!r}", ["grid.T"])
        nodes = np.linspace(0.0, float(T), int(N) + 1)
        nodes[-1] = float(T)
        return cls(nodes)

    @property
    def T(self):
        return float(self.nodes[-1])

    @property
    def N(self):
        return self.nodes.size - 1

    @property
    def dt(self):
        """Step lengths, shape ``(N,)``."""
        return np.diff(self.nodes)

    def index_of(self, t):
        """Index of the node closest to ``t``."""
        return int(np.argmin(np.abs(self.nodes - t)))


@dataclass(frozen=True)
class AlphaGrid:
    """Quantile levels in (0, 1) with quadrature weights.

    Levels and weights must be symmetric about 1/2 so that fields that are
    antisymmetric in alpha integrate to exactly zero.
    """

    levels: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if levels.ndim != 1 or levels.size == 0 or weights.shape != levels.shape:
            raise ConfigurationError("alpha levels and weights must be matching 1-d arrays",
                                     ["ensemble.L"])
        if np.any(levels <= 0.0) or np.any(levels >= 1.0):
            raise ConfigurationError("alpha levels must lie in the open interval (0, 1)",
                                     ["alpha.levels"])
        if np.any(np.diff(levels) <= 0):
            raise ConfigurationError("alpha levels must be strictly increasing", ["alpha.levels"])
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("alpha weights must be nonnegative and sum to 1",
                                     ["alpha.weights"])
        if (np.max(np.abs(levels + levels[::-1] - 1.0)) > 1e-12
                or np.max(np.abs(weights - weights[::-1])) > 1e-12):
            raise ConfigurationError("alpha grid must be symmetric about 1/2", ["alpha.levels"])
        levels.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, L=99):
        """Equally weighted levels ``j / (L + 1)``, ``j = 1..L``."""
        if L < 1:
            raise ConfigurationError(f"ensemble.L must be >= 1, got {L}", ["ensemble.L"])
        levels = np.arange(1, L + 1) / (L + 1.0)
        return cls(levels, np.full(L, 1.0 / L))

    @classmethod
    def midpoint(cls, L):
        """Midpoint rule on (0, 1): levels ``(j - 1/2) / L``."""
        if L < 1:
            raise ConfigurationError(f"ensemble.L must be >= 1, got {L}", ["ensemble.L"])
        levels = (np.arange(1, L + 1) - 0.5) / L
        return cls(levels, np.full(L, 1.0 / L))

    @classmethod
    def gauss_legendre(cls, L):
        """Gauss-Legendre nodes mapped to (0, 1)."""
        x, w = np.polynomial.legendre.leggauss(L)
        levels = 0.5 * (x + 1.0)
        w = 0.5 * w
        # leggauss is symmetric only to ~1e-16; enforce it exactly
        levels = 0.5 * (levels + (1.0 - levels[::-1]))
        w = 0.5 * (w + w[::-1])
        return cls(levels, w / w.sum())

    @classmethod
    def default(cls):
        return cls.uniform(99)

    @property
    def L(self):
        return self.levels.size


@dataclass(frozen=True)
class HybridEnsemble:
    """Alpha grid crossed with ``paths`` Monte-Carlo paths, driven by ``seed``."""

    alpha: AlphaGrid = field(default_factory=AlphaGrid.default)
    paths: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.paths, (int, np.integer)) or self.paths < 1:
            raise ConfigurationError(f"ensemble.paths must be a positive integer, got {self.paths!r}",
                                     ["ensemble.paths"])
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError(f"ensemble.seed must be an unsigned 64-bit integer, got {self.seed!r}",
                                     ["ensemble.seed"])

    @property
    def size(self):
        return self.alpha.L * self.paths


class UncertainRandomField:
    """Values indexed by (alpha level, path, time node, component).

    ``values`` may be a broadcast view (zero strides along alpha or path) to
    keep memory bounded for fields that do not vary along one coordinate.
    """

    def __init__(self, values, shape=None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 3:
            values = values[..., None]
        if values.ndim < 4:
            raise ConfigurationError("field values need axes (alpha, path, node, component...)")
        if shape is not None:
            values = np.broadcast_to(values, tuple(shape))
        if not np.all(np.isfinite(values)):
            raise InvalidValueError("uncertain random field contains non-finite values")
        self.values = values

    @property
    def shape(self):
        return self.values.shape

    @property
    def L(self):
        return self.values.shape[0]

    @property
    def M(self):
        return self.values.shape[1]

    @property
    def nodes(self):
        return self.values.shape[2]

    def at(self, k):
        """Cross-section at node ``k``: shape ``(L, M, component...)``."""
        return self.values[:, :, k]

    def __repr__(self):
        return f"UncertainRandomField(shape={self.shape})"


class Estimate(NamedTuple):
    value: np.ndarray | float
    stderr: np.ndarray | float


def _tail_measure(mask, weights):
    """Uncertain measure of the alpha-cell set ``mask`` (axis 0).

    The generating events are the one-sided tails ``{alpha <= a}`` and
    ``{alpha >= a}`` whose measure is their weight.  A general set gets the
    largest tail weight it contains when that exceeds 1/2, one minus the
    largest tail weight its complement contains when that exceeds 1/2, and
    1/2 otherwise.  The result is self-dual and reduces to the plain weight
    sum on tails.
    """
    w = weights[:, None]

    def inner(m):
        prefix = (np.cumprod(m, axis=0) * w).sum(axis=0)
        suffix = (np.cumprod(m[::-1], axis=0) * w[::-1]).sum(axis=0)
        return np.maximum(prefix, suffix)

    a = inner(mask)
    c = inner(~mask)
    return np.where(a > 0.5, a, np.where(c > 0.5, 1.0 - c, 0.5))


def _choquet(values, weights):
    """``u_min + int M{xi >= r} dr`` per column of ``values`` (axis 0 = alpha)."""
    u = np.sort(values, axis=0)
    total = u[0].copy()
    for i in range(1, u.shape[0]):
        du = u[i] - u[i - 1]
        if not np.any(du):
            continue
        total += du * _tail_measure(values >= u[i][None, :], weights)
    return total


def expect_over_alpha(values, alpha):
    """Uncertain expectation along axis 0 of ``values``.

    Columns that are monotone in alpha use the quantile quadrature
    ``sum_j w_j v_j``; other columns use the dual Choquet integral.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[0] != alpha.L:
        raise ConfigurationError(f"expected {alpha.L} alpha levels, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise InvalidValueError("non-finite value passed to the uncertain expectation")
    tail_shape = v.shape[1:]
    flat = v.reshape(alpha.L, -1)
    out = np.tensordot(alpha.weights, flat, axes=(0, 0))
    if alpha.L > 2:
        d = np.diff(flat, axis=0)
        monotone = np.all(d >= 0, axis=0) | np.all(d <= 0, axis=0)
        rough = np.flatnonzero(~monotone)
        # chunked: the Choquet pass allocates (L, L, chunk) worth of masks
        chunk = max(1, 2_000_000 // (alpha.L * alpha.L))
        for s in range(0, rough.size, chunk):
            cols = rough[s:s + chunk]
            out[cols] = _choquet(flat[:, cols], alpha.weights)
    return out.reshape(tail_shape)


def uncertain_expectation(values_per_alpha, alpha):
    """Expected value over the uncertainty coordinate of one variable.

    Parameters
    ----------
    values_per_alpha : sequence of float
        One value per level of ``alpha``.
    alpha : AlphaGrid

    Returns
    -------
    float
    """
    v = np.asarray(values_per_alpha, dtype=float)
    if v.ndim != 1:
        raise ConfigurationError("uncertain_expectation takes one value per alpha level")
    return float(expect_over_alpha(v, alpha))


def chimera_mean(values, alpha):
    """Uncertain expectation per path, then path average with standard error.

    ``values`` has shape ``(L, M, ...)``.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim < 2 or v.shape[1] == 0:
        raise ConfigurationError("empty ensemble: no paths to average over")
    per_path = expect_over_alpha(v, alpha)
    M = per_path.shape[0]
    mean = per_path.mean(axis=0)
    if M > 1:
        stderr = per_path.std(axis=0, ddof=1) / np.sqrt(M)
    else:
        stderr = np.full_like(mean, np.inf)
    return Estimate(mean, stderr)


def chimera_expectation(field, alpha, at=None):
    """``E_P[E_M[field]]`` at node ``at``.

    ``field`` is an :class:`UncertainRandomField` (``at`` required) or an
    array of per-sample values of shape ``(L, M[, p])``.  Returns an
    :class:`Estimate` holding the p-vector and its Monte-Carlo standard
    error.
    """
    if isinstance(field, UncertainRandomField):
        if at is None:
            raise ConfigurationError("node index required for a time-indexed field")
        values = field.at(at)
    else:
        values = np.asarray(field, dtype=float)
        if at is not None:
            values = values[:, :, at]
    if values.size == 0:
        raise ConfigurationError("empty ensemble: no samples to take expectations over")
    if values.ndim == 2:
        values = values[..., None]
    return chimera_mean(values, alpha)


def conditional_on_brownian_filtration(values, k, bundle, basis=None):
    """Project per-sample ``values`` onto the Brownian information at node ``k``.

    The projection is done separately for every alpha level, never mixing
    samples across levels.  ``values`` is an ``(L, M[, p])`` array or an
    :class:`UncertainRandomField`, in which case its terminal node is used.
    Returns an ``(L, M, p)`` array of fitted values.
    """
    from .condexp import RegressionBasis, fit_conditional_expectation

    if isinstance(values, UncertainRandomField):
        values = values.at(-1)
    v = np.asarray(values, dtype=float)
    if v.ndim == 2:
        v = v[..., None]
    L, M = bundle.L, bundle.M
    v = np.broadcast_to(v, (L, M) + v.shape[2:])
    basis = basis or RegressionBasis("brownian", 2)
    out = np.empty(v.shape)
    for j in range(L):
        out[j] = fit_conditional_expectation(v[j], k, basis, bundle, j).fitted
    return out

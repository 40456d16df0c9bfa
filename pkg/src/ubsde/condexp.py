"""Least-squares Monte Carlo conditional expectations and martingale representation.

Conditioning is always done for one alpha level at a time, over the
Brownian paths only.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, DegradedBasisWarning, InvalidValueError

RIDGE = 1e-10
_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class RegressionBasis:
    """Monomials up to total ``degree`` in the node-k regressors.

    ``kind='brownian'`` uses the Brownian position ``B_{t_k}`` only.
    ``kind='state'`` appends a caller-supplied state vector (for instance
    the previous iterate of X) to the Brownian position.
    """

    kind: str = "brownian"
    degree: int = 2

    def __post_init__(self):
        if self.kind not in ("brownian", "state"):
            raise ConfigurationError(f"basis.kind must be 'brownian' or 'state', got {self.kind!r}",
                                     ["basis.kind"])
        if int(self.degree) != self.degree or self.degree < 0:
            raise ConfigurationError(f"basis.degree must be a nonnegative integer, got {self.degree}",
                                     ["basis.degree"])

    def n_features(self, n_vars):
        return sum(len(list(itertools.combinations_with_replacement(range(n_vars), r)))
                   for r in range(self.degree + 1))

    def feature_count(self, m, state_dim=0):
        return self.n_features(m + (state_dim if self.kind == "state" else 0))

    def design(self, z):
        """Feature matrix ``(M, K)`` from regressors ``z`` of shape ``(M, n)``."""
        z = np.asarray(z, dtype=float)
        M, n = z.shape
        cols = [np.ones(M)]
        for r in range(1, self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(n), r):
                cols.append(np.prod(z[:, combo], axis=1))
        return np.stack(cols, axis=1)

    def regressors(self, bundle, k, state=None):
        z = bundle.brownian[:, k, :]
        if self.kind == "state":
            if state is None:
                raise ConfigurationError("state basis needs a state array")
            s = np.asarray(state, dtype=float).reshape(bundle.M, -1)
            z = np.concatenate([z, s], axis=1)
        return z


@dataclass
class CondexpEstimate:
    """Result of one projection at a fixed (alpha level, node).

    Attributes
    ----------
    coefficients : ndarray, shape (K, q)
        Coefficients on the full feature list; features dropped as constant
        get zero (their value is carried by the intercept).
    fitted : ndarray, shape (M, q)
    residual_norm : ndarray, shape (q,)
        RMS of target minus fitted values.
    rank : int
    degenerate : bool
        True when some features were constant on the sample.
    ridge : bool
        True when the ridge fallback was used.
    """

    coefficients: np.ndarray
    fitted: np.ndarray
    residual_norm: np.ndarray
    rank: int
    degenerate: bool
    ridge: bool


@dataclass
class _Factor:
    keep: np.ndarray
    q: np.ndarray | None
    r: np.ndarray | None
    piv: np.ndarray | None
    gram: np.ndarray | None
    design: np.ndarray
    rank: int
    degenerate: bool
    n_features: int


def _factorize(F):
    M, K = F.shape
    spread = np.abs(F - F[:1]).max(axis=0)
    scale = 1.0 + np.abs(F).max(axis=0)
    keep = spread > 1e-12 * scale
    keep[0] = True
    degenerate = not keep.all()
    Fk = F[:, keep]
    q, r, piv = linalg.qr(Fk, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > _RANK_RTOL * diag[0])) if diag.size else 0
    if rank < Fk.shape[1]:
        warnings.warn(f"regression basis has rank {rank} < {Fk.shape[1]} features; "
                      f"using ridge {RIDGE:g}", DegradedBasisWarning, stacklevel=3)
        gram = Fk.T @ Fk
        gram[np.diag_indices_from(gram)] += RIDGE * max(1.0, np.trace(gram) / gram.shape[0])
        return _Factor(keep, None, None, None, gram, Fk, rank, degenerate, K)
    return _Factor(keep, q, r, piv, None, Fk, rank, degenerate, K)


def _solve(fac, y):
    if fac.gram is not None:
        coef_k = linalg.solve(fac.gram, fac.design.T @ y, assume_a="pos")
        fitted = fac.design @ coef_k
    else:
        qty = fac.q.T @ y
        fitted = fac.q @ qty
        coef_p = linalg.solve_triangular(fac.r, qty)
        coef_k = np.empty_like(coef_p)
        coef_k[fac.piv] = coef_p
    coef = np.zeros((fac.n_features,) + y.shape[1:])
    coef[fac.keep] = coef_k
    return coef, fitted


class Projector:
    """Cached per-node projections for one bundle and basis.

    With the Brownian basis the design matrix at node k is the same for all
    alpha levels, so one factorization serves every level and every target
    column.  State bases are refactorized on every call.
    """

    def __init__(self, bundle, basis=None, min_ratio=10):
        self.bundle = bundle
        self.basis = basis or RegressionBasis()
        self.min_ratio = min_ratio
        self._cache = {}

    def _check_size(self, K):
        if self.bundle.M < self.min_ratio * K:
            raise ConfigurationError(
                f"ensemble.paths = {self.bundle.M} is below {self.min_ratio} x {K} basis features",
                ["ensemble.paths"])

    def factor(self, k, state=None):
        if self.basis.kind == "brownian" and k in self._cache:
            return self._cache[k]
        z = self.basis.regressors(self.bundle, k, state)
        F = self.basis.design(z)
        self._check_size(F.shape[1])
        fac = _factorize(F)
        if self.basis.kind == "brownian":
            self._cache[k] = fac
        return fac

    def fit(self, k, target, state=None):
        """Project ``target`` of shape ``(M,)`` or ``(M, q)`` onto node-k features."""
        y = np.asarray(target, dtype=float)
        squeeze = y.ndim == 1
        y2 = y.reshape(y.shape[0], -1)
        if y2.shape[0] != self.bundle.M:
            raise ConfigurationError(f"target has {y2.shape[0]} samples, ensemble has {self.bundle.M}")
        if not np.all(np.isfinite(y2)):
            raise InvalidValueError(f"non-finite regression target at node {k}")
        fac = self.factor(k, state)
        coef, fitted = _solve(fac, y2)
        res = np.sqrt(np.mean((y2 - fitted) ** 2, axis=0))
        if squeeze:
            coef, fitted = coef[:, 0], fitted[:, 0]
        else:
            coef = coef.reshape((coef.shape[0],) + y.shape[1:])
            fitted = fitted.reshape(y.shape)
        return CondexpEstimate(coef, fitted, res, fac.rank, fac.degenerate, fac.gram is not None)

    def project(self, k, values, state=None):
        """Fitted values for an ``(L, M, ...)`` array, level by level.

        With the Brownian basis all levels are projected in a single solve.
        """
        v = np.asarray(values, dtype=float)
        L, M = v.shape[:2]
        if self.basis.kind == "brownian":
            flat = np.moveaxis(v, 1, 0).reshape(M, -1)
            fitted = self.fit(k, flat).fitted.reshape((M, L) + v.shape[2:])
            return np.moveaxis(fitted, 0, 1)
        out = np.empty_like(v)
        for j in range(L):
            s = None if state is None else state[j]
            out[j] = self.fit(k, v[j], s).fitted
        return out

    def degenerate(self, k):
        return self.factor(k).degenerate if self.basis.kind == "brownian" else False


def fit_conditional_expectation(target, k, basis, bundle, alpha_index=0, state=None):
    """Estimate ``E[target | F_{t_k}]`` for one alpha level.

    Parameters
    ----------
    target : array_like, shape (M,) or (M, p), or (L, M[, p])
        Per-path values.  A leading alpha axis is indexed by ``alpha_index``.
    k : int
        Conditioning node.
    basis : RegressionBasis
    bundle : PathBundle
    alpha_index : int
    state : array_like, optional
        Extra regressors for ``basis.kind == 'state'``, shape ``(M, s)``.

    Returns
    -------
    CondexpEstimate
    """
    y = np.asarray(target, dtype=float)
    if y.ndim == 3 or (y.ndim == 2 and y.shape == (bundle.L, bundle.M) and bundle.L != bundle.M):
        y = y[alpha_index]
    if not 0 <= k <= bundle.N:
        raise ConfigurationError(f"node {k} outside 0..{bundle.N}")
    return Projector(bundle, basis).fit(k, y, state)


@dataclass
class Representation:
    """Integrand ``Y`` of a discrete martingale together with its error budget.

    ``budget = discretization + regression``: the first term estimates the
    part of each increment not captured by ``Y dB`` (unbiased residual
    variance), the second the sampling error of the fitted ``Y``.
    """

    Y: np.ndarray
    budget: np.ndarray
    discretization: np.ndarray
    regression: np.ndarray


def represent_martingale(martingale, bundle, basis=None, projector=None):
    """Regress ``dM_k dB_k^T / dt`` on node-k features.

    Parameters
    ----------
    martingale : array_like, shape (L, M, N+1, p) or (L, M, N+1)
    bundle : PathBundle
    basis : RegressionBasis, optional

    Returns
    -------
    Representation
        ``Y`` has shape ``(L, M, N+1, p, m)``; the value at the last node is
        a copy of the previous one (it never enters a left-point sum).
        ``budget`` has one entry per alpha level.
    """
    Mt = np.asarray(martingale, dtype=float)
    if Mt.ndim == 3:
        Mt = Mt[..., None]
    L, M, N = bundle.L, bundle.M, bundle.N
    Mt = np.broadcast_to(Mt, (L, M, N + 1, Mt.shape[-1]))
    proj = projector or Projector(bundle, basis)
    dB = bundle.dB
    dt = bundle.grid.dt
    p, m = Mt.shape[-1], bundle.m
    Y = np.empty((L, M, N + 1, p, m))
    disc = np.zeros(L)
    reg = np.zeros(L)
    K = proj.basis.feature_count(m)
    for k in range(N):
        dM = Mt[:, :, k + 1] - Mt[:, :, k]
        target = dM[..., :, None] * dB[None, :, k, None, :] / dt[k]
        Y[:, :, k] = proj.project(k, target)
        eps = dM - (Y[:, :, k] * dB[None, :, k, None, :]).sum(-1)
        disc += (eps ** 2).sum(-1).mean(axis=1) * M / max(M - K, 1)
        tres = ((target - Y[:, :, k]) ** 2).sum(axis=(-1, -2)).mean(axis=1)
        reg += dt[k] * K / M * tres
    Y[:, :, N] = Y[:, :, N - 1]
    disc, reg = np.sqrt(disc), np.sqrt(reg)
    return Representation(Y, disc + reg, disc, reg)


def reconstruction_error(martingale, Y, bundle):
    """Per-level RMS of ``M_T - M_0 - sum Y(t_k) dB_k``."""
    Mt = np.asarray(martingale, dtype=float)
    if Mt.ndim == 3:
        Mt = Mt[..., None]
    ito = (Y[:, :, :-1] * bundle.dB[None, :, :, None, :]).sum(axis=(-1, 2))
    err = Mt[:, :, -1] - Mt[:, :, 0] - ito
    return np.sqrt((err ** 2).sum(-1).mean(axis=1))

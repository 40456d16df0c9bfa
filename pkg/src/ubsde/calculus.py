"""Ito-Liu integration and a numerical check of the Ito-Liu chain rule."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ContractViolation, InvalidValueError


@dataclass
class IntegrandPair:
    """Integrands against dB (``Y``, p x m) and dC (``Z``, p x d).

    Arrays must broadcast to ``(L, M, N+1, p, m)`` and ``(L, M, N+1, p, d)``;
    ``None`` means zero.
    """

    Y: np.ndarray | None = None
    Z: np.ndarray | None = None


def _check_range(bundle, a, b):
    if not (0 <= a < b <= bundle.N):
        raise ConfigurationError(f"integration nodes must satisfy 0 <= a < b <= N, got a={a}, b={b}")


def ito_liu_integral(pair, bundle, a=0, b=None, lookahead=False):
    """Left-endpoint sums ``sum Y(t_i) dB_i + sum Z(t_i) dC_i`` over ``[t_a, t_b]``.

    Returns an array of shape ``(L, M, p)``.  Pass ``lookahead=True`` when
    the integrands were built from future information; that is rejected.
    """
    if lookahead:
        raise ContractViolation("integrand flagged as non-adapted (uses future information)")
    b = bundle.N if b is None else b
    _check_range(bundle, a, b)
    total = 0.0
    if pair.Y is not None:
        Y = np.asarray(pair.Y, dtype=float)
        dB = bundle.dB[None, :, a:b, None, :]
        total = total + (Y[:, :, a:b] * dB).sum(axis=(-1, 2))
    if pair.Z is not None:
        Z = np.asarray(pair.Z, dtype=float)
        dC = bundle.dC[:, None, a:b, None, :]
        total = total + (Z[:, :, a:b] * dC).sum(axis=(-1, 2))
    if np.isscalar(total):
        raise ConfigurationError("integrand pair is empty")
    return np.broadcast_to(total, (bundle.L, bundle.M) + total.shape[2:]).copy()


def running_integral(pair, bundle):
    """Integral from 0 to every node, shape ``(L, M, N+1, p)``."""
    parts = []
    if pair.Y is not None:
        Y = np.asarray(pair.Y, dtype=float)
        parts.append((Y[:, :, :-1] * bundle.dB[None, :, :, None, :]).sum(axis=-1))
    if pair.Z is not None:
        Z = np.asarray(pair.Z, dtype=float)
        parts.append((Z[:, :, :-1] * bundle.dC[:, None, :, None, :]).sum(axis=-1))
    if not parts:
        raise ConfigurationError("integrand pair is empty")
    inc = sum(np.broadcast_to(q, np.broadcast_shapes(*[r.shape for r in parts])) for q in parts)
    inc = np.broadcast_to(inc, (bundle.L, bundle.M) + inc.shape[2:])
    out = np.zeros((bundle.L, bundle.M, bundle.N + 1) + inc.shape[3:])
    np.cumsum(inc, axis=2, out=out[:, :, 1:])
    return out


class MultiplicationTable:
    """Products of the differentials dt, dB^k, dC^i, reduced to dt coefficients.

    Only ``dB^k dB^l = delta_kl dt`` survives; every product involving dt or
    dC vanishes.
    """

    def __init__(self, m=1, d=1):
        self.m = m
        self.d = d
        n = 1 + m + d
        self.matrix = np.zeros((n, n))
        self.matrix[1:1 + m, 1:1 + m] = np.eye(m)

    def product(self, s1, s2):
        """Coefficient of dt in ``s1 * s2`` for symbols 'dt', ('dB', k), ('dC', i)."""
        return float(self.matrix[self._index(s1), self._index(s2)])

    def _index(self, s):
        if s == "dt":
            return 0
        kind, k = s
        if kind == "dB" and 0 <= k < self.m:
            return 1 + k
        if kind == "dC" and 0 <= k < self.d:
            return 1 + self.m + k
        raise ContractViolation(f"unknown differential {s!r}")


@dataclass
class Differential:
    """``u dt + v . dB + w . dC`` with ``v`` an m-vector and ``w`` a d-vector."""

    u: float | np.ndarray = 0.0
    v: np.ndarray | float = 0.0
    w: np.ndarray | float = 0.0

    def coefficients(self, m, d):
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if v.shape[-1] != m or w.shape[-1] != d:
            raise ContractViolation(
                f"differential has {v.shape[-1]} dB and {w.shape[-1]} dC components, "
                f"table expects {m} and {d}")
        u = np.asarray(self.u, dtype=float)[..., None]
        lead = np.broadcast_shapes(u.shape[:-1], v.shape[:-1], w.shape[:-1])
        return np.concatenate([np.broadcast_to(u, lead + (1,)),
                               np.broadcast_to(v, lead + (m,)),
                               np.broadcast_to(w, lead + (d,))], axis=-1)


def apply_product_rule(dx_k, dx_l, table=None):
    """dt coefficient of ``dX_k dX_l``: the dB parts contracted with delta_kl."""
    if table is None:
        m = np.atleast_1d(dx_k.v).shape[-1]
        d = np.atleast_1d(dx_k.w).shape[-1]
        table = MultiplicationTable(m, d)
    a = dx_k.coefficients(table.m, table.d)
    b = dx_l.coefficients(table.m, table.d)
    return np.einsum("...i,ij,...j->...", a, table.matrix, b)


@dataclass(frozen=True)
class SmoothFunction:
    """Scalar ``G(t, x)`` with its time derivative, gradient and Hessian.

    ``x`` has trailing axis ``p``; evaluators broadcast over leading axes.
    """

    name: str
    p: int
    value: Callable
    dt: Callable
    grad: Callable
    hess: Callable


def _zeros_like_scalar(t, x):
    return np.zeros(x.shape[:-1])


BUILTIN_G = {
    "x": SmoothFunction(
        "x", 1,
        value=lambda t, x: x[..., 0],
        dt=_zeros_like_scalar,
        grad=lambda t, x: np.ones_like(x),
        hess=lambda t, x: np.zeros(x.shape + (1,))),
    "x2": SmoothFunction(
        "x2", 1,
        value=lambda t, x: x[..., 0] ** 2,
        dt=_zeros_like_scalar,
        grad=lambda t, x: 2.0 * x,
        hess=lambda t, x: np.full(x.shape + (1,), 2.0)),
    "x1x2": SmoothFunction(
        "x1x2", 2,
        value=lambda t, x: x[..., 0] * x[..., 1],
        dt=_zeros_like_scalar,
        grad=lambda t, x: x[..., ::-1].copy(),
        hess=lambda t, x: np.broadcast_to(np.array([[0.0, 1.0], [1.0, 0.0]]),
                                          x.shape[:-1] + (2, 2)).copy()),
    "exp": SmoothFunction(
        "exp", 1,
        value=lambda t, x: np.exp(x[..., 0]),
        dt=_zeros_like_scalar,
        grad=lambda t, x: np.exp(x),
        hess=lambda t, x: np.exp(x)[..., None]),
    "tx": SmoothFunction(
        "tx", 1,
        value=lambda t, x: t * x[..., 0],
        dt=lambda t, x: x[..., 0].copy(),
        grad=lambda t, x: np.full_like(x, t),
        hess=lambda t, x: np.zeros(x.shape + (1,))),
}


def finite_difference_check(G, t, x, h=1e-5):
    """Largest relative gap between analytic and central-difference derivatives."""
    x = np.asarray(x, dtype=float)
    p = G.p
    worst = 0.0

    def rel(a, b):
        return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))

    fd_t = (G.value(t + h, x) - G.value(t - h, x)) / (2 * h)
    worst = max(worst, rel(G.dt(t, x), fd_t))
    for k in range(p):
        e = np.zeros(p)
        e[k] = h
        fd = (G.value(t, x + e) - G.value(t, x - e)) / (2 * h)
        worst = max(worst, rel(G.grad(t, x)[..., k], fd))
        fd_h = (G.grad(t, x + e) - G.grad(t, x - e)) / (2 * h)
        worst = max(worst, rel(G.hess(t, x)[..., :, k], fd_h))
    return float(worst)


@dataclass
class ResidualStats:
    rms: float
    max: float
    scale: float
    residual: np.ndarray
    lhs: np.ndarray


def ito_liu_residual(G, u, v, w, bundle, x0=0.0, table=None):
    """Compare ``G(T, X_T) - G(0, X_0)`` with the Ito-Liu expansion along X.

    ``X`` is built from its differential ``dX = u dt + v dB + w dC`` with
    ``u ~ (L, M, N, p)``, ``v ~ (L, M, N, p, m)`` and ``w ~ (L, M, N, p, d)``
    (broadcastable).  The right-hand side sums ``G_t dt + grad G . dX`` and
    half the Hessian contracted with the dt-coefficients of ``dX_k dX_l``.
    The dt and dB parts are evaluated at left endpoints; the dC part uses
    the trapezoid rule, which has the same limit for Lipschitz integrators.

    ``scale`` is the RMS of the left-hand side over the ensemble.
    """
    L, M, N, p = bundle.L, bundle.M, bundle.N, G.p
    m, d = bundle.m, bundle.d
    table = table or MultiplicationTable(m, d)
    dt = bundle.grid.dt
    t = bundle.grid.nodes
    u = np.broadcast_to(np.asarray(u, dtype=float), (L, M, N, p))
    v = np.broadcast_to(np.asarray(v, dtype=float), (L, M, N, p, m))
    w = np.broadcast_to(np.asarray(w, dtype=float), (L, M, N, p, d))
    dB = bundle.dB
    dC = bundle.dC

    x = np.broadcast_to(np.asarray(x0, dtype=float), (L, M, p)).copy()
    start = G.value(t[0], x)
    rhs = np.zeros((L, M))
    gx = G.grad(t[0], x)
    for k in range(N):
        dx_b = (v[:, :, k] * dB[None, :, k, None, :]).sum(-1)
        dx_c = (w[:, :, k] * dC[:, None, k, None, :]).sum(-1)
        dx = u[:, :, k] * dt[k] + dx_b + dx_c
        coeff = np.concatenate([u[:, :, k, :, None], v[:, :, k], w[:, :, k]], axis=-1)
        quad = np.einsum("...ki,ij,...lj->...kl", coeff, table.matrix, coeff)
        gt = G.dt(t[k], x)
        gxx = G.hess(t[k], x)
        x_next = x + dx
        gx_next = G.grad(t[k + 1], x_next)
        if not (np.all(np.isfinite(gt)) and np.all(np.isfinite(gx_next))
                and np.all(np.isfinite(gxx))):
            raise InvalidValueError(f"non-finite derivative of {G.name} at node {k}")
        # dB and dt terms at the left endpoint (Ito); the pathwise dC term
        # with the trapezoid rule, which is exact for linear alpha paths
        rhs += (gt * dt[k] + (gx * (u[:, :, k] * dt[k] + dx_b)).sum(-1)
                + 0.5 * ((gx + gx_next) * dx_c).sum(-1)
                + 0.5 * (gxx * quad).sum(axis=(-1, -2)) * dt[k])
        x, gx = x_next, gx_next
    lhs = G.value(t[-1], x) - start
    res = lhs - rhs
    return ResidualStats(rms=float(np.sqrt(np.mean(res ** 2))), max=float(np.max(np.abs(res))),
                         scale=float(np.sqrt(np.mean(lhs ** 2))), residual=res, lhs=lhs)

"""Coefficient triples (f, g, h), terminal conditions, and inversion of y -> h."""
from __future__ import annotations

import ast
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, InvalidValueError, NumericalFailure, ProbeWarning


@dataclass
class Driver:
    """Coefficients of ``dX = f dt + g dC + h dB``.

    Evaluators take ``(t, x, y)`` with ``x`` of trailing shape ``(p,)`` and
    ``y`` of trailing shape ``(p, m)`` and broadcast over leading axes.  They
    return arrays of trailing shape ``(p,)``, ``(p, d)`` and ``(p, m)``.

    ``lipschitz_c`` bounds f and g (in x and y jointly) and the x-dependence
    of h.  ``h_lipschitz_y`` and ``monotone_alpha`` sandwich the map
    ``y -> h(t, x, y)``::

        alpha |y1 - y2| <= |h(t,x,y1) - h(t,x,y2)| <= h_lipschitz_y |y1 - y2|

    When ``h_offset`` is given, ``h(t, x, y) = h_offset(t, x) + y`` and the
    inversion is a subtraction.
    """

    f: Callable
    g: Callable
    h: Callable | None = None
    lipschitz_c: float = 1.0
    monotone_alpha: float = 1.0
    h_lipschitz_y: float = 1.0
    p: int = 1
    m: int = 1
    d: int = 1
    name: str = "custom"
    h_offset: Callable | None = None
    depends_on_x: bool = True
    depends_on_y: bool = True

    def __post_init__(self):
        if self.h is None:
            if self.h_offset is None:
                raise ConfigurationError("driver needs h or h_offset")
            off = self.h_offset
            self.h = lambda t, x, y: off(t, x) + y
        for name in ("lipschitz_c", "monotone_alpha", "h_lipschitz_y"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"driver.{name} must be positive", [f"driver.{name}"])
        if self.monotone_alpha > self.h_lipschitz_y * (1 + 1e-12):
            raise ConfigurationError("monotone_alpha cannot exceed h_lipschitz_y",
                                     ["driver.monotone_alpha"])

    @property
    def additive_h(self):
        return self.h_offset is not None

    def check_origin(self, t=0.0):
        """``f(t,0,0)``, ``g(t,0,0)`` and ``h(t,0,0)`` must be finite."""
        x = np.zeros(self.p)
        y = np.zeros((self.p, self.m))
        for name in ("f", "g", "h"):
            if not np.all(np.isfinite(getattr(self, name)(t, x, y))):
                raise InvalidValueError(f"driver {self.name}: {name}(t, 0, 0) is not finite")

    def vanishes_at_origin(self, nodes):
        x = np.zeros(self.p)
        y = np.zeros((self.p, self.m))
        return all(not np.any(getattr(self, name)(t, x, y))
                   for t in nodes for name in ("f", "g", "h"))


def _zero_p(t, x, y):
    return np.zeros(np.shape(x))


def _zero_pd(d):
    def g(t, x, y):
        return np.zeros(np.shape(x) + (d,))
    return g


def _zero_offset(t, x):
    return np.zeros(np.shape(x) + (1,))


def zero(**_):
    return Driver(f=_zero_p, g=_zero_pd(1), h_offset=_zero_offset, lipschitz_c=1.0,
                  name="zero", depends_on_x=False, depends_on_y=False)


def linear_decay(a=0.5, **_):
    return Driver(f=lambda t, x, y: a * x, g=_zero_pd(1), h_offset=_zero_offset,
                  lipschitz_c=max(abs(a), 1e-12), name="linear_decay", depends_on_y=False)


def linear_y(b=0.3, **_):
    return Driver(f=lambda t, x, y: b * y[..., 0], g=_zero_pd(1), h_offset=_zero_offset,
                  lipschitz_c=max(abs(b), 1e-12), name="linear_y", depends_on_x=False)


def sin_y(c=0.3, **_):
    return Driver(f=lambda t, x, y: c * np.sin(y[..., 0]),
                  g=lambda t, x, y: c * np.cos(y),
                  h_offset=_zero_offset, lipschitz_c=abs(c), name="sin_y", depends_on_x=False)


def unit_g(**_):
    return Driver(f=_zero_p, g=lambda t, x, y: np.ones(np.shape(x) + (1,)), h_offset=_zero_offset,
                  lipschitz_c=1e-12, name="unit_g", depends_on_x=False, depends_on_y=False)


def xy_contraction(a=0.5, c=0.3, k=0.3, **_):
    return Driver(f=lambda t, x, y: a * x + c * np.sin(y[..., 0]),
                  g=_zero_pd(1),
                  h_offset=lambda t, x: k * x[..., None],
                  lipschitz_c=max(abs(a), abs(c), abs(k)), name="xy_contraction")


def nonlinear_h(**_):
    return Driver(f=_zero_p, g=_zero_pd(1), h=lambda t, x, y: y + 0.5 * np.sin(y),
                  lipschitz_c=1.5, monotone_alpha=0.5, h_lipschitz_y=1.5,
                  name="nonlinear_h", depends_on_x=False, depends_on_y=False)


def scaled_h(k=2.0, **_):
    return Driver(f=_zero_p, g=_zero_pd(1), h=lambda t, x, y: k * y,
                  lipschitz_c=abs(k), monotone_alpha=abs(k), h_lipschitz_y=abs(k),
                  name="scaled_h", depends_on_x=False, depends_on_y=False)


def identity_h(**_):
    return Driver(f=_zero_p, g=_zero_pd(1), h=lambda t, x, y: y, lipschitz_c=1.0,
                  name="identity_h", depends_on_x=False, depends_on_y=False)


def affine_full(**_):
    return Driver(f=lambda t, x, y: -0.2 * x + 0.1 * y[..., 0] + 0.05,
                  g=lambda t, x, y: 0.1 * x[..., None] + 0.1 * y,
                  h=lambda t, x, y: 0.2 * x[..., None] + 1.5 * y,
                  lipschitz_c=0.2, monotone_alpha=1.5, h_lipschitz_y=1.5, name="affine_full")


DRIVER_PRESETS = {
    "zero": (zero, "f = g = 0, h = y"),
    "linear_decay": (linear_decay, "f = a x (a = 0.5), g = 0, h = y"),
    "linear_y": (linear_y, "f = b y (b = 0.3), g = 0, h = y"),
    "sin_y": (sin_y, "f = c sin(y), g = c cos(y) (c = 0.3), h = y"),
    "unit_g": (unit_g, "f = 0, g = 1, h = y"),
    "xy_contraction": (xy_contraction, "f = a x + c sin(y), g = 0, h = k x + y"),
    "nonlinear_h": (nonlinear_h, "f = g = 0, h = y + 0.5 sin(y)"),
    "scaled_h": (scaled_h, "f = g = 0, h = k y (k = 2)"),
    "identity_h": (identity_h, "f = g = 0, h = y (general form, no offset shortcut)"),
    "affine_full": (affine_full, "f = -0.2x + 0.1y + 0.05, g = 0.1(x + y), h = 0.2x + 1.5y"),
}


def driver_preset(name, **params):
    try:
        factory = DRIVER_PRESETS[name][0]
    except KeyError:
        raise ConfigurationError(f"unknown driver preset {name!r}; known: {sorted(DRIVER_PRESETS)}",
                                 ["driver"]) from None
    return factory(**params)


@dataclass
class LipschitzReport:
    c_f: float
    c_g: float
    c_h: float
    c_h_y: float
    alpha_h: float
    declared_c: float
    declared_c_h_y: float
    declared_alpha: float
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


def _fro(a, nd):
    return np.sqrt((np.asarray(a) ** 2).reshape(a.shape[:a.ndim - nd] + (-1,)).sum(-1))


def probe_lipschitz(driver, samples=4000, seed=0, spread=3.0, T=1.0):
    """Measure difference quotients of the driver on random probe pairs.

    Half of the pairs are far apart, half are small perturbations so that
    local slopes are seen as well.  Violations of the declared constants
    are listed in the report and raise a :class:`ProbeWarning`.
    """
    rng = np.random.default_rng([seed, 0x11B5])
    p, m = driver.p, driver.m
    n = samples
    t = rng.uniform(0.0, T, n)
    x1 = rng.normal(0.0, spread, (n, p))
    y1 = rng.normal(0.0, spread, (n, p, m))
    step = np.where(np.arange(n)[:, None] < n // 2, spread, 1e-4)
    x2 = x1 + step * rng.normal(size=(n, p))
    y2 = y1 + step[..., None] * rng.normal(size=(n, p, m))

    def ev(fn, t, x, y):
        return np.stack([fn(t[i], x[i], y[i]) for i in range(n)])

    dxy = _fro(x1 - x2, 1) + _fro(y1 - y2, 2)
    f_q = _fro(ev(driver.f, t, x1, y1) - ev(driver.f, t, x2, y2), 1) / dxy
    g_q = _fro(ev(driver.g, t, x1, y1) - ev(driver.g, t, x2, y2), 2) / dxy
    h_q = _fro(ev(driver.h, t, x1, y1) - ev(driver.h, t, x2, y2), 2) / dxy
    hy = _fro(ev(driver.h, t, x1, y1) - ev(driver.h, t, x1, y2), 2) / _fro(y1 - y2, 2)
    rep = LipschitzReport(c_f=float(f_q.max()), c_g=float(g_q.max()), c_h=float(h_q.max()),
                          c_h_y=float(hy.max()), alpha_h=float(hy.min()),
                          declared_c=driver.lipschitz_c, declared_c_h_y=driver.h_lipschitz_y,
                          declared_alpha=driver.monotone_alpha)
    c_tol = driver.lipschitz_c * (1 + 1e-6)
    if rep.c_f > c_tol:
        rep.violations.append(f"f quotient {rep.c_f:.6g} exceeds declared c {driver.lipschitz_c}")
    if rep.c_g > c_tol:
        rep.violations.append(f"g quotient {rep.c_g:.6g} exceeds declared c {driver.lipschitz_c}")
    if rep.c_h > max(driver.lipschitz_c, driver.h_lipschitz_y) * (1 + 1e-6):
        rep.violations.append(f"h quotient {rep.c_h:.6g} exceeds declared constants")
    if rep.c_h_y > driver.h_lipschitz_y * (1 + 1e-6):
        rep.violations.append(f"h y-quotient {rep.c_h_y:.6g} exceeds declared {driver.h_lipschitz_y}")
    if rep.alpha_h < driver.monotone_alpha * (1 - 1e-6):
        rep.violations.append(f"h y-quotient {rep.alpha_h:.6g} below declared alpha "
                              f"{driver.monotone_alpha}")
    if rep.violations:
        warnings.warn(f"driver {driver.name}: " + "; ".join(rep.violations), ProbeWarning,
                      stacklevel=2)
    return rep


def _residual_norm(r):
    return np.sqrt((r ** 2).sum(axis=(-1, -2)))


def invert_h(driver, t, x, ybar, tol=1e-10, max_iter=200):
    """Solve ``h(t, x, y) = ybar`` for y, entrywise over leading sample axes.

    Additive drivers subtract the offset.  Otherwise a damped fixed-point
    iteration ``y <- y + lam (ybar - h(y))`` with ``lam = alpha / c_h**2`` is
    run; samples where it stalls are finished by a bracketing secant
    (Illinois) sweep per matrix entry.
    """
    ybar = np.asarray(ybar, dtype=float)
    if driver.additive_h:
        return ybar - driver.h_offset(t, x)
    x = np.broadcast_to(np.asarray(x, dtype=float), ybar.shape[:-1])
    alpha, c = driver.monotone_alpha, driver.h_lipschitz_y
    lam = alpha / c ** 2
    y = lam * ybar
    r = ybar - driver.h(t, x, y)
    res = _residual_norm(r)
    # aim below tol so accepted entries are not marginal; stalls at the
    # rounding floor are caught by the progress check
    goal = 0.01 * tol
    check_every = 20
    last = res.max(initial=0.0)
    it = 0
    while it < max_iter:
        active = res > goal
        if not active.any():
            return y
        y = np.where(active[..., None, None], y + lam * r, y)
        r = ybar - driver.h(t, x, y)
        res = _residual_norm(r)
        it += 1
        if it % check_every == 0:
            worst = res.max()
            if worst > 0.5 * last:
                break
            last = worst
    if not (res > goal).any():
        return y
    return _bracketing_sweep(driver, t, x, ybar, y, tol, max_iter, goal=goal)


def _illinois(phi, s0, f0, width, tol, max_iter):
    """Vectorised Illinois regula falsi for scalar monotone ``phi``."""
    a, b = s0 - width, s0 + width
    fa, fb = phi(a), phi(b)
    for _ in range(60):
        same = (np.sign(fa) == np.sign(fb)) & (fa != 0) & (fb != 0)
        if not same.any():
            break
        width = np.where(same, 2 * width, width)
        a = np.where(same, s0 - width, a)
        b = np.where(same, s0 + width, b)
        fa, fb = phi(a), phi(b)
    best = np.where(np.abs(fa) < np.abs(fb), a, b)
    for _ in range(max_iter):
        done = (np.abs(fb) <= tol) | (fa == fb)
        if done.all():
            break
        c = np.where(done, b, b - fb * (b - a) / np.where(fa == fb, 1.0, fb - fa))
        fc = phi(c)
        flip = np.sign(fc) != np.sign(fb)
        a, fa = np.where(flip, b, a), np.where(flip, fb, 0.5 * fa)
        b, fb = np.where(done, b, c), np.where(done, fb, fc)
        best = b
    return best


def _bracketing_sweep(driver, t, x, ybar, y, tol, max_iter, sweeps=8, goal=None):
    goal = tol if goal is None else goal
    lead = ybar.shape[:-2]
    p, m = ybar.shape[-2:]
    flat_y = y.reshape(-1, p, m).copy()
    flat_x = np.broadcast_to(x, lead + (p,)).reshape(-1, p)
    flat_ybar = ybar.reshape(-1, p, m)
    entry_tol = 0.1 * goal / np.sqrt(p * m)
    for _ in range(sweeps):
        res = _residual_norm(flat_ybar - driver.h(t, flat_x, flat_y))
        bad = np.flatnonzero(res > goal)
        if bad.size == 0:
            break
        # Gauss-Seidel over entries; exact in one sweep when h acts entrywise
        for e in range(p * m):
            i, j = divmod(e, m)
            yy = flat_y[bad].copy()
            xx = flat_x[bad]
            target = flat_ybar[bad, i, j]

            def phi(s):
                trial = yy.copy()
                trial[:, i, j] = s
                return driver.h(t, xx, trial)[:, i, j] - target

            s0 = yy[:, i, j]
            f0 = phi(s0)
            width = np.abs(f0) / driver.monotone_alpha + 1e-12
            yy[:, i, j] = _illinois(phi, s0, f0, width, entry_tol, max_iter)
            flat_y[bad] = yy
    res = _residual_norm(flat_ybar - driver.h(t, flat_x, flat_y))
    if np.any(res > tol):
        worst = int(np.argmax(res))
        coords = np.unravel_index(worst, lead) if lead else ()
        raise NumericalFailure(f"inversion of h did not reach {tol:g}",
                               residual=float(res.max()), coords=tuple(int(c) for c in coords))
    return flat_y.reshape(y.shape)


@dataclass
class TerminalCondition:
    """Terminal value ``xi``: ``evaluate(bundle)`` returns an ``(L, M, p)`` array."""

    evaluate: Callable
    square_integrable: bool = True
    name: str = "custom"

    def __call__(self, bundle):
        xi = np.asarray(self.evaluate(bundle), dtype=float)
        if xi.ndim == 2:
            xi = xi[..., None]
        xi = np.broadcast_to(xi, (bundle.L, bundle.M, xi.shape[-1]))
        if not np.all(np.isfinite(xi)):
            raise InvalidValueError(f"terminal condition {self.name} is not finite on the ensemble")
        return xi


def constant_terminal(value=1.0):
    return TerminalCondition(lambda b: np.full((b.L, b.M, 1), float(value)), name="constant")


def brownian_terminal():
    return TerminalCondition(lambda b: np.broadcast_to(b.brownian[None, :, -1, :1], (b.L, b.M, 1)),
                             name="brownian_T")


def brownian_squared_terminal():
    return TerminalCondition(lambda b: np.broadcast_to(b.brownian[None, :, -1, :1] ** 2, (b.L, b.M, 1)),
                             name="brownian_T_squared")


def canonical_terminal():
    return TerminalCondition(lambda b: np.broadcast_to(b.canonical[:, None, -1, :1], (b.L, b.M, 1)),
                             name="canonical_T")


_EXPR_FUNCS = {name: getattr(np, name) for name in
               ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "arctan",
                "maximum", "minimum", "sign")}
_EXPR_NODES = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
               ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
               ast.Mod)


def custom_terminal(expr):
    """Terminal value from an arithmetic expression in ``B``, ``C`` and ``T``.

    ``B`` and ``C`` are the first components of ``B_T`` and ``C_T``; the
    numpy functions in ``_EXPR_FUNCS`` are available.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigurationError(f"terminal.expr does not parse: {exc}", ["terminal.expr"]) from None
    allowed = set(_EXPR_FUNCS) | {"B", "C", "T", "pi"}
    for node in ast.walk(tree):
        if not isinstance(node, _EXPR_NODES):
            raise ConfigurationError(f"terminal.expr uses unsupported syntax "
                                     f"{type(node).__name__}", ["terminal.expr"])
        if isinstance(node, ast.Name) and node.id not in allowed:
            raise ConfigurationError(f"terminal.expr uses unknown name {node.id!r}", ["terminal.expr"])
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name)
                                               and node.func.id in _EXPR_FUNCS):
            raise ConfigurationError("terminal.expr may only call numpy functions", ["terminal.expr"])
    code = compile(tree, "<terminal.expr>", "eval")

    def evaluate(b):
        ns = dict(_EXPR_FUNCS, B=b.brownian[None, :, -1, 0], C=b.canonical[:, None, -1, 0],
                  T=b.grid.T, pi=np.pi)
        val = eval(code, {"__builtins__": {}}, ns)
        return np.broadcast_to(np.asarray(val, dtype=float), (b.L, b.M))[..., None]

    return TerminalCondition(evaluate, name=f"custom:{expr}")


TERMINAL_PRESETS = {
    "constant": constant_terminal,
    "brownian_T": brownian_terminal,
    "brownian_T_squared": brownian_squared_terminal,
    "canonical_T": canonical_terminal,
    "custom": custom_terminal,
}

"""Picard solvers for UBSDEs on a hybrid ensemble, with contraction diagnostics.

All forms share one engine.  The innermost step solves the equation with
exogenous coefficients by backward least-squares projection; a Picard loop
over Y handles y-dependence of f and g, and an outer Picard loop over X
handles x-dependence of f, g and h.  A general h is inverted pointwise.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .condexp import Projector, RegressionBasis
from .drivers import invert_h
from .errors import (ConfigurationError, ContractViolation, InvalidValueError,
                     NoiseFloorWarning, NumericalFailure)
from .hybrid import UncertainRandomField, chimera_mean, expect_over_alpha
from .processes import PathBundle

FORMS = ("simple", "y-driver", "xy-driver", "general")
CSV_HEADER = ["iteration", "phi0", "psi0", "phi_bound", "psi_bound", "noise_floor"]


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls.

    ``tol`` is relative to the first Picard distance; ``atol`` is an
    absolute floor below which distances count as zero.  ``inner_tol``
    controls the Picard loop over Y nested inside the loop over X.
    ``y0`` is the constant starting value of the Y iteration.  ``bootstrap``
    resamples of the paths give the noise floor of each Picard distance.
    """

    max_iter: int = 60
    tol: float = 1e-6
    atol: float = 1e-24
    inner_tol: float = 1e-12
    inner_max_iter: int = 200
    basis: RegressionBasis = field(default_factory=RegressionBasis)
    y0: float = 0.0
    bootstrap: int = 200
    bootstrap_seed: int = 0
    invert_tol: float = 1e-10
    form: str = "general"

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigurationError("solver.max_iter must be >= 1", ["solver.max_iter"])
        if not self.tol > 0:
            raise ConfigurationError("solver.tol must be positive", ["solver.tol"])
        if self.bootstrap < 0:
            raise ConfigurationError("solver.bootstrap must be >= 0", ["solver.bootstrap"])
        if self.form not in FORMS:
            raise ConfigurationError(f"solver.form must be one of {FORMS}, got {self.form!r}",
                                     ["solver.form"])


@dataclass
class SolutionPair:
    """Adapted pair on the ensemble.

    ``X`` has shape ``(L, M, N+1, p)`` and ``Y`` shape ``(L, M, N+1, p, m)``.
    ``Y`` at the last node repeats the previous node; it never enters a
    left-point sum.
    """

    X: UncertainRandomField
    Y: UncertainRandomField
    bundle: PathBundle

    @property
    def x0_per_alpha(self):
        """X at time 0 for every alpha level (path average, shape (L, p))."""
        return self.X.values[:, :, 0].mean(axis=1)

    def x0_chimera(self):
        return chimera_mean(self.X.values[:, :, 0], self.bundle.alpha)

    def m2_norm(self):
        return m2_norm(self.X.values, self.Y.values, self.bundle)


@dataclass
class ContractionReport:
    """Picard distances per iteration and the matching theoretical bounds.

    ``phi[n-1]`` is the time integral of the chimera mean of ``|X_n - X_{n-1}|^2``
    and ``psi[n-1]`` the chimera mean of the time integral of ``|Y_n - Y_{n-1}|^2``.
    ``phi_floor`` and ``psi_floor`` hold, per iteration, three bootstrap
    standard deviations of the corresponding estimator.
    """

    form: str
    T: float
    c: float
    phi: list = field(default_factory=list)
    psi: list = field(default_factory=list)
    phi_bound: list = field(default_factory=list)
    psi_bound: list = field(default_factory=list)
    phi_floor: list = field(default_factory=list)
    psi_floor: list = field(default_factory=list)
    converged: bool = False
    inner_iterations: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.psi)

    @property
    def K(self):
        return 2.0 * self.c ** 2

    @property
    def c1(self):
        return self.c + 4.0 * self.c ** 2

    @property
    def c_tilde(self):
        return self.psi[0] if self.psi else 0.0

    @property
    def K_tilde(self):
        return self.c_tilde * self.K * math.exp(self.K * self.T)

    @property
    def factorial(self):
        return self.form in ("xy-driver", "general-x")

    @property
    def noise_floor(self):
        return self.phi_floor if self.factorial else self.psi_floor

    @property
    def psi_final(self):
        return self.psi[-1] if self.psi else 0.0

    def ratios(self, which="psi"):
        v = np.asarray(getattr(self, which), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return v[1:] / v[:-1]

    def compute_bounds(self):
        n = np.arange(1, self.iterations + 1)
        K, T = self.K, self.T
        psi = np.asarray(self.psi, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if self.factorial:
            rate = self.c1 * math.exp(self.c1 * T) * T
            fact = np.array([rate ** (k - 1) / math.factorial(k - 1) for k in n])
            self.phi_bound = list(fact * (phi[0] if phi.size else 0.0))
            pb = [psi[0]] + [2 * self.c1 * (phi[k] + phi[k - 1]) for k in range(1, len(n))]
            self.psi_bound = pb[:len(n)]
        else:
            ct = self.c_tilde
            geo = 0.5 ** (n - 1) * ct * math.exp(K * T)
            lin = 0.5 ** (n - 1) * ((n - 1) * self.K_tilde + ct)
            self.psi_bound = list(np.minimum(geo, lin))
            self.phi_bound = list(geo)

    def write_csv(self, path):
        """Write one row per iteration with full-precision numbers."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for i in range(self.iterations):
                w.writerow([i + 1] + [f"{v:.17e}" for v in (
                    self.phi[i], self.psi[i], self.phi_bound[i], self.psi_bound[i], self.noise_floor[i])])


# ---------------------------------------------------------------------------
# innermost step

def _drift_increments(f_vals, g_vals, bundle):
    """``f dt + g dC`` per step, shape ``(L, M, N, p)``."""
    L, M, N = bundle.L, bundle.M, bundle.N
    dt = bundle.grid.dt
    D = np.zeros((L, M, N, 1))
    if f_vals is not None:
        D = D + np.asarray(f_vals, dtype=float) * dt[None, None, :, None]
    if g_vals is not None:
        # alpha paths are deterministic, so g dC is a per-level drift
        D = D + (np.asarray(g_vals, dtype=float) * bundle.dC[:, None, :, None, :]).sum(-1)
    return np.broadcast_to(D, (L, M, N, D.shape[-1]))


def _backward_step(xi, D, bundle, proj):
    """Project ``xi - sum_{l>=k} D_l`` node by node and represent the increments.

    Returns ``X`` of shape ``(L, M, N+1, p)`` and ``Ybar`` of shape
    ``(L, M, N+1, p, m)``.
    """
    L, M, N = bundle.L, bundle.M, bundle.N
    p = xi.shape[-1]
    dB = bundle.dB
    dt = bundle.grid.dt
    X = np.empty((L, M, N + 1, p))
    Ybar = np.empty((L, M, N + 1, p, bundle.m))
    X[:, :, N] = xi
    tail = np.array(xi, dtype=float, copy=True)
    for k in range(N - 1, -1, -1):
        tail -= D[:, :, k]
        X[:, :, k] = proj.project(k, tail)
        dM = X[:, :, k + 1] - X[:, :, k] - D[:, :, k]
        Ybar[:, :, k] = proj.project(k, dM[..., None] * dB[None, :, k, None, :] / dt[k])
    Ybar[:, :, N] = Ybar[:, :, N - 1]
    return X, Ybar


def _eval_coeffs(driver, bundle, Xf, Yf):
    t = bundle.grid.nodes
    N = bundle.N
    f = np.stack([driver.f(t[k], Xf[:, :, k], Yf[:, :, k]) for k in range(N)], axis=2)
    g = np.stack([driver.g(t[k], Xf[:, :, k], Yf[:, :, k]) for k in range(N)], axis=2)
    shape = (bundle.L, bundle.M, N, driver.p)
    return np.broadcast_to(f, shape), np.broadcast_to(g, shape + (driver.d,))


def _invert(driver, bundle, Xf, Ybar, tol):
    if driver.additive_h:
        t = bundle.grid.nodes
        off = np.stack([driver.h_offset(t[k], Xf[:, :, k]) for k in range(bundle.N + 1)], axis=2)
        return Ybar - off
    Y = np.empty_like(Ybar)
    t = bundle.grid.nodes
    for k in range(bundle.N):
        try:
            Y[:, :, k] = invert_h(driver, t[k], Xf[:, :, k], Ybar[:, :, k], tol=tol)
        except NumericalFailure as exc:
            coords = tuple(exc.coords or ()) + (k,)
            raise NumericalFailure(f"{exc} at (alpha, path, node) = {coords}",
                                   residual=exc.residual, coords=coords) from None
    Y[:, :, bundle.N] = Y[:, :, bundle.N - 1]
    return Y


# ---------------------------------------------------------------------------
# distances

def _path_dist_x(dX, bundle):
    """Per-path ``sum_k dt E_M|dX_k|^2``, shape ``(M,)``; its path mean is phi."""
    sq = (dX[:, :, :-1] ** 2).sum(-1)
    return (expect_over_alpha(sq, bundle.alpha) * bundle.grid.dt).sum(-1)


def _path_dist_y(dY, bundle):
    """Per-path ``E_M sum_k dt |dY_k|^2``, shape ``(M,)``; its path mean is psi."""
    sq = ((dY[:, :, :-1] ** 2).sum(axis=(-1, -2)) * bundle.grid.dt).sum(-1)
    return expect_over_alpha(sq, bundle.alpha)


def _dist_y(dY, bundle):
    return float(_path_dist_y(dY, bundle).mean())


def _bootstrap_std(per_path, idx):
    if idx is None:
        return 0.0
    return float(per_path[idx].mean(axis=1).std(ddof=1))


def m2_norm(X, Y, bundle):
    """``max_k E|X_k|^2 + E int |Y|^2 dt`` (chimera means)."""
    X = np.asarray(getattr(X, "values", X))
    Y = np.asarray(getattr(Y, "values", Y))
    sx = chimera_mean((X ** 2).sum(-1), bundle.alpha).value
    return float(np.max(sx)) + _dist_y(Y, bundle)


def m2_distance(a, b):
    """M^2 distance between two solution pairs on the same bundle."""
    return m2_norm(a.X.values - b.X.values, a.Y.values - b.Y.values, a.bundle)


# ---------------------------------------------------------------------------
# engine

@dataclass
class _State:
    X: np.ndarray
    Y: np.ndarray
    Ybar: np.ndarray


def _solve_y_loop(xi, driver, bundle, proj, Xf, Y_start, tol, max_iter, atol, invert_tol,
                  record=None):
    """Picard over Y with X frozen at ``Xf``.  Returns the final state and iteration count."""
    Yf = Y_start
    psi1 = None
    for n in range(1, max_iter + 1):
        f, g = _eval_coeffs(driver, bundle, Xf, Yf)
        X, Ybar = _backward_step(xi, _drift_increments(f, g, bundle), bundle, proj)
        Y = _invert(driver, bundle, Xf, Ybar, invert_tol)
        if record is not None:
            record(X, Y)
        if not driver.depends_on_y:
            return _State(X, Y, Ybar), n, True
        psi = _dist_y(Y - Yf, bundle)
        psi1 = psi if psi1 is None else psi1
        Yf = Y
        if psi <= max(tol * psi1, atol):
            return _State(X, Y, Ybar), n, True
    return _State(X, Y, Ybar), max_iter, False


def _zero_state(bundle, p, m):
    L, M, N = bundle.L, bundle.M, bundle.N
    return _State(np.zeros((L, M, N + 1, p)), np.zeros((L, M, N + 1, p, m)),
                  np.zeros((L, M, N + 1, p, m)))


def _engine(xi, driver, bundle, config, form):
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 2:
        xi = xi[..., None]
    xi = np.broadcast_to(xi, (bundle.L, bundle.M, xi.shape[-1]))
    if not np.all(np.isfinite(xi)):
        raise InvalidValueError("terminal condition is not finite on the ensemble")
    if xi.shape[-1] != driver.p or bundle.m != driver.m or bundle.d != driver.d:
        raise ContractViolation(
            f"dimension mismatch: xi has p={xi.shape[-1]}, bundle (m, d) = ({bundle.m}, {bundle.d}), "
            f"driver (p, m, d) = ({driver.p}, {driver.m}, {driver.d})")
    driver.check_origin()
    L, M, N, p, m = bundle.L, bundle.M, bundle.N, driver.p, driver.m
    outer = driver.depends_on_x
    c_eff = driver.lipschitz_c / driver.monotone_alpha if not driver.additive_h else driver.lipschitz_c
    rep_form = "xy-driver" if outer and form in ("xy-driver", "general") else "y-driver"
    if form == "general" and outer:
        rep_form = "general-x"
    report = ContractionReport(form=rep_form, T=bundle.grid.T, c=c_eff)
    proj = Projector(bundle, config.basis)
    boot = None
    if config.bootstrap > 1:
        rng = np.random.default_rng([config.bootstrap_seed, 0xB007])
        boot = rng.integers(0, M, (config.bootstrap, M))

    if not np.any(xi) and driver.vanishes_at_origin(bundle.grid.nodes):
        st = _zero_state(bundle, p, m)
        report.converged = True
        report.compute_bounds()
        return SolutionPair(UncertainRandomField(st.X), UncertainRandomField(st.Y), bundle), report

    Y_start = np.full((L, M, N + 1, p, m), float(config.y0))
    if not outer:
        prev = [np.zeros((L, M, N + 1, p)), Y_start]

        def record(X, Y):
            _record(report, _path_dist_x(X - prev[0], bundle), _path_dist_y(Y - prev[1], bundle), boot)
            prev[:] = [X, Y]

        st, n_inner, ok = _solve_y_loop(xi, driver, bundle, proj, prev[0], Y_start, config.tol,
                                        config.max_iter, config.atol, config.invert_tol, record)
        report.converged = ok
        report.inner_iterations = [1] * n_inner
    else:
        Xf = np.zeros((L, M, N + 1, p))
        Yprev = Y_start
        ok = False
        for n in range(1, config.max_iter + 1):
            st, n_inner, inner_ok = _solve_y_loop(xi, driver, bundle, proj, Xf, Yprev,
                                                  config.inner_tol, config.inner_max_iter,
                                                  config.atol, config.invert_tol)
            report.inner_iterations.append(n_inner)
            _record(report, _path_dist_x(st.X - Xf, bundle), _path_dist_y(st.Y - Yprev, bundle), boot)
            Xf, Yprev = st.X, st.Y
            phi_ok = report.phi[-1] <= max(config.tol * report.phi[0], config.atol)
            psi_ok = report.psi[-1] <= max(config.tol * report.psi[0], config.atol)
            if phi_ok and psi_ok:
                ok = True
                break
        report.converged = ok
    report.compute_bounds()
    sol = SolutionPair(UncertainRandomField(st.X), UncertainRandomField(st.Y), bundle)
    return sol, report


def _record(report, phi_path, psi_path, boot):
    report.phi.append(float(phi_path.mean()))
    report.psi.append(float(psi_path.mean()))
    report.phi_floor.append(3.0 * _bootstrap_std(phi_path, boot))
    report.psi_floor.append(3.0 * _bootstrap_std(psi_path, boot))


def _finish(xi, driver, bundle, config, form, strict=True):
    sol, report = _engine(xi, driver, bundle, config, form)
    if report.iterations > 1:
        target = max(config.tol * report.psi[0], config.atol)
        if target < report.psi_floor[-1]:
            warnings.warn(f"tolerance {target:.3e} on psi is below its noise floor "
                          f"{report.psi_floor[-1]:.3e}", NoiseFloorWarning, stacklevel=3)
    if strict and not report.converged:
        exc = NumericalFailure(f"Picard iteration did not converge in {config.max_iter} iterations",
                               residual=report.psi_final, report=report)
        exc.solution = sol
        raise exc
    return sol, report


def _exogenous(a, shape):
    if a is None:
        return None
    if callable(a):
        raise ContractViolation("exogenous coefficients must be arrays, not callables")
    return np.broadcast_to(np.asarray(a, dtype=float), shape)


def solve_simple(xi, f=None, g=None, h=None, bundle=None, config=None):
    """Solve the equation with exogenous coefficient processes.

    Parameters
    ----------
    xi : array_like, shape (L, M[, p])
    f, g, h : array_like, optional
        Coefficient processes broadcastable to ``(L, M, N+1, p)``,
        ``(L, M, N+1, p, d)`` and ``(L, M, N+1, p, m)``.  ``None`` means zero.
    bundle : PathBundle
    config : SolverConfig, optional

    Returns
    -------
    SolutionPair
        ``X`` is the projected backward sum and ``Y`` the represented
        integrand minus ``h``.
    """
    if bundle is None:
        raise ConfigurationError("solve_simple needs a path bundle")
    config = config or SolverConfig(form="simple")
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 2:
        xi = xi[..., None]
    xi = np.broadcast_to(xi, (bundle.L, bundle.M, xi.shape[-1]))
    if not np.all(np.isfinite(xi)):
        raise InvalidValueError("terminal condition is not finite on the ensemble")
    L, M, N, p = bundle.L, bundle.M, bundle.N, xi.shape[-1]
    fv = _exogenous(f, (L, M, N + 1, p))
    gv = _exogenous(g, (L, M, N + 1, p, bundle.d))
    hv = _exogenous(h, (L, M, N + 1, p, bundle.m))
    D = _drift_increments(None if fv is None else fv[:, :, :N],
                          None if gv is None else gv[:, :, :N], bundle)
    if D.shape[-1] != p:
        D = np.broadcast_to(D, (L, M, N, p))
    X, Ybar = _backward_step(xi, D, bundle, Projector(bundle, config.basis))
    Y = Ybar if hv is None else Ybar - hv
    if hv is not None:
        Y[:, :, N] = Y[:, :, N - 1]
    return SolutionPair(UncertainRandomField(X), UncertainRandomField(Y), bundle)


def solve_y_driver(xi, driver, bundle, config=None, strict=True):
    """Picard iteration over Y for ``f(t, y)``, ``g(t, y)`` and an exogenous h.

    Returns ``(SolutionPair, ContractionReport)``; raises
    :class:`NumericalFailure` with the report attached when the iteration
    does not converge and ``strict`` is set.
    """
    if driver.depends_on_x or not driver.additive_h:
        raise ContractViolation(f"driver {driver.name} depends on x or has a general h; "
                                "use solve_xy_driver or solve_general")
    config = config or SolverConfig(form="y-driver")
    return _finish(xi, driver, bundle, config, "y-driver", strict)


def solve_xy_driver(xi, driver, bundle, config=None, strict=True):
    """Outer Picard iteration over X for ``f(t,x,y)``, ``g(t,x,y)``, ``h(t,x) + y``.

    Each outer step solves the y-driver problem with X frozen at the
    previous iterate, starting from ``X_0 = 0``.
    """
    if not driver.additive_h:
        raise ContractViolation(f"driver {driver.name} has a general h; use solve_general")
    config = config or SolverConfig(form="xy-driver")
    return _finish(xi, driver, bundle, config, "xy-driver", strict)


def solve_general(xi, driver, bundle, config=None, strict=True):
    """Solve with a bi-Lipschitz ``h(t, x, y)`` by inverting ``y -> h`` pointwise.

    The represented integrand ``Ybar`` is mapped to ``Y`` with
    :func:`invert_h`; the Picard loops over Y and X wrap this step.  For an
    identity h the result coincides with :func:`solve_xy_driver`.
    """
    config = config or SolverConfig(form="general")
    return _finish(xi, driver, bundle, config, "general", strict)


SOLVERS = {"y-driver": solve_y_driver, "xy-driver": solve_xy_driver, "general": solve_general}


# ---------------------------------------------------------------------------
# verification

@dataclass
class ContractionVerdict:
    """Outcome of :func:`verify_contraction`.

    ``margins`` holds ``log(measured) - log(bound)`` for the iterations
    above the noise floor; ``slope`` is the least-squares slope of the
    margins against the iteration index.
    """

    status: str
    check: str
    iterations: list
    margins: list
    slope: float
    message: str = ""

    @property
    def passed(self):
        return self.status == "pass"


def verify_contraction(report, form=None, slope_margin=0.1, min_points=3):
    """Compare measured Picard distances with their theoretical decay.

    The geometric check (simple and y-driver forms) uses psi with its
    bound; the factorial check (x-dependent forms) uses phi.  The run
    passes when every point lies on or below the bound and the margins do
    not grow faster than ``slope_margin`` per iteration.  Fewer than
    ``min_points`` iterations above the noise floor give ``inconclusive``.
    """
    form = form or report.form
    factorial = form in ("xy-driver", "general-x", "factorial")
    which = "phi" if factorial else "psi"
    values = np.asarray(getattr(report, which), dtype=float)
    bounds = np.asarray(getattr(report, which + "_bound"), dtype=float)
    floor = np.asarray(report.phi_floor if factorial else report.psi_floor, dtype=float)
    check = "factorial" if factorial else "geometric"
    above = [i for i in range(values.size) if values[i] > floor[i] and values[i] > 0]
    # only the leading run above the floor is informative
    lead = []
    for i in above:
        if lead and i != lead[-1] + 1:
            break
        lead.append(i)
    if len(lead) < min_points:
        return ContractionVerdict("inconclusive", check, [i + 1 for i in lead], [], float("nan"),
                                  f"{len(lead)} iteration(s) above the noise floor, need {min_points}")
    idx = np.array(lead)
    with np.errstate(divide="ignore"):
        margins = np.log(values[idx]) - np.log(bounds[idx])
    slope = float(np.polyfit(idx + 1.0, margins, 1)[0])
    violated = bool(np.any(margins > 1e-9))
    ok = not violated and slope <= slope_margin
    msg = (f"max log-margin {margins.max():.3g}, margin slope {slope:.3g}"
           + ("; bound violated" if violated else ""))
    return ContractionVerdict("pass" if ok else "fail", check, list(idx + 1), list(margins), slope, msg)

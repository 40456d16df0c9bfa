"""Scenario configuration files, built-in scenarios and the run pipeline."""
from __future__ import annotations

import csv
import inspect
import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .condexp import RegressionBasis
from .drivers import DRIVER_PRESETS, TERMINAL_PRESETS, driver_preset
from .errors import ConfigurationError, NumericalFailure, UBSDEError
from .hybrid import AlphaGrid, HybridEnsemble, TimeGrid
from .processes import dump_paths_csv, simulate
from .solver import SolverConfig, solve_general, solve_xy_driver, solve_y_driver, verify_contraction

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG = 3


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text):
    return str(text).strip().strip('"').strip("'")


def _float(text):
    return float(text)


def _int(text):
    try:
        return int(str(text).strip())
    except ValueError:
        pass
    v = float(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


# key -> (converter, default)
SCHEMA = {
    "scenario.name": (_str, "custom"),
    "scenario.form": (_str, "general"),
    "driver.preset": (_str, "zero"),
    "driver.lipschitz_c": (_float, None),
    "driver.monotone_alpha": (_float, None),
    "driver.h_lipschitz_y": (_float, None),
    "terminal.kind": (_str, "constant"),
    "terminal.value": (_float, 1.0),
    "terminal.expr": (_str, None),
    "grid.T": (_float, 1.0),
    "grid.N": (_int, 50),
    "ensemble.levels": (_int, 11),
    "ensemble.alpha_grid": (_str, "uniform"),
    "ensemble.paths": (_int, 10000),
    "ensemble.seed": (_int, 0),
    "dims.p": (_int, 1),
    "dims.m": (_int, 1),
    "dims.d": (_int, 1),
    "basis.kind": (_str, "brownian"),
    "basis.degree": (_int, 2),
    "solver.max_iter": (_int, 60),
    "solver.tol": (_float, 1e-6),
    "solver.atol": (_float, 1e-24),
    "solver.inner_tol": (_float, 1e-12),
    "solver.y0": (_float, 0.0),
    "solver.bootstrap": (_int, 200),
    "output.plots": (_bool, True),
    "output.dump_paths": (_bool, False),
}

ALPHA_GRIDS = {"uniform": AlphaGrid.uniform, "midpoint": AlphaGrid.midpoint,
               "gauss_legendre": AlphaGrid.gauss_legendre}
SOLVE = {"simple": solve_general, "y-driver": solve_y_driver,
         "xy-driver": solve_xy_driver, "general": solve_general}


@dataclass
class Scenario:
    """A fully validated experiment description."""

    name: str
    form: str
    driver: str
    driver_params: dict
    terminal: str
    terminal_value: float
    terminal_expr: str | None
    T: float
    N: int
    L: int
    alpha_grid: str
    M: int
    seed: int
    dims: tuple
    basis: RegressionBasis
    solver: SolverConfig
    driver_overrides: dict = field(default_factory=dict)
    plots: bool = True
    dump_paths: bool = False

    def build_driver(self):
        drv = driver_preset(self.driver, **self.driver_params)
        if self.driver_overrides:
            drv = replace(drv, **self.driver_overrides)
        if (drv.p, drv.m, drv.d) != self.dims:
            raise ConfigurationError(f"dims (p, m, d) = {self.dims} do not match driver "
                                     f"{self.driver} ({drv.p}, {drv.m}, {drv.d})",
                                     ["dims.p", "dims.m", "dims.d"])
        return drv

    def build_terminal(self):
        if self.terminal == "constant":
            return TERMINAL_PRESETS["constant"](self.terminal_value)
        if self.terminal == "custom":
            return TERMINAL_PRESETS["custom"](self.terminal_expr)
        return TERMINAL_PRESETS[self.terminal]()

    def build_bundle(self, threads=1):
        grid = TimeGrid.uniform(self.T, self.N)
        alpha = ALPHA_GRIDS[self.alpha_grid](self.L)
        ens = HybridEnsemble(alpha, self.M, self.seed)
        return simulate(grid, ens, m=self.dims[1], d=self.dims[2], threads=threads)


def parse_config_text(text):
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Returns a dict of raw string values.  Duplicate keys and malformed lines
    are configuration errors.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in raw:
            raise ConfigurationError(f"line {lineno}: duplicate key {key}", [key])
        raw[key] = value
    return raw


def _driver_params(preset):
    factory = DRIVER_PRESETS[preset][0]
    return [n for n, p in inspect.signature(factory).parameters.items()
            if p.kind is inspect.Parameter.POSITIONAL_OR_KEYWORD]


def scenario_from_dict(raw):
    """Validate a raw key/value mapping into a :class:`Scenario`."""
    raw = {k: str(v) for k, v in raw.items()}
    preset = _str(raw.get("driver.preset", SCHEMA["driver.preset"][1]))
    if preset not in DRIVER_PRESETS:
        raise ConfigurationError(f"driver.preset {preset!r} is unknown; known: {sorted(DRIVER_PRESETS)}",
                                 ["driver.preset"])
    params = _driver_params(preset)
    unknown = sorted(k for k in raw if k not in SCHEMA
                     and not (k.startswith("driver.") and k[len("driver."):] in params))
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}", unknown)
    vals = {}
    bad = []
    for key, (conv, default) in SCHEMA.items():
        if key in raw:
            try:
                vals[key] = conv(raw[key])
            except ValueError:
                bad.append(key)
        else:
            vals[key] = default
    driver_params = {}
    for name in params:
        key = f"driver.{name}"
        if key in raw:
            try:
                driver_params[name] = float(raw[key])
            except ValueError:
                bad.append(key)
    if bad:
        raise ConfigurationError(f"invalid values for: {', '.join(bad)}", bad)

    def need(cond, key, msg):
        if not cond:
            raise ConfigurationError(f"{key} {msg} (got {vals[key]!r})", [key])

    need(vals["grid.N"] >= 1, "grid.N", "must be a positive integer")
    need(vals["grid.T"] > 0, "grid.T", "must be positive")
    need(vals["ensemble.paths"] >= 1, "ensemble.paths", "must be a positive integer")
    need(vals["ensemble.levels"] >= 1, "ensemble.levels", "must be a positive integer")
    need(vals["ensemble.alpha_grid"] in ALPHA_GRIDS, "ensemble.alpha_grid",
         f"must be one of {sorted(ALPHA_GRIDS)}")
    need(0 <= vals["ensemble.seed"] < 2 ** 64, "ensemble.seed", "must be an unsigned 64-bit integer")
    need(vals["scenario.form"] in SOLVE, "scenario.form", f"must be one of {sorted(SOLVE)}")
    need(vals["terminal.kind"] in TERMINAL_PRESETS, "terminal.kind",
         f"must be one of {sorted(TERMINAL_PRESETS)}")
    need(vals["terminal.kind"] != "custom" or vals["terminal.expr"], "terminal.expr",
         "is required for a custom terminal")
    for key in ("dims.p", "dims.m", "dims.d"):
        need(vals[key] >= 1, key, "must be >= 1")
    overrides = {k.split(".", 1)[1]: vals[k] for k in
                 ("driver.lipschitz_c", "driver.monotone_alpha", "driver.h_lipschitz_y")
                 if vals[k] is not None}
    basis = RegressionBasis(vals["basis.kind"], vals["basis.degree"])
    solver = SolverConfig(max_iter=vals["solver.max_iter"], tol=vals["solver.tol"],
                          atol=vals["solver.atol"], inner_tol=vals["solver.inner_tol"],
                          y0=vals["solver.y0"], bootstrap=vals["solver.bootstrap"], basis=basis,
                          form="general" if vals["scenario.form"] == "simple" else vals["scenario.form"])
    return Scenario(
        name=vals["scenario.name"], form=vals["scenario.form"], driver=preset,
        driver_params=driver_params, terminal=vals["terminal.kind"],
        terminal_value=vals["terminal.value"], terminal_expr=vals["terminal.expr"],
        T=vals["grid.T"], N=vals["grid.N"], L=vals["ensemble.levels"],
        alpha_grid=vals["ensemble.alpha_grid"], M=vals["ensemble.paths"], seed=vals["ensemble.seed"],
        dims=(vals["dims.p"], vals["dims.m"], vals["dims.d"]), basis=basis, solver=solver,
        driver_overrides=overrides, plots=vals["output.plots"], dump_paths=vals["output.dump_paths"])


_DESK = {"grid.T": "1.0", "grid.N": "50", "ensemble.levels": "5", "ensemble.paths": "10000"}

SCENARIO_PRESETS = {
    "trivial_constant": ("constant terminal 5, zero driver",
                         {"driver.preset": "zero", "terminal.kind": "constant", "terminal.value": "5",
                          "grid.N": "20", "ensemble.paths": "2000"}),
    "martingale_rep": ("xi = B_T, zero driver: X = B_t, Y = 1",
                       {"driver.preset": "zero", "terminal.kind": "brownian_T"}),
    "quadratic": ("xi = B_T^2, zero driver: X = B_t^2 + T - t, Y = 2 B_t",
                  {"driver.preset": "zero", "terminal.kind": "brownian_T_squared"}),
    "canonical_terminal": ("xi = C_T, g = 1: X = C_t per alpha",
                           {"driver.preset": "unit_g", "terminal.kind": "canonical_T",
                            "ensemble.paths": "2000"}),
    "sin_y_contraction": ("f = 0.3 sin y, g = 0.3 cos y, xi = B_T^2: geometric Picard decay",
                          {"driver.preset": "sin_y", "terminal.kind": "brownian_T_squared",
                           "scenario.form": "y-driver"}),
    "xy_factorial": ("f = 0.5 x + 0.3 sin y, h = 0.3 x + y, xi = B_T^2: factorial decay",
                     {"driver.preset": "xy_contraction", "terminal.kind": "brownian_T_squared",
                      "scenario.form": "xy-driver"}),
    "h_inversion": ("h = 2 y, xi = B_T: Y = 1/2",
                    {"driver.preset": "scaled_h", "terminal.kind": "brownian_T"}),
    "nonlinear_inversion": ("h = y + 0.5 sin y, xi = B_T: h(Y) = 1",
                            {"driver.preset": "nonlinear_h", "terminal.kind": "brownian_T"}),
    "ode_reduction": ("xi = 1, f = 0.5 x: X(0) = exp(-0.5)",
                      {"driver.preset": "linear_decay", "terminal.kind": "constant",
                       "terminal.value": "1", "scenario.form": "xy-driver", "ensemble.paths": "2000"}),
}


def preset_dict(name):
    try:
        _, overrides = SCENARIO_PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown scenario preset {name!r}; known: {sorted(SCENARIO_PRESETS)}",
                                 ["scenario"]) from None
    return {"scenario.name": name, **_DESK, **overrides}


def load_scenario(source):
    """Scenario from a config file path or a built-in preset name."""
    if source in SCENARIO_PRESETS:
        return scenario_from_dict(preset_dict(source))
    if not os.path.isfile(source):
        raise ConfigurationError(f"{source!r} is neither a config file nor a preset; "
                                 f"presets: {sorted(SCENARIO_PRESETS)}")
    with open(source) as fh:
        raw = parse_config_text(fh.read())
    if "scenario.preset" in raw:
        base = preset_dict(_str(raw.pop("scenario.preset")))
        base.update(raw)
        raw = base
    return scenario_from_dict(raw)


def _num(v):
    """JSON-friendly float (``repr`` round-trips exactly)."""
    return float(v)


def summarize(sc, sol, report, verdict, runtime_ms):
    x0 = sol.X.values[:, :, 0]
    x0_alpha = x0.mean(axis=1)
    x0_chim = sol.x0_chimera()
    Y = sol.Y.values[:, :, :-1]
    p = x0.shape[-1]
    per_alpha = [_num(v[0]) if p == 1 else [_num(u) for u in v] for v in x0_alpha]
    return {
        "scenario": sc.name,
        "x0_chimera": _num(x0_chim.value[0]) if p == 1 else [_num(v) for v in x0_chim.value],
        "x0_per_alpha": per_alpha,
        "y_rms": _num(np.sqrt(np.mean(Y ** 2))),
        "iterations": int(report.iterations),
        "converged": bool(report.converged),
        "psi_final": _num(report.psi_final),
        "runtime_ms": runtime_ms,
        "form": sc.form,
        "seed": int(sc.seed),
        "contraction": verdict.status,
    }


def write_summary_csv(path, sc, sol):
    """Long-format summary: one row per (quantity, alpha level, component)."""
    X0 = sol.X.values[:, :, 0]
    Y = sol.Y.values[:, :, :-1]
    chim = sol.x0_chimera()
    levels = sol.bundle.alpha.levels
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "alpha_index", "alpha", "component", "value"])
        for c in range(X0.shape[-1]):
            w.writerow(["x0_chimera", -1, "", c, f"{chim.value[c]:.17e}"])
            w.writerow(["x0_chimera_stderr", -1, "", c, f"{chim.stderr[c]:.17e}"])
            for j, a in enumerate(levels):
                w.writerow(["x0", j, f"{a:.17e}", c, f"{X0[j, :, c].mean():.17e}"])
                w.writerow(["y_mean", j, f"{a:.17e}", c, f"{Y[j, :, :, c].mean():.17e}"])
                w.writerow(["y_rms", j, f"{a:.17e}", c, f"{np.sqrt(np.mean(Y[j, :, :, c] ** 2)):.17e}"])


def run_scenario(source, out_dir="ubsde_out", seed=None, threads=None, timing=True, plots=None,
                 log=print):
    """Run a scenario and write its artifacts.

    Returns ``(exit_code, manifest)``; ``manifest`` is ``None`` on
    configuration errors.  Artifacts: ``manifest.json``, ``contraction.csv``,
    ``summary.csv`` and, unless disabled, PNG figures.
    """
    t0 = time.perf_counter()
    try:
        sc = load_scenario(source)
        if seed is not None:
            if not 0 <= int(seed) < 2 ** 64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer", ["ensemble.seed"])
            sc = replace(sc, seed=int(seed))
        env = os.environ.get("UBSDE_THREADS")
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigurationError(f"UBSDE_THREADS must be an integer, got {env!r}") from None
        threads = max(1, int(threads or 1))
        driver = sc.build_driver()
        if sc.form == "simple" and (driver.depends_on_x or driver.depends_on_y):
            raise ConfigurationError(f"scenario.form = simple needs exogenous coefficients; "
                                     f"driver {sc.driver} depends on x or y", ["scenario.form"])
        bundle = sc.build_bundle(threads)
        xi = sc.build_terminal()(bundle)
    except UBSDEError as exc:
        log(f"configuration error: {exc}")
        return EXIT_CONFIG, None

    solve = SOLVE[sc.form]
    code = EXIT_OK
    try:
        sol, report = solve(xi, driver, bundle, sc.solver)
    except NumericalFailure as exc:
        if getattr(exc, "solution", None) is None:
            log(f"numerical failure: {exc}")
            return EXIT_NOT_CONVERGED, None
        sol, report = exc.solution, exc.report
        code = EXIT_NOT_CONVERGED
        log(f"not converged: {exc}")
    except UBSDEError as exc:
        log(f"configuration error: {exc}")
        return EXIT_CONFIG, None
    verdict = verify_contraction(report)
    runtime = int(round((time.perf_counter() - t0) * 1000)) if timing else None
    manifest = summarize(sc, sol, report, verdict, runtime)

    os.makedirs(out_dir, exist_ok=True)
    report.write_csv(os.path.join(out_dir, "contraction.csv"))
    write_summary_csv(os.path.join(out_dir, "summary.csv"), sc, sol)
    if sc.dump_paths:
        dump_paths_csv(bundle, os.path.join(out_dir, "paths.csv"))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    if sc.plots if plots is None else plots:
        from .plotting import render_all

        render_all(out_dir, sol, report, sc.name)
    log(f"{sc.name}: X(0) = {manifest['x0_chimera']}, iterations = {report.iterations}, "
        f"converged = {report.converged}, contraction check: {verdict.status} ({verdict.message})")
    return code, manifest

"""Acceptance criteria AC-1 .. AC-11 at desk scale.

Each test prints one ``AC-n PASS|FAIL`` line; the lines are repeated in the
terminal summary.  Run directly with ``python tests/test_acceptance.py`` for
just the lines.
"""
import math
import sys
import time

import numpy as np
import pytest

from ubsde import drivers
from ubsde.calculus import BUILTIN_G, IntegrandPair, ito_liu_integral, ito_liu_residual
from ubsde.condexp import Projector
from ubsde.hybrid import chimera_mean
from ubsde.solver import (SolverConfig, m2_distance, m2_norm, solve_general, solve_simple,
                          solve_xy_driver, solve_y_driver, verify_contraction)

from conftest import ACCEPTANCE_LINES, make_bundle, rms

# independent oracles
E_MINUS_HALF = math.exp(-0.5)  # X(0) for dX = 0.5 X dt, X(1) = 1


def report(ac, ok, detail, t0):
    line = f"AC-{ac} {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.1f}s) {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_ac1_trivial_fixed_points():
    t0 = time.perf_counter()
    b = make_bundle(N=50, M=10000, L=5)
    xi = np.full((b.L, b.M, 1), 3.25)
    runs = {"simple": solve_simple(xi, bundle=b),
            "y-driver": solve_y_driver(xi, drivers.zero(), b)[0],
            "xy-driver": solve_xy_driver(xi, drivers.zero(), b)[0],
            "general": solve_general(xi, drivers.zero(), b)[0],
            "general/identity h": solve_general(xi, drivers.identity_h(), b)[0]}
    errs = {k: max(np.abs(s.X.values - 3.25).max(), np.abs(s.Y.values).max()) for k, s in runs.items()}
    worst = max(errs.values())
    report(1, worst <= 1e-10, f"max |X - c|, |Y| over forms = {worst:.2e} (limit 1e-10)", t0)


def test_ac2_martingale_representation():
    t0 = time.perf_counter()
    b = make_bundle(N=50, M=10000, L=5)
    sol, _ = solve_general(drivers.brownian_terminal()(b), drivers.zero(), b)
    ex = rms(sol.X.values[..., 0] - b.brownian[None, :, :, 0])
    ey = rms(sol.Y.values[:, :, :-1] - 1.0)
    report(2, ex <= 0.05 and ey <= 0.05, f"RMS(X - B) = {ex:.4f}, RMS(Y - 1) = {ey:.4f} (limit 0.05)", t0)


def test_ac3_quadratic_closed_form():
    t0 = time.perf_counter()
    b = make_bundle(N=50, M=10000, L=5)
    sol, _ = solve_general(drivers.brownian_squared_terminal()(b), drivers.zero(), b)
    B = b.brownian[None, :, :, 0]
    want_x = B ** 2 + (b.grid.T - b.grid.nodes)
    # Y at node 0 is the constant E[2 B_0] = 0 and carries no relative scale
    want_y = 2 * B[:, :, 1:-1]
    ex = rms(sol.X.values[..., 0] - want_x) / rms(want_x)
    ey = rms(sol.Y.values[:, :, 1:-1, 0, 0] - want_y) / rms(want_y)
    report(3, ex <= 0.05 and ey <= 0.10,
           f"relative RMS: X {ex:.4f} (limit 0.05), Y {ey:.4f} (limit 0.10)", t0)


def test_ac4_canonical_terminal():
    t0 = time.perf_counter()
    b = make_bundle(N=50, M=10000, L=5)
    sol, _ = solve_general(drivers.canonical_terminal()(b), drivers.unit_g(), b)
    want = np.broadcast_to(b.canonical[:, None, :, 0], sol.X.values.shape[:-1])
    err = max(np.abs(sol.X.values[..., 0] - want).max(), np.abs(sol.Y.values).max())
    report(4, err <= 1e-10, f"max |X - C_t|, |Y| = {err:.2e} (limit 1e-10)", t0)


@pytest.fixture(scope="module")
def sin_runs():
    b = make_bundle(N=50, M=10000, L=5)
    xi = drivers.brownian_squared_terminal()(b)
    runs, cost = {}, {}
    for y0 in (0.0, 1.0):
        t0 = time.perf_counter()
        runs[y0] = solve_y_driver(xi, drivers.sin_y(), b, SolverConfig(y0=y0))
        cost[y0] = time.perf_counter() - t0
    return b, runs, cost


def test_ac5_geometric_contraction(sin_runs):
    _, runs, cost = sin_runs
    t0 = time.perf_counter() - cost[0.0]
    _, rep = runs[0.0]
    psi, floor = np.asarray(rep.psi), np.asarray(rep.psi_floor)
    above = np.flatnonzero(psi > floor)
    lead = above[: np.argmax(np.diff(np.r_[above, -2]) != 1) + 1] if above.size else above
    r = rep.ratios()[lead[:-1]] if lead.size > 1 else np.array([])
    v = verify_contraction(rep)
    ok = lead.size >= 3 and r.size > 0 and bool(np.all(r <= 0.6))
    report(5, ok, f"{lead.size} iterations above floor, psi ratios {np.array2string(r, precision=4)} "
                  f"(limit 0.6); bound check {v.status}", t0)


def test_ac6_factorial_contraction():
    t0 = time.perf_counter()
    b = make_bundle(N=50, M=10000, L=5)
    drv = drivers.xy_contraction()
    _, rep = solve_xy_driver(drivers.brownian_squared_terminal()(b), drv, b)
    phi = np.asarray(rep.phi)
    c1 = drv.lipschitz_c + 4 * drv.lipschitz_c ** 2
    T = b.grid.T
    n = np.arange(1, phi.size + 1)
    bound = np.array([(c1 * math.exp(c1 * T)) ** (k - 1) / math.factorial(k - 1) for k in n]) * phi[0]
    above = phi > np.asarray(rep.phi_floor)
    r = phi[1:] / phi[:-1]
    rec = r[above[1:]]
    dec = bool(np.all(np.diff(rec) < 0))
    under = bool(np.all(phi[above] <= bound[above] * (1 + 1e-9)))
    report(6, dec and under and rec.size >= 2,
           f"phi ratios {np.array2string(rec, precision=4)} strictly decreasing: {dec}; "
           f"below factorial curve (c1 = {c1:.3f}): {under}", t0)


def test_ac7_ito_liu_formula():
    t0 = time.perf_counter()
    G = BUILTIN_G["x2"]
    b200 = make_bundle(N=200, M=5000, L=5, seed=7)
    b400 = make_bundle(N=400, M=5000, L=5, seed=7)
    r200 = ito_liu_residual(G, 0.0, 1.0, 1.0, b200)
    r400 = ito_liu_residual(G, 0.0, 1.0, 1.0, b400)
    lim = 0.15 * math.sqrt(b200.grid.dt[0]) * r200.scale
    level = r200.rms <= lim
    factor = r200.rms / r400.rms
    refine = factor >= 1.3
    rc = ito_liu_residual(G, 0.0, 0.0, 1.0, make_bundle(N=200, M=50, L=5)).max
    exact = rc <= 1e-10
    report(7, level and refine and exact,
           f"N=200 RMS {r200.rms:.4f} vs 0.15 sqrt(dt) scale = {lim:.4f}: {level}; "
           f"refinement factor {factor:.3f} (limit 1.3): {refine}; X = C max {rc:.1e}: {exact}", t0)


def test_ac8_zero_expectation():
    t0 = time.perf_counter()
    b = make_bundle(N=50, M=10000, L=5)
    assert np.allclose(b.alpha.levels, 1 - b.alpha.levels[::-1])
    Xb = np.broadcast_to(np.tanh(b.brownian)[None, :, :, None, :], (b.L, b.M, b.N + 1, 1, 1))
    liu = chimera_mean(ito_liu_integral(IntegrandPair(Z=Xb), b), b.alpha)
    ito = chimera_mean(ito_liu_integral(IntegrandPair(Y=np.cos(b.brownian)[None, :, :, None, :]), b),
                       b.alpha)
    ok_liu = abs(liu.value[0]) <= 1e-6
    ok_ito = abs(ito.value[0]) <= 3 * ito.stderr[0]
    report(8, ok_liu and ok_ito, f"E[int tanh(B) dC] = {liu.value[0]:.2e} (limit 1e-6); "
                                 f"E[int cos(B) dB] = {ito.value[0]:.2e} +- 3 x {ito.stderr[0]:.2e}", t0)


def test_ac9_uniqueness(sin_runs):
    b, runs, cost = sin_runs
    t0 = time.perf_counter() - cost[0.0] - cost[1.0]
    s0, s1 = runs[0.0][0], runs[1.0][0]
    rel = m2_distance(s0, s1) / m2_norm(s0.X, s0.Y, b)
    report(9, rel <= 10 * 1e-6, f"relative M2 distance between seeds Y0 = 0 and 1: {rel:.2e} "
                                f"(limit 1e-5)", t0)


def test_ac10_h_inversion():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for fac in (drivers.identity_h, drivers.scaled_h, drivers.nonlinear_h):
        drv = fac()
        ybar = rng.normal(0, 5, (10000, 1, 1))
        x = rng.normal(size=(10000, 1))
        worst = max(worst, float(np.abs(drv.h(0.5, x, drivers.invert_h(drv, 0.5, x, ybar)) - ybar).max()))
    b = make_bundle(N=50, M=10000, L=5)
    sol, _ = solve_general(drivers.brownian_terminal()(b), drivers.scaled_h(), b)
    e = rms(sol.Y.values[:, :, :-1] - 0.5) / 0.5
    report(10, worst <= 1e-10 and e <= 0.05,
           f"round-trip max residual {worst:.2e} (limit 1e-10); h = 2y relative RMS(Y - 1/2) = {e:.4f} "
           f"(limit 0.05)", t0)


def test_ac11_ode_reduction():
    t0 = time.perf_counter()
    b = make_bundle(N=50, M=10000, L=5)
    sol, _ = solve_xy_driver(np.ones((b.L, b.M, 1)), drivers.linear_decay(), b)
    deg = Projector(b).fit(0, np.ones(b.M)).degenerate
    x0 = float(sol.x0_chimera().value[0])
    rel = abs(x0 - E_MINUS_HALF) / E_MINUS_HALF
    report(11, rel <= 0.01 and deg, f"X(0) = {x0:.6f} vs exp(-0.5) = {E_MINUS_HALF:.6f}, "
                                    f"relative error {rel:.2e} (limit 1e-2); degenerate node-0 fit: {deg}", t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))

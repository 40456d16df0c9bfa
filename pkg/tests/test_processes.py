import csv

import numpy as np
import pytest

from ubsde.errors import ConfigurationError
from ubsde.hybrid import AlphaGrid, HybridEnsemble, TimeGrid
from ubsde.processes import dump_paths_csv, gen_brownian, gen_canonical, liu_normal_inverse, simulate

# 2 sqrt(3)/pi ln 9, evaluated with 30-digit arithmetic
C_AT_09_T2 = 2.42278679843278346700553042794


def test_brownian_starts_at_zero(small_bundle):
    assert np.all(small_bundle.brownian[:, 0] == 0)


def test_brownian_terminal_moments():
    g = TimeGrid.uniform(1.0, 100)
    B = gen_brownian(g, 2, HybridEnsemble(AlphaGrid.uniform(3), 10000, 11))
    M = B.shape[0]
    assert np.all(np.abs(B[:, -1].mean(axis=0)) <= 3 / np.sqrt(M))
    assert np.all(np.abs(B[:, -1].var(axis=0, ddof=1) - 1.0) <= 0.05)


def test_brownian_rejects_empty():
    g = TimeGrid.uniform(1.0, 10)
    with pytest.raises(ConfigurationError):
        gen_brownian(g, 0, HybridEnsemble(AlphaGrid.uniform(3), 10, 1))


def test_thread_count_does_not_change_paths():
    g = TimeGrid.uniform(1.0, 30)
    ens = HybridEnsemble(AlphaGrid.uniform(3), 501, 42)
    a = gen_brownian(g, 2, ens, threads=1)
    b = gen_brownian(g, 2, ens, threads=4)
    assert np.array_equal(a, b)


def test_seed_determines_paths():
    g = TimeGrid.uniform(1.0, 10)
    a = gen_brownian(g, 1, HybridEnsemble(AlphaGrid.uniform(3), 50, 1))
    b = gen_brownian(g, 1, HybridEnsemble(AlphaGrid.uniform(3), 50, 1))
    c = gen_brownian(g, 1, HybridEnsemble(AlphaGrid.uniform(3), 50, 2))
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_quadratic_variation():
    g = TimeGrid.uniform(1.0, 10000)
    B = gen_brownian(g, 1, HybridEnsemble(AlphaGrid.uniform(3), 200, 5))
    qv = (np.diff(B[:, :, 0], axis=1) ** 2).sum(axis=1)
    ok = np.abs(qv - 1.0) <= 3 * np.sqrt(2 / g.N)
    assert ok.mean() >= 0.99


def test_canonical_paths():
    g = TimeGrid.uniform(2.0, 8)
    a = AlphaGrid(np.array([0.1, 0.5, 0.9]), np.full(3, 1 / 3))
    C = gen_canonical(g, 2, a)
    assert np.all(C[:, 0] == 0)
    assert np.all(C[1] == 0)
    assert C[2, -1, 0] == pytest.approx(C_AT_09_T2, rel=1e-14)
    np.testing.assert_allclose(C[0], -C[2], atol=1e-15)
    np.testing.assert_array_equal(C[..., 0], C[..., 1])


def test_canonical_lipschitz_and_stationary():
    g = TimeGrid.uniform(1.0, 40)
    a = AlphaGrid.uniform(7)
    C = gen_canonical(g, 1, a)[..., 0]
    slope = np.abs(np.diff(C, axis=1)) / g.dt
    np.testing.assert_allclose(slope.max(axis=1), np.abs(liu_normal_inverse(a.levels)), rtol=1e-12)
    inc = np.diff(C, axis=1)
    np.testing.assert_allclose(inc, np.broadcast_to(inc[:, :1], inc.shape), rtol=1e-10, atol=1e-15)


def test_liu_inverse_domain():
    with pytest.raises(ConfigurationError):
        liu_normal_inverse(1.0)
    assert liu_normal_inverse(0.5) == 0


def test_path_dump(tmp_path):
    b = simulate(TimeGrid.uniform(1.0, 3), HybridEnsemble(AlphaGrid.uniform(3), 2, 0))
    out = tmp_path / "paths.csv"
    dump_paths_csv(b, out)
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["alpha_index", "path_index", "node_index", "time", "component_kind",
                       "component_index", "value"]
    assert len(rows) == 1 + 2 * 4 + 3 * 4
    assert {r[4] for r in rows[1:]} == {"B", "C"}
    b_rows = [r for r in rows[1:] if r[4] == "B"]
    assert float(b_rows[5][6]) == b.brownian[int(b_rows[5][1]), int(b_rows[5][2]), 0]

import csv
import json
import subprocess
import sys

import pytest

from ubsde.cli import main
from ubsde.errors import ConfigurationError
from ubsde.scenario import SCENARIO_PRESETS, load_scenario, parse_config_text, run_scenario
from ubsde.solver import CSV_HEADER

QUIET = dict(log=lambda *a: None)


def write_cfg(tmp_path, text, name="s.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_presets_listed(capsys):
    assert main(["presets"]) == 0
    out = capsys.readouterr().out
    for name in SCENARIO_PRESETS:
        assert name in out


@pytest.mark.parametrize("name", sorted(SCENARIO_PRESETS))
def test_presets_load(name):
    sc = load_scenario(name)
    assert sc.name == name


def test_config_parser():
    raw = parse_config_text("# comment\ngrid.N = 10  # trailing\n\nterminal.kind=constant\n")
    assert raw == {"grid.N": "10", "terminal.kind": "constant"}
    with pytest.raises(ConfigurationError):
        parse_config_text("grid.N 10")
    with pytest.raises(ConfigurationError):
        parse_config_text("grid.N = 1\ngrid.N = 2")


def test_run_trivial(tmp_path):
    code, man = run_scenario("trivial_constant", out_dir=str(tmp_path), plots=True, **QUIET)
    assert code == 0
    assert man["x0_chimera"] == pytest.approx(5.0, abs=1e-10)
    assert set(man) >= {"scenario", "x0_chimera", "x0_per_alpha", "y_rms", "iterations", "converged",
                        "psi_final", "runtime_ms"}
    for f in ("manifest.json", "contraction.csv", "summary.csv", "contraction.png",
              "x0_per_alpha.png", "mean_paths.png"):
        assert (tmp_path / f).stat().st_size > 0
    assert (tmp_path / "contraction.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    with open(tmp_path / "contraction.csv") as fh:
        assert next(csv.reader(fh)) == list(CSV_HEADER)
    with open(tmp_path / "summary.csv") as fh:
        assert next(csv.reader(fh)) == ["quantity", "alpha_index", "alpha", "component", "value"]


def test_manifest_reproducible(tmp_path):
    cfg = write_cfg(tmp_path, "scenario.preset = martingale_rep\ngrid.N = 10\nensemble.paths = 1000\n"
                              "ensemble.levels = 3\noutput.plots = false\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(a), "--no-timing", "--seed", "18446744073709551615"]) == 0
    assert main(["run", cfg, "--out", str(b), "--no-timing", "--seed", "18446744073709551615"]) == 0
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["runtime_ms"] is None
    assert man["seed"] == 2 ** 64 - 1


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, "scenario.preset = quadratic\ngrid.N = 10\nensemble.paths = 1000\n"
                              "ensemble.levels = 3\noutput.plots = false\n")
    _, one = run_scenario(cfg, out_dir=str(tmp_path / "one"), timing=False, **QUIET)
    monkeypatch.setenv("UBSDE_THREADS", "4")
    _, four = run_scenario(cfg, out_dir=str(tmp_path / "four"), timing=False, **QUIET)
    assert one == four
    monkeypatch.setenv("UBSDE_THREADS", "many")
    code, _ = run_scenario(cfg, out_dir=str(tmp_path / "x"), **QUIET)
    assert code == 3


def test_invalid_field_named(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "grid.N = 0\n")
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "grid.N" in capsys.readouterr().out


def test_unknown_keys_listed(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "grid.N = 5\ngrid.NN = 5\nsolver.speed = 2\n")
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 3
    out = capsys.readouterr().out
    assert "grid.NN" in out and "solver.speed" in out


def test_simple_form_rejects_state_dependent_driver(tmp_path):
    cfg = write_cfg(tmp_path, "driver.preset = sin_y\nscenario.form = simple\ngrid.N = 5\n")
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 3


def test_non_convergence_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, "scenario.preset = sin_y_contraction\nsolver.max_iter = 2\n"
                              "grid.N = 10\nensemble.paths = 1000\nensemble.levels = 3\n"
                              "output.plots = false\n")
    code, man = run_scenario(cfg, out_dir=str(tmp_path / "o"), **QUIET)
    assert code == 2
    assert man["converged"] is False and man["iterations"] == 2
    assert (tmp_path / "o" / "contraction.csv").exists()


def test_bad_arguments():
    assert main(["run"]) == 3
    assert main(["run", "trivial_constant", "--seed", "-1"]) == 3
    assert main(["frobnicate"]) == 3
    assert main(["run", "no_such_preset_or_file"]) == 3


def test_verify_unknown_suite(capsys):
    assert main(["verify", "nope"]) == 3


def test_verify_calculus_quick(capsys):
    assert main(["verify", "calculus", "--quick"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ubsde", "presets"], capture_output=True, text=True)
    assert r.returncode == 0 and "trivial_constant" in r.stdout

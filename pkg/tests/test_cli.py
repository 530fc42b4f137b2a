import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ratilqr.cli import SUBCOMMANDS, main

ROOT = Path(__file__).resolve().parents[1]
LQ_SAMPLE = ROOT / "configs" / "lq_sample.ini"
FIXTURE = json.loads((ROOT / "tests" / "fixtures" / "lq_sample_expected.json").read_text())

SMALL_CROSSING = """
[problem]
type = crossing
[scenario]
horizon = 6
episode_steps = 3
mixture_offset = 0.1
[solver]
mode = rat-ilqr
kl_bound = 5.0
[cross_entropy]
num_steps = 2
[experiment]
num_runs = 2
methods = rat-ilqr, ilqg-baseline
kl_levels = 1.0, 5.0
mixture_offsets = 0.03, 0.07
[kl]
n_samples = 20000
target = 5.0
[sweep]
theta_min = 0.01
theta_max = 5
num = 6
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_CROSSING)
    return path


def run(config, out, command, *extra, seed=0):
    return main([command, "--config", str(config), "--out", str(out), "--seed", str(seed), *extra])


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# ")
    header = json.loads(lines[0][2:])
    return header, list(csv.DictReader(lines[1:]))


def test_lq_solve_matches_exact_recursion(tmp_path):
    assert run(LQ_SAMPLE, tmp_path, "solve") == 0
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert doc["theta_star"] == 0.5
    assert doc["cost_to_go"] == pytest.approx(FIXTURE["cost_to_go"], abs=1e-6)
    np.testing.assert_allclose(doc["gains"], FIXTURE["gains"], atol=1e-6)
    assert doc["config"]["lq"]["horizon"] == 9 and doc["seed"] == 0


def test_zero_kl_solve_short_circuits(tmp_path):
    code = run(LQ_SAMPLE, tmp_path, "solve", "--set", "solver.mode=rat-ilqr", "--set", "solver.kl_bound=0")
    assert code == 0
    doc = json.loads((tmp_path / "solution.json").read_text())
    assert doc["theta_star"] == 0.0 and doc["short_circuited"]


def test_infeasible_fixed_theta_exits_2(tmp_path):
    assert run(LQ_SAMPLE, tmp_path, "solve", "--set", "solver.fixed_theta=50") == 2
    assert json.loads((tmp_path / "solution.json").read_text())["feasible"] is False


def test_malformed_config_exits_1_with_diagnostic(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[solver]\nkl_bound = lots\n")
    assert run(bad, tmp_path / "o", "solve") == 1
    assert "solver.kl_bound" in capsys.readouterr().err
    assert run(LQ_SAMPLE, tmp_path / "o", "solve", "--set", "solver.kl_bound=inf") == 1


def test_usage_errors_exit_1(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["solve", "--config", str(LQ_SAMPLE), "--seed", "-3"])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["bogus"])
    assert err.value.code == 1


def test_calibrate_with_zero_target_is_config_error(small, tmp_path, capsys):
    assert run(small, tmp_path, "calibrate-kl", "--target", "0") == 1
    assert "target" in capsys.readouterr().err


def test_calibrate_unreachable_target_exits_2(small, tmp_path):
    assert run(small, tmp_path, "calibrate-kl", "--set", "kl.max_offset=0.001") == 2


def test_calibrate_writes_mixture_and_loadable_fragment(small, tmp_path):
    assert run(small, tmp_path, "calibrate-kl") == 0
    doc = json.loads((tmp_path / "mixture.json").read_text())
    assert doc["target"] == 5.0 and doc["mixture_offset"] > 0
    assert doc["relative_error"] == pytest.approx(abs(doc["reestimate"]["kl"] - 5.0) / 5.0)
    assert "mixture_offset" in (tmp_path / "calibrated.ini").read_text()


def test_sweep_has_no_nonfinite_cells(tmp_path):
    assert run(LQ_SAMPLE, tmp_path, "sweep-theta") == 0
    header, rows = read_csv(tmp_path / "sweep.csv")
    assert header["subcommand"] == "sweep-theta" and len(rows) == 30
    feasible = [r for r in rows if r["feasible"] == "1"]
    assert 0 < len(feasible) < len(rows)
    for r in rows:
        for key in ("theta", "s0", "objective"):
            assert r[key] == "" or math.isfinite(float(r[key]))
        assert (r["s0"] == "") == (r["feasible"] == "0")


def test_single_run_summary_has_zero_std(small, tmp_path):
    assert run(small, tmp_path, "experiment", "--set", "experiment.num_runs=1") == 0
    doc = json.loads((tmp_path / "summary.json").read_text())
    for s in doc["summary"].values():
        assert s["min_sep"]["std"] == 0.0 and s["single_sample"]
    assert sorted(p.name for p in (tmp_path / "episodes").iterdir()) == [
        "ilqg-baseline-000.jsonl", "rat-ilqr-000.jsonl"]


def test_lq_run_writes_episode(tmp_path):
    assert run(LQ_SAMPLE, tmp_path, "run") == 0
    lines = (tmp_path / "episode.jsonl").read_text().splitlines()
    assert json.loads(lines[0])["config"]["lq"]["episode_steps"] == 20
    summary = json.loads((tmp_path / "summary.json").read_text())["summary"]
    assert summary["steps"] == 20 and not summary["aborted"]


def test_crossing_only_subcommands_reject_lq(tmp_path, capsys):
    assert run(LQ_SAMPLE, tmp_path, "kl-estimate") == 1
    assert "crossing" in capsys.readouterr().err


def _artifacts(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_reruns_are_byte_identical(small, tmp_path, command):
    config = LQ_SAMPLE if command in ("solve", "sweep-theta") else small
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run(config, a, command, seed=11) == run(config, b, command, seed=11)
    first = _artifacts(a)
    assert first and first == _artifacts(b)
    if command not in ("solve", "sweep-theta"):
        run(config, c, command, seed=12)
        assert _artifacts(c) != first


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ratilqr", "solve", "--config", str(LQ_SAMPLE), "--out",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "solution.json").exists()

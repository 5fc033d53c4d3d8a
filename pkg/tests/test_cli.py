"""CLI: exit-code contract, report files, byte-identical reruns."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from conftest import DATASETS

GOLDEN = DATASETS / "sdp_gap.json"
CONFLICT = DATASETS / "conflict_1d.json"
CONSISTENT = DATASETS / "single_interval.json"


def run_cli(*args, **kwargs):
    return subprocess.run([sys.executable, "-m", "consist.cli", *map(str, args)],
                          capture_output=True, text=True, **kwargs)


def test_validate_golden_fixture(tmp_path):
    res = run_cli("validate", "--dataset", GOLDEN, "--out", tmp_path)
    assert res.returncode == 0
    payload = json.loads((tmp_path / "validate.json").read_text())
    assert payload["ok"] is True


def test_validate_flags_bad_dataset(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({
        "name": "bad",
        "parameters": [{"name": "x1", "lower": -1.0, "upper": 1.0}],
        "qois": [{"name": "q", "lower": 2.0, "upper": 2.0, "coeff": [0, 0.5, 0.5, 0]}],
    }))
    res = run_cli("validate", "--dataset", bad, "--out", tmp_path)
    assert res.returncode == 1
    assert "degenerate" in res.stderr


def test_scalar_exit_codes(tmp_path):
    res = run_cli("scalar", "--dataset", GOLDEN, "--out", tmp_path / "a")
    assert res.returncode == 1  # inconsistency proven
    payload = json.loads((tmp_path / "a" / "scm.json").read_text())
    assert payload["gamma_upper"] == pytest.approx(-1.0857, abs=1e-3)
    assert payload["consistent"] is False

    res = run_cli("scalar", "--dataset", CONSISTENT, "--out", tmp_path / "b")
    assert res.returncode == 0

    missing = run_cli("scalar", "--dataset", tmp_path / "nope.json", "--out", tmp_path)
    assert missing.returncode == 3

    malformed = tmp_path / "broken.json"
    malformed.write_text("{not json")
    res = run_cli("scalar", "--dataset", malformed, "--out", tmp_path)
    assert res.returncode == 3


def test_vector_exit_codes(tmp_path):
    res = run_cli("vector", "--dataset", GOLDEN, "--scheme", "unit",
                  "--out", tmp_path / "a")
    assert res.returncode == 2  # certified lower bound stays zero: undetermined
    payload = json.loads((tmp_path / "a" / "vcm.json").read_text())
    assert payload["value_lower"] == pytest.approx(0.0, abs=1e-6)

    res = run_cli("vector", "--dataset", CONSISTENT, "--scheme", "unit",
                  "--out", tmp_path / "b")
    assert res.returncode == 0
    rows = (tmp_path / "b" / "relaxations.csv").read_text().splitlines()
    assert rows[0] == "kind,name,relaxation,coefficient,effective_expansion,percent_of_width"
    for line in rows[1:]:
        assert float(line.split(",")[2]) == pytest.approx(0.0, abs=1e-8)

    res = run_cli("vector", "--dataset", CONFLICT, "--scheme", "unit",
                  "--param-scheme", "null", "--out", tmp_path / "c")
    assert res.returncode == 1  # certified positive lower bound


def test_vector_apply_writes_consistent_dataset(tmp_path):
    out = tmp_path / "relaxed.json"
    res = run_cli("vector", "--dataset", CONFLICT, "--scheme", "unit",
                  "--param-scheme", "null", "--out", tmp_path, "--apply", out)
    assert res.returncode == 1
    check = run_cli("scalar", "--dataset", out, "--out", tmp_path / "check")
    assert check.returncode == 0


def test_vector_overrides(tmp_path):
    overrides = tmp_path / "ov.json"
    overrides.write_text(json.dumps({"qoi_lower:q1": 0.0}))
    res = run_cli("vector", "--dataset", CONFLICT, "--scheme", "unit",
                  "--param-scheme", "null", "--overrides", overrides,
                  "--out", tmp_path)
    assert res.returncode == 1
    payload = json.loads((tmp_path / "vcm.json").read_text())
    assert payload["relaxations"]["qoi_lower"]["q1"] == 0.0
    assert payload["relaxations"]["qoi_upper"]["q2"] >= 0.9


def test_iterate_trace(tmp_path):
    res = run_cli("iterate", "--dataset", CONFLICT, "--starts", "8",
                  "--out", tmp_path)
    assert res.returncode == 0
    payload = json.loads((tmp_path / "iterate.json").read_text())
    assert payload["consistent"] is True
    assert len(payload["removed"]) == 1


def test_tradeoff_csv(tmp_path):
    res = run_cli("tradeoff", "--dataset", CONFLICT,
                  "--bound", "qoi_lower:q1", "--bound", "qoi_upper:q2",
                  "--samples", "6", "--out", tmp_path)
    assert res.returncode == 0
    rows = (tmp_path / "tradeoff.csv").read_text().splitlines()
    assert rows[0] == "r1,r2,d1,d2,eff1,eff2,rvcm_lower,feasible"
    assert len(rows) == 1 + 6 + 2  # header + samples + two axis cases


def test_trials_outputs(tmp_path):
    res = run_cli("trials", "--m", "20", "--n", "6", "--n-errors", "1",
                  "--trials", "6", "--seed", "3", "--out", tmp_path)
    assert res.returncode == 0
    for name in ("trials.csv", "trials.json", "hist_phi_E.csv", "hist_phi_delta.csv"):
        assert (tmp_path / name).exists()
    summary = json.loads((tmp_path / "trials.json").read_text())
    assert summary["trials"] == 6


@pytest.mark.parametrize("command", ["scalar", "vector", "iterate"])
def test_reruns_byte_identical(tmp_path, command):
    args = {
        "scalar": ("scalar", "--dataset", CONFLICT, "--seed", "7"),
        "vector": ("vector", "--dataset", CONFLICT, "--scheme", "unit",
                   "--param-scheme", "null", "--seed", "7"),
        "iterate": ("iterate", "--dataset", CONFLICT, "--starts", "8", "--seed", "7"),
    }[command]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli(*args, "--out", a).returncode == run_cli(*args, "--out", b).returncode
    files_a = sorted(p.name for p in a.iterdir())
    files_b = sorted(p.name for p in b.iterdir())
    assert files_a == files_b
    for name in files_a:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_trials_rerun_byte_identical(tmp_path):
    args = ("trials", "--m", "20", "--n", "6", "--n-errors", "2",
            "--trials", "5", "--seed", "1")
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli(*args, "--out", a)
    run_cli(*args, "--out", b)
    for name in ("trials.csv", "trials.json", "hist_phi_E.csv", "hist_phi_delta.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_dump_problem_flag(tmp_path):
    dump = tmp_path / "problem.txt"
    res = run_cli("scalar", "--dataset", CONFLICT, "--out", tmp_path,
                  "--dump-problem", dump)
    assert res.returncode in (0, 1, 2)
    assert dump.read_text().startswith("blocks ")

import json

import pytest

from hetero_alloc.cli import EXIT_INFEASIBLE, EXIT_INPUT, EXIT_MILESTONE, EXIT_OK, main
from hetero_alloc.trace import RunTrace


@pytest.fixture
def infeasible_file(tmp_path):
    d = {
        "name": "nobody_can",
        "model": {"T": [[1], [0]], "A": [[0, 0], [1, 1]], "capabilities": [{"hyperedges": [{"features": [0]}]}]},
        "robots": [{"state": [0.0, 0.0]}, {"state": [0.5, 0.0]}],
        "tasks": [{"type": "goto", "target": [1.0, 1.0]}, {"type": "goto", "target": [-1.0, 1.0]}],
        "sim": {"dt": 0.033, "duration": 0.5},
    }
    p = tmp_path / "nobody.json"
    p.write_text(json.dumps(d))
    return p


def test_run_then_analyze(tmp_path, capsys):
    assert main(["run", "--scenario", "example2", "--out", str(tmp_path), "--plots"]) == EXIT_OK
    csv = tmp_path / "example2_centralized.csv"
    assert csv.exists() and (tmp_path / "example2_centralized.json").exists()
    assert list(tmp_path.glob("*.svg"))
    capsys.readouterr()
    assert main(["analyze", "--trace", str(csv)]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == RunTrace.read(csv).steps
    assert summary["V_recomputed_exact"] is True
    assert len(summary["allocation_changes"]) == 1


def test_short_run_misses_milestones(tmp_path):
    assert main(["run", "--scenario", "example2", "--out", str(tmp_path), "--duration", "0.5"]) == EXIT_MILESTONE


def test_mixed_run_and_compare(tmp_path, capsys):
    assert main(["run", "--scenario", "example2", "--mode", "mixed", "--latency", "3", "--out", str(tmp_path)]) == EXIT_OK
    assert RunTrace.read(tmp_path / "example2_mixed.csv").meta["mode"] == "mixed"
    main(["compare", "--scenario", "example2", "--latency", "3", "--out", str(tmp_path)])
    lines = (tmp_path / "example2_input_gap.csv").read_text().splitlines()
    assert lines[0] == "t,max_abs_u_minus_uhat"
    assert "max |u - uhat|" in capsys.readouterr().out


def test_allocate_with_check(capsys):
    assert main(["allocate", "--scenario", "example1", "--check"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["objective"] == pytest.approx(out["brute_force_objective"], rel=1e-6, abs=1e-6)
    assert out["alpha"] == out["brute_force_alpha"]


def test_allocate_bigm(capsys):
    assert main(["allocate", "--scenario", "example1b", "--relaxation", "bigm"]) == EXIT_OK
    assert "objective" in json.loads(capsys.readouterr().out)


def test_infeasible_exit_codes(infeasible_file, tmp_path):
    assert main(["allocate", "--scenario", str(infeasible_file)]) == EXIT_INFEASIBLE
    assert main(["run", "--scenario", str(infeasible_file), "--out", str(tmp_path)]) == EXIT_INFEASIBLE


def test_bad_input_exit_code(tmp_path):
    assert main(["allocate", "--scenario", str(tmp_path / "missing.json")]) == EXIT_INPUT
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["allocate", "--scenario", str(broken)]) == EXIT_INPUT
    with pytest.raises(SystemExit):
        main(["run", "--scenario", "example1"])      # --out is required

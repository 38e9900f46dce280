import json
from pathlib import Path

import pytest

from eclab.cli import main, run, scenario_hash, validate_scenario, ScenarioError

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def _write(tmp_path, data, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def test_formats(capsys):
    assert main(["formats"]) == 0
    assert "little-endian" in capsys.readouterr().out


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_scenarios_validate(path):
    assert main(["validate", str(path)]) == 0


def test_schema_errors():
    with pytest.raises(ScenarioError):
        validate_scenario({"map": {"A": [[2]]}, "experiment": "nope"})
    with pytest.raises(ScenarioError):
        validate_scenario({"map": {"A": [[2]]}, "experiment": "eigencurrent"})  # needs degree
    with pytest.raises(ScenarioError):
        validate_scenario({"map": {"A": [[1, 2], [2, 4]]}, "experiment": "growth_rates"})
    with pytest.raises(ScenarioError):
        validate_scenario({"map": {"A": [[2]]}, "experiment": "growth_rates", "grid": {"N": 100}})


def test_invalid_file_exit_code(tmp_path):
    p = _write(tmp_path, {"map": {"A": [[2]]}, "experiment": "eigencurrent", "bogus": 1})
    assert main(["validate", str(p)]) == 1
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 1


def test_gap_violation_rejected_with_margin(tmp_path):
    p = _write(tmp_path, {"map": {"A": [[2, 1], [1, 1]]}, "experiment": "eigencurrent",
                          "degree": 1, "lambda": 0.3819660112501051})
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 1
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["status"] == "rejected"
    assert s["gap_margin"] == pytest.approx(0.381966011250 - 1.0)
    assert not (tmp_path / "o" / "trace.csv").exists()


def test_nonconvergence_exit_code(tmp_path):
    p = _write(tmp_path, {"map": {"A": [[2]], "perturbation": [{"coord": 0, "freq": [1], "sin": 0.05}]},
                          "experiment": "eigencurrent", "degree": 1, "grid": {"N": 256},
                          "solver": {"k_max": 2, "tol_weak": 1e-14}})
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["status"] == "non_convergent"
    assert (tmp_path / "o" / "trace.csv").exists()


def test_run_is_deterministic(tmp_path):
    data = {"map": {"A": [[2]], "perturbation": [{"coord": 0, "freq": [1], "sin": 0.05}]},
            "experiment": "eigencurrent", "degree": 1, "grid": {"N": 512}}
    p = _write(tmp_path, data)
    code1, _ = run(p, tmp_path / "a")
    code2, _ = run(p, tmp_path / "b", jobs=2)
    assert code1 == code2 == 0
    a = (tmp_path / "a" / "summary.json").read_bytes()
    assert a == (tmp_path / "b" / "summary.json").read_bytes()
    s = json.loads(a)
    assert s["scenario_hash"] == scenario_hash(data)
    assert "margin" in s["result"]["gap"]
    assert (tmp_path / "a" / "fields" / "eigencurrent.json").exists()


def test_seed_changes_hash(tmp_path):
    p = _write(tmp_path, {"map": {"A": [[2, 1], [1, 1]]}, "experiment": "growth_rates", "J": 5})
    _, a = run(p, tmp_path / "a", seed=1)
    _, b = run(p, tmp_path / "b", seed=2)
    assert a["scenario_hash"] != b["scenario_hash"]


def test_uniqueness_uses_jobs(tmp_path):
    p = _write(tmp_path, {"map": {"A": [[2, 1], [1, 1]]}, "experiment": "uniqueness", "degree": 1,
                          "grid": {"N": 32}, "exact_modes": [{"mode": [1, 2], "sin": 0.2}]})
    code, s = run(p, tmp_path / "o", jobs=2)
    assert code == 0 and s["result"]["distance"] < 1e-8

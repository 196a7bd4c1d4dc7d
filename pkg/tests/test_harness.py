import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from mdpconf import cli, harness
from mdpconf.core import ConfusionMatrix
from mdpconf.errors import ValidationError

SMALL_BAYES = {
    "n": 2,
    "actions": {"a": [[0, 1], [1, 0]], "b": [[0.9, 0.1], [0.5, 0.5]]},
    "confusion": [[0.6, 0.4], [0.2, 0.8]],
    "snapshot_every": 100,
    "estimator": {"type": "bayes2", "steps": 300, "grid_res": 11},
}


def _write(tmp_path, obj, name="scn.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return p


def _digests(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_builtin_scenarios_load():
    assert harness.builtin_scenarios() == ["paper_example", "sim_common_stationary", "sim_distinct_stationary"]
    s = harness.load_scenario("paper_example")
    np.testing.assert_allclose(s.mdp.transitions.sum(axis=2), 1)
    assert s.seed == 0 and s.method == "repetitive"
    assert s.estimator["exact_q"] is True


def test_load_defaults_echoed(tmp_path):
    raw = dict(SMALL_BAYES)
    s = harness.load_scenario(_write(tmp_path, raw))
    assert s.seed == 0 and s.name == "scn" and s.output_dir == "runs/scn"
    assert s.to_dict()["estimator"]["particles"] is None


def test_load_bad_row_named(tmp_path):
    raw = dict(SMALL_BAYES, confusion=[[0.6, 0.4], [0.2, 0.7]])
    with pytest.raises(ValidationError, match="confusion row 1 sums to 0.9"):
        harness.load_scenario(_write(tmp_path, raw))


def test_load_parse_error_has_position(tmp_path):
    p = _write(tmp_path, '{\n  "n": 2,\n  "actions": oops\n}')
    with pytest.raises(ValidationError, match=r"scn.json:3:14"):
        harness.load_scenario(p)


@pytest.mark.parametrize("patch,msg", [
    ({"estimator": {"type": "magic"}}, "estimator.type"),
    ({"estimator": {"type": "bayes1", "steps": 0}}, "steps"),
    ({"estimator": {"type": "bayes1", "bogus": 1}}, "unknown keys"),
    ({"seed": -1}, "seed"),
    ({"extra": 1}, "unknown top-level"),
    ({"actions": {"a": [[1, 0]]}}, "shape"),
    ({"estimator": {"type": "repetitive", "actions": ["zz"]}}, "unknown action"),
])
def test_load_validation(tmp_path, patch, msg):
    with pytest.raises(ValidationError, match=msg):
        harness.load_scenario(_write(tmp_path, {**SMALL_BAYES, **patch}))


def test_load_missing_file():
    with pytest.raises(ValidationError, match="no such file"):
        harness.load_scenario("/nonexistent/x.json")


def test_frobenius_error():
    C1 = ConfusionMatrix([[0.9, 0.1], [0.3, 0.7]])
    C2 = ConfusionMatrix([[0.3, 0.7], [0.9, 0.1]])
    assert harness.frobenius_error(C1, C1) == 0.0
    assert harness.frobenius_error(C1, C2) == pytest.approx(1.2, abs=1e-12)
    assert harness.frobenius_error(np.eye(2), np.full((2, 2), 0.5)) == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        harness.frobenius_error(np.eye(2), np.eye(3))


def test_worked_example_report(tmp_path):
    s = harness.load_scenario("paper_example").with_overrides(output_dir=str(tmp_path / "out"))
    rep = harness.run_experiment(s)
    assert rep.exit_code == 0 and rep.non_unique and rep.selected is None
    mats = sorted(np.round(c["matrix"], 6).tolist() for c in rep.candidates)
    assert mats == [[[0.3, 0.7], [0.9, 0.1]], [[0.9, 0.1], [0.3, 0.7]]]
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    for key in ("estimator", "candidates", "selected", "frobenius_error", "identifiability", "steps", "seed"):
        assert key in summary
    assert summary["seed"] == 0


def test_bayes_outputs_and_invariants(tmp_path):
    s = harness.load_scenario(_write(tmp_path, {**SMALL_BAYES, "output_dir": str(tmp_path / "o")}))
    rep = harness.run_experiment(s)
    assert rep.exit_code == 0
    for p in rep.paths:
        assert p.exists()
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    est = np.array(summary["estimate"])
    assert summary["frobenius_error"] == pytest.approx(harness.frobenius_error(est, s.confusion), abs=1e-12)
    rows = list(csv.DictReader((tmp_path / "o" / "posterior.csv").open()))
    assert list(rows[0]) == ["t", "alpha", "beta", "weight"]
    totals = {}
    for r in rows:
        totals[r["t"]] = totals.get(r["t"], 0.0) + float(r["weight"])
    assert sorted(map(int, totals)) == [0, 100, 200, 300]
    assert all(abs(v - 1) <= 1e-9 for v in totals.values())


def test_ensemble_outputs(tmp_path):
    raw = {**SMALL_BAYES, "output_dir": str(tmp_path / "e"),
           "estimator": {"type": "bayes1", "steps": 200, "particles": 50}}
    rep = harness.run_experiment(harness.load_scenario(_write(tmp_path, raw)))
    assert rep.exit_code == 0
    header = (tmp_path / "e" / "posterior.csv").read_text().splitlines()[0]
    assert header == "t,point_id,weight"
    support = json.loads((tmp_path / "e" / "support.json").read_text())
    assert len(support) == 50


def test_determinism(tmp_path):
    for name in ("a", "b"):
        s = harness.load_scenario(_write(tmp_path, {**SMALL_BAYES, "output_dir": str(tmp_path / name)}))
        harness.run_experiment(s)
    assert _digests(tmp_path / "a") == _digests(tmp_path / "b")


def test_estimator_failure_exit_code(tmp_path):
    raw = {
        "n": 2,
        "actions": {"a": [[0, 1], [1, 0]], "b": [[0.3, 0.7], [0.7, 0.3]]},
        "confusion": [[0.8, 0.2], [0.2, 0.8]],
        "output_dir": str(tmp_path / "x"),
        "estimator": {"type": "partition", "exact_q": True, "on_unidentifiable": "abort"},
    }
    rep = harness.run_experiment(harness.load_scenario(_write(tmp_path, raw)))
    assert rep.exit_code == harness.EXIT_IDENTIFIABILITY
    assert "IdentifiabilityError" in json.loads((tmp_path / "x" / "summary.json").read_text())["error"]


def test_cli_estimate_and_report(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL_BAYES)
    out = tmp_path / "cli"
    assert cli.main(["estimate", "--config", str(cfg), "--output-dir", str(out), "--seed", "3",
                     "--method", "bayes1", "--steps", "150"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 3 and summary["estimator"] == "bayes1" and summary["steps"] == 150
    assert cli.main(["report", str(out)]) == 0
    assert "bayes1" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path):
    bad = _write(tmp_path, {**SMALL_BAYES, "confusion": [[0.5, 0.4], [0.2, 0.8]]})
    assert cli.main(["estimate", "--config", str(bad), "--output-dir", str(tmp_path / "o")]) == 2
    assert cli.main(["check-identifiability", "--config", "paper_example", "--actions", "a", "a_prime"]) == 4
    assert cli.main(["check-identifiability", "--config", "paper_example"]) == 0


def test_cli_simulate(tmp_path):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", "paper_example", "--steps", "20", "--output-dir", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,s,s_tilde,a" and len(lines) == 22 and lines[-1].endswith(",-1")


def test_cli_jobs_isolated_dirs(tmp_path):
    a = _write(tmp_path, {**SMALL_BAYES, "name": "one"}, "one.json")
    b = _write(tmp_path, {**SMALL_BAYES, "name": "two", "seed": 1}, "two.json")
    out = tmp_path / "batch"
    assert cli.main(["estimate", "--config", str(a), str(b), "--output-dir", str(out), "--jobs", "2"]) == 0
    assert (out / "one" / "summary.json").exists() and (out / "two" / "summary.json").exists()


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "mdpconf.cli", "list-scenarios"],
                       capture_output=True, text=True, check=True)
    assert "paper_example" in r.stdout

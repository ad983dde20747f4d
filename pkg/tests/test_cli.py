"""End-to-end CLI runs against the mock components."""

from __future__ import annotations

import json

import pytest

from promptdag.cli import main


@pytest.fixture
def workspace(tmp_path):
    graph = {
        "agents": [
            {"id": "a", "role": "planner", "base_prompt": "Plan the work."},
            {"id": "b", "role": "writer", "base_prompt": "Draft the piece."},
            {"id": "c", "role": "editor", "base_prompt": "Polish the result."},
        ],
        "edges": [{"from": "a", "to": "b"}, {"from": "b", "to": "c"}],
        "root": "a",
    }
    (tmp_path / "graph.json").write_text(json.dumps(graph), encoding="utf-8")
    tasks = [
        {"id": f"t{i}", "input": f"payload {i}", "verifier": {"kind": "contains", "value": ":OK"}}
        for i in range(3)
    ]
    (tmp_path / "tasks.jsonl").write_text(
        "\n".join(json.dumps(t) for t in tasks) + "\n", encoding="utf-8"
    )
    config = {
        "graph": "graph.json",
        "tasks": "tasks.jsonl",
        "output_dir": "out",
        "k": 4,
        "seed": 3,
        "scorer": "mock",
        "executor": "mock",
        "judge": "mock",
        "mock_targets": {"a": "alpha", "b": "bravo", "c": "charlie"},
    }
    (tmp_path / "config.json").write_text(json.dumps(config), encoding="utf-8")
    return tmp_path


def test_optimize_writes_snapshot_and_report(workspace, capsys, monkeypatch):
    secret = "sk-never-let-this-leak"
    monkeypatch.setenv("PROMPTDAG_API_KEY", secret)
    code = main(["optimize", "--config", str(workspace / "config.json"), "--max-iterations", "6"])
    assert code == 0
    out = workspace / "out"
    snap = json.loads((out / "snapshot.json").read_text(encoding="utf-8"))
    assert snap["frozen"] is True
    assert snap["best"]["pass_rate"] == 1.0
    lines = (out / "trajectory.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == snap["iteration"]
    prompts = json.loads((out / "final_prompts.json").read_text(encoding="utf-8"))
    assert set(prompts) == {"a", "b", "c"}
    summary = (out / "summary.md").read_text(encoding="utf-8")
    assert "Adding: " in summary  # lineage-tagged edit presentation
    figure = out / "trajectory.png"
    assert figure.exists() and figure.stat().st_size > 1000
    for path in out.rglob("*"):
        if path.is_file() and path.suffix != ".png":
            assert secret not in path.read_text(encoding="utf-8")
    captured = capsys.readouterr()
    assert "best: iteration" in captured.out


def test_optimize_resume_from_snapshot(workspace, capsys):
    assert main(["optimize", "--config", str(workspace / "config.json"), "--max-iterations", "2"]) == 0
    snap_path = workspace / "out" / "snapshot.json"
    first = json.loads(snap_path.read_text(encoding="utf-8"))
    assert first["iteration"] == 2

    # A frozen snapshot resumes only through a fresh run_loop; unfreeze first.
    doc = json.loads(snap_path.read_text(encoding="utf-8"))
    doc["frozen"] = False
    resumable = workspace / "resume.json"
    resumable.write_text(json.dumps(doc), encoding="utf-8")
    code = main(
        [
            "optimize",
            "--config",
            str(workspace / "config.json"),
            "--resume",
            str(resumable),
            "--max-iterations",
            "6",
        ]
    )
    assert code == 0
    second = json.loads(snap_path.read_text(encoding="utf-8"))
    assert second["iteration"] > 2


def test_score_then_solve_roundtrip(workspace, capsys):
    tables_path = workspace / "tables.json"
    assert main(["score", "--config", str(workspace / "config.json"), "--out", str(tables_path)]) == 0
    tables = json.loads(tables_path.read_text(encoding="utf-8"))
    assert set(tables["nodes"]) == {"a", "b", "c"}
    assert set(tables["edges"]) == {"a->b", "b->c"}
    assert all(len(row) == 4 for row in tables["edges"]["a->b"])

    capsys.readouterr()
    trace_path = workspace / "trace.json"
    code = main(
        [
            "solve",
            "--graph",
            str(workspace / "graph.json"),
            "--tables",
            str(tables_path),
            "--trace",
            str(trace_path),
        ]
    )
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    assert set(result["choices"]) == {"a", "b", "c"}
    assert 0.0 <= result["score"] <= 1.0
    trace = json.loads(trace_path.read_text(encoding="utf-8"))
    assert trace["mode"] == "tree" and len(trace["messages"]) == 4


def test_inspect_prints_trace(workspace, capsys):
    test_score_then_solve_roundtrip(workspace, capsys)
    capsys.readouterr()
    assert main(["inspect", "--trace", str(workspace / "trace.json")]) == 0
    out = capsys.readouterr().out
    assert "mode: tree" in out
    assert "assignment:" in out
    assert "[  up]" in out and "[down]" in out


def test_report_from_snapshot(workspace, capsys):
    assert main(["optimize", "--config", str(workspace / "config.json"), "--max-iterations", "2"]) == 0
    out2 = workspace / "report2"
    code = main(
        ["report", "--snapshot", str(workspace / "out" / "snapshot.json"), "--out", str(out2)]
    )
    assert code == 0
    assert (out2 / "trajectory.jsonl").exists()
    assert (out2 / "trajectory.png").exists()


def test_shipped_sample_workspace_runs(tmp_path, capsys):
    import shutil
    from pathlib import Path

    sample = Path(__file__).parent.parent / "sample"
    work = tmp_path / "sample"
    shutil.copytree(sample, work)
    code = main(["optimize", "--config", str(work / "config.json"), "--max-iterations", "3"])
    assert code == 0
    snap = json.loads((work / "out" / "snapshot.json").read_text(encoding="utf-8"))
    assert snap["best"]["pass_rate"] == 1.0


def test_cli_domain_errors_exit_2(workspace, capsys):
    bad = workspace / "bad_config.json"
    bad.write_text(json.dumps({"graph": "graph.json", "tasks": "tasks.jsonl", "k": 1}), encoding="utf-8")
    assert main(["optimize", "--config", str(bad)]) == 2
    assert "error:" in capsys.readouterr().err

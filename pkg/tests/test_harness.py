"""Task ingestion, verifiers, executors, and configuration loading."""

from __future__ import annotations

import json
import sys

import pytest

from promptdag import (
    Agent,
    ChatReply,
    CommandExecutor,
    DuplicateTaskIdError,
    ExecutorFailure,
    LLMExecutor,
    MalformedRecordError,
    MockExecutor,
    ParseError,
    Score,
    Task,
    ValidationError,
    Verifier,
    execute_assignment,
    ingest_tasks,
    make_graph,
    pool_from_texts,
)
from promptdag.config import load_config
from promptdag.errors import TransportError
from promptdag.executors import compose_input
from promptdag.inference import Assignment


# -- ingest_tasks -------------------------------------------------------------


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def task_line(task_id, value=":OK"):
    return json.dumps(
        {"id": task_id, "input": "payload", "verifier": {"kind": "contains", "value": value}}
    )


def test_ingest_three_tasks(tmp_path):
    path = tmp_path / "tasks.jsonl"
    write_lines(path, [task_line("t1"), task_line("t2"), task_line("t3")])
    batch = ingest_tasks(path)
    assert len(batch) == 3
    assert [t.id for t in batch.tasks] == ["t1", "t2", "t3"]


def test_ingest_duplicate_id(tmp_path):
    path = tmp_path / "tasks.jsonl"
    write_lines(path, [task_line("t1"), task_line("t1")])
    with pytest.raises(DuplicateTaskIdError):
        ingest_tasks(path)


def test_ingest_malformed_record_reports_line(tmp_path):
    path = tmp_path / "tasks.jsonl"
    write_lines(path, [task_line("t1"), "{broken"])
    with pytest.raises(MalformedRecordError) as err:
        ingest_tasks(path)
    assert err.value.line == 2


def test_ingest_unknown_keys_rejected(tmp_path):
    path = tmp_path / "tasks.jsonl"
    record = json.loads(task_line("t1"))
    record["extra"] = True
    write_lines(path, [json.dumps(record)])
    with pytest.raises(MalformedRecordError):
        ingest_tasks(path)


def test_ingest_skips_blank_lines(tmp_path):
    path = tmp_path / "tasks.jsonl"
    path.write_text(task_line("t1") + "\n\n" + task_line("t2") + "\n", encoding="utf-8")
    assert len(ingest_tasks(path)) == 2


# -- verifiers ----------------------------------------------------------------


def test_exact_verifier():
    passed, detail = Verifier(kind="exact", value="42").check("42")
    assert passed and detail == ""
    passed, detail = Verifier(kind="exact", value="42").check("41")
    assert not passed and "42" in detail


def test_contains_verifier():
    assert Verifier(kind="contains", value=":OK").check("a:OK done")[0]
    assert not Verifier(kind="contains", value=":OK").check("a:FAIL")[0]


def test_command_verifier_exit_codes():
    ok = Verifier(
        kind="command",
        command=(sys.executable, "-c", "import sys; sys.exit(0 if 'yes' in sys.stdin.read() else 1)"),
    )
    assert ok.check("yes indeed")[0]
    passed, detail = ok.check("nope")
    assert not passed and "exited 1" in detail


# -- executors -----------------------------------------------------------------


def planted_setup():
    graph = make_graph(
        [Agent("a", base_prompt="base a"), Agent("b", base_prompt="base b")], [("a", "b")]
    )
    pools = {
        "a": pool_from_texts("a", ["mention alpha here", "no marker"], capacity=2),
        "b": pool_from_texts("b", ["mention bravo here", "no marker"], capacity=2),
    }
    task = Task(id="t1", input="payload", verifier=Verifier(kind="contains", value=":OK"))
    return graph, pools, task


def test_execute_assignment_planted_rule_pass():
    graph, pools, task = planted_setup()
    executor = MockExecutor(targets={"a": "alpha", "b": "bravo"})
    verdict = execute_assignment(
        executor, graph, Assignment(choices={"a": 1, "b": 1}, score=Score(0.0)), pools, task
    )
    assert verdict.passed and verdict.error == ""
    assert [e.agent for e in verdict.transcript] == ["a", "b"]
    assert verdict.transcript[0].input == "payload"
    assert verdict.transcript[1].input == "[a]\na:OK alpha"


def test_execute_assignment_planted_rule_fail_names_remedy():
    graph, pools, task = planted_setup()
    executor = MockExecutor(targets={"a": "alpha", "b": "bravo"})
    verdict = execute_assignment(
        executor, graph, Assignment(choices={"a": 2, "b": 1}, score=Score(0.0)), pools, task
    )
    assert not verdict.passed
    assert "agent a prompt must mention 'alpha'" in verdict.error


def test_execute_assignment_single_agent_transcript():
    graph = make_graph([Agent("solo", base_prompt="base")], [])
    pools = {"solo": pool_from_texts("solo", ["any prompt"], capacity=1)}
    task = Task(id="t", input="in", verifier=Verifier(kind="contains", value=":OK"))
    verdict = execute_assignment(
        MockExecutor(), graph, Assignment(choices={"solo": 1}, score=Score(0.0)), pools, task
    )
    assert len(verdict.transcript) == 1 and verdict.passed


def test_execute_assignment_records_executor_failure():
    graph, pools, task = planted_setup()

    class Broken:
        name = "broken"

        def run_agent(self, agent, prompt, input_text):
            raise ExecutorFailure("no backend")

    verdict = execute_assignment(
        Broken(), graph, Assignment(choices={"a": 1, "b": 1}, score=Score(0.0)), pools, task
    )
    assert not verdict.passed
    assert "executor failure at a" in verdict.error


def test_compose_input_orders_producers():
    text = compose_input("task payload", [("a", "out a"), ("b", "out b")])
    assert text == "task payload\n\n[a]\nout a\n\n[b]\nout b"


def test_multi_parent_input_is_ordered_and_prefixed(diamond):
    pools = {
        a: pool_from_texts(a, [f"prompt {a}"], capacity=1) for a in diamond.agent_ids()
    }
    task = Task(id="t", input="payload", verifier=Verifier(kind="contains", value=":OK"))
    verdict = execute_assignment(
        MockExecutor(),
        diamond,
        Assignment(choices={a: 1 for a in diamond.agent_ids()}, score=Score(0.0)),
        pools,
        task,
    )
    d_input = next(e.input for e in verdict.transcript if e.agent == "d")
    assert d_input.index("[b]") < d_input.index("[c]")


def test_command_executor_roundtrip():
    code = "import sys, json; d = json.load(sys.stdin); print('echo:' + d['agent'] + ':' + d['prompt'])"
    executor = CommandExecutor([sys.executable, "-c", code])
    out = executor.run_agent(Agent("a"), "my prompt", "input")
    assert out.strip() == "echo:a:my prompt"


def test_command_executor_nonzero_exit():
    executor = CommandExecutor([sys.executable, "-c", "import sys; sys.exit(3)"])
    with pytest.raises(ExecutorFailure) as err:
        executor.run_agent(Agent("a"), "p", "i")
    assert "exited 3" in str(err.value)


def test_llm_executor_uses_prompt_as_system():
    class FakeGateway:
        def __init__(self):
            self.requests = []

        def chat(self, request):
            self.requests.append(request)
            return ChatReply(content="answer")

    gateway = FakeGateway()
    executor = LLMExecutor(gateway, model="m")
    out = executor.run_agent(Agent("a"), "system prompt", "user input")
    assert out == "answer"
    request = gateway.requests[0]
    assert request.messages[0] == {"role": "system", "content": "system prompt"}
    assert request.messages[1] == {"role": "user", "content": "user input"}
    assert request.temperature == 0.2 and request.max_tokens == 2048


def test_llm_executor_wraps_gateway_errors():
    class DownGateway:
        def chat(self, request):
            raise TransportError("down")

    with pytest.raises(ExecutorFailure):
        LLMExecutor(DownGateway(), model="m").run_agent(Agent("a"), "p", "i")


def test_mock_executor_deterministic():
    executor = MockExecutor(targets={"a": "alpha"})
    agent = Agent("a")
    assert executor.run_agent(agent, "has alpha", "in") == executor.run_agent(
        agent, "has alpha", "in"
    )


# -- config ---------------------------------------------------------------------


def write_config(tmp_path, extra=None, **overrides):
    graph = tmp_path / "graph.json"
    graph.write_text(
        json.dumps(
            {
                "agents": [{"id": "a", "base_prompt": "base a"}, {"id": "b", "base_prompt": "base b"}],
                "edges": [{"from": "a", "to": "b"}],
                "root": "a",
            }
        ),
        encoding="utf-8",
    )
    tasks = tmp_path / "tasks.jsonl"
    write_lines(tasks, [task_line("t1"), task_line("t2")])
    doc = {"graph": "graph.json", "tasks": "tasks.jsonl", **(extra or {}), **overrides}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


def test_config_defaults_follow_protocol(tmp_path):
    cfg = load_config(write_config(tmp_path))
    assert cfg.k == 5 and cfg.patience == 3
    assert cfg.epsilon == 0.0 and cfg.max_iterations == 10
    assert cfg.endpoint.temperature == 0.2 and cfg.endpoint.max_tokens == 2048


def test_config_rejects_small_k(tmp_path):
    with pytest.raises(ValidationError) as err:
        load_config(write_config(tmp_path, k=1))
    assert err.value.field == "k"


def test_config_rejects_missing_task_file(tmp_path):
    path = write_config(tmp_path)
    (tmp_path / "tasks.jsonl").unlink()
    with pytest.raises(ValidationError) as err:
        load_config(path)
    assert err.value.field == "tasks"


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ValidationError):
        load_config(write_config(tmp_path, mystery=1))


def test_config_rejects_inline_secrets(tmp_path):
    path = write_config(tmp_path, extra={"endpoint": {"base_url": "http://x", "model": "m", "api_key": "nope"}})
    with pytest.raises(ValidationError) as err:
        load_config(path)
    assert "environment" in str(err.value)


def test_config_llm_requires_endpoint(tmp_path):
    with pytest.raises(ValidationError):
        load_config(write_config(tmp_path, scorer="llm"))


def test_config_command_executor_requires_command(tmp_path):
    with pytest.raises(ValidationError):
        load_config(write_config(tmp_path, executor="command"))


def test_config_parse_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParseError):
        load_config(path)

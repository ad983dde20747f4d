"""Agent executors and assignment execution.

An executor turns (agent, prompt, input) into the agent's textual output.
Three implementations: a deterministic mock keyed on per-agent marker
tokens (first-class, so the whole system runs with zero network access),
an external-command bridge, and a chat-endpoint executor.
"""

from __future__ import annotations

import json
import re
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol

from .errors import ExecutorFailure, GatewayError
from .gateway import ChatGateway, ChatRequest
from .inference import Assignment
from .scoring import text_tokens
from .tasks import Task, TaskBatch
from .topology import Agent, AgentGraph, AgentId, PromptPool, topological_order


@dataclass(frozen=True)
class TranscriptEntry:
    agent: AgentId
    input: str
    output: str


@dataclass(frozen=True)
class Verdict:
    """Outcome of running one task under a fixed assignment."""

    task_id: str
    passed: bool
    error: str
    transcript: tuple[TranscriptEntry, ...]

    def __post_init__(self):
        if not self.passed and not self.error:
            raise ValueError("failed verdicts must carry an error text")


class Executor(Protocol):
    name: str

    def run_agent(self, agent: Agent, prompt: str, input_text: str) -> str: ...


_FAIL_REASON = re.compile(r":FAIL\s+(.+)$", re.MULTILINE)


class MockExecutor:
    """Planted-rule executor: an agent succeeds iff its prompt mentions its
    marker token and every upstream output succeeded.

    Failures propagate downstream as ``<id>:FAIL <reasons>`` outputs whose
    reason clauses are actionable fix sentences, so the feedback loop can
    recover the missing markers.  Deterministic: output depends only on the
    prompt text and the upstream outputs.
    """

    name = "mock"

    def __init__(self, targets: dict[AgentId, str] | None = None):
        self.targets = dict(targets or {})

    def run_agent(self, agent: Agent, prompt: str, input_text: str) -> str:
        reasons: list[str] = []
        target = self.targets.get(agent.id)
        if target and target.lower() not in text_tokens(prompt):
            reasons.append(f"agent {agent.id} prompt must mention '{target}'")
        for match in _FAIL_REASON.finditer(input_text):
            for clause in match.group(1).split("; "):
                clause = clause.strip()
                if clause and clause not in reasons:
                    reasons.append(clause)
        if reasons:
            return f"{agent.id}:FAIL " + "; ".join(reasons)
        return f"{agent.id}:OK {target or 'done'}"


class CommandExecutor:
    """Runs an external command per agent call.

    The command receives ``{"agent", "role", "prompt", "input"}`` as JSON on
    stdin and must print the agent output on stdout; a non-zero exit is an
    ExecutorFailure.
    """

    name = "command"

    def __init__(self, command: list[str], timeout: float = 60.0):
        self.command = list(command)
        self.timeout = timeout

    def run_agent(self, agent: Agent, prompt: str, input_text: str) -> str:
        payload = json.dumps(
            {"agent": agent.id, "role": agent.role, "prompt": prompt, "input": input_text}
        )
        try:
            proc = subprocess.run(
                self.command,
                input=payload,
                text=True,
                capture_output=True,
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExecutorFailure(f"command executor failed: {exc}") from exc
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout).strip()[-400:]
            raise ExecutorFailure(f"command exited {proc.returncode}: {tail}")
        return proc.stdout


class LLMExecutor:
    """Executes an agent as one chat call: prompt as system, input as user."""

    name = "llm"

    def __init__(
        self,
        gateway: ChatGateway,
        model: str,
        temperature: float = 0.2,
        max_tokens: int = 2048,
    ):
        self.gateway = gateway
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens

    def run_agent(self, agent: Agent, prompt: str, input_text: str) -> str:
        request = ChatRequest(
            model=self.model,
            messages=[
                {"role": "system", "content": prompt},
                {"role": "user", "content": input_text},
            ],
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )
        try:
            return self.gateway.chat(request).content
        except GatewayError as exc:
            raise ExecutorFailure(f"agent {agent.id} call failed: {exc}") from exc


def compose_input(task_input: str, producers: list[tuple[AgentId, str]]) -> str:
    """Assemble an agent's input from the task payload and upstream blocks.

    Upstream blocks are ordered ascending by producer identifier and each is
    prefixed with the producer's id.
    """
    parts = []
    if task_input:
        parts.append(task_input)
    for producer, output in producers:
        parts.append(f"[{producer}]\n{output}")
    return "\n\n".join(parts)


def execute_assignment(
    executor: Executor,
    graph: AgentGraph,
    assignment: Assignment,
    pools: dict[AgentId, PromptPool],
    task: Task,
) -> Verdict:
    """Run every agent in topological order and verify the final output.

    Source agents receive the task input; every other agent receives its
    upstream outputs.  With several sinks, the topologically last one is
    verified.  An ExecutorFailure is recorded as a failed verdict.
    """
    order = topological_order(graph)
    outputs: dict[AgentId, str] = {}
    transcript: list[TranscriptEntry] = []
    for agent_id in order:
        agent = graph.agent(agent_id)
        prompt = pools[agent_id].get(assignment.choices[agent_id]).text
        upstream = graph.parents(agent_id)
        task_input = task.input if not upstream else ""
        input_text = compose_input(task_input, [(u, outputs[u]) for u in upstream])
        try:
            output = executor.run_agent(agent, prompt, input_text)
        except ExecutorFailure as exc:
            transcript.append(TranscriptEntry(agent=agent_id, input=input_text, output=""))
            return Verdict(
                task_id=task.id,
                passed=False,
                error=f"executor failure at {agent_id}: {exc}",
                transcript=tuple(transcript),
            )
        transcript.append(TranscriptEntry(agent=agent_id, input=input_text, output=output))
        outputs[agent_id] = output
    sink = max(graph.sinks(), key=order.index)
    passed, detail = task.verifier.check(outputs[sink])
    return Verdict(
        task_id=task.id,
        passed=passed,
        error="" if passed else detail,
        transcript=tuple(transcript),
    )


def execute_batch(
    executor: Executor,
    graph: AgentGraph,
    assignment: Assignment,
    pools: dict[AgentId, PromptPool],
    batch: TaskBatch,
    max_workers: int = 1,
) -> list[Verdict]:
    """Run the batch, joining results deterministically by task id."""
    if max_workers <= 1:
        verdicts = [
            execute_assignment(executor, graph, assignment, pools, task)
            for task in batch.tasks
        ]
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as tpe:
            verdicts = list(
                tpe.map(
                    lambda task: execute_assignment(executor, graph, assignment, pools, task),
                    batch.tasks,
                )
            )
    return sorted(verdicts, key=lambda v: v.task_id)

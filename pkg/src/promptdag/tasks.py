"""Task batches and output verifiers.

Batches are line-delimited JSON, one task per line:
``{"id": ..., "input": ..., "verifier": {...}}``.  A verifier is either an
exact-match against an expected string, a substring check, or an external
command that receives the candidate output on stdin and signals success
with exit code 0.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

from .errors import DuplicateTaskIdError, MalformedRecordError

_VERIFIER_KINDS = {"exact", "contains", "command"}
_VERIFIER_KEYS = {"kind", "value", "command"}
_TASK_KEYS = {"id", "input", "verifier"}


@dataclass(frozen=True)
class Verifier:
    kind: str
    value: str = ""
    command: tuple[str, ...] = ()
    timeout: float = 30.0

    def __post_init__(self):
        if self.kind not in _VERIFIER_KINDS:
            raise ValueError(f"unknown verifier kind {self.kind!r}")
        if self.kind == "command" and not self.command:
            raise ValueError("command verifier needs a command")

    def check(self, output: str) -> tuple[bool, str]:
        """Return (passed, failure detail); detail is empty on success."""
        if self.kind == "exact":
            if output.strip() == self.value.strip():
                return True, ""
            return False, f"expected exactly {self.value!r}, got {_clip(output)!r}"
        if self.kind == "contains":
            if self.value in output:
                return True, ""
            return False, f"expected output containing {self.value!r}, got {_clip(output)!r}"
        try:
            proc = subprocess.run(
                list(self.command),
                input=output,
                text=True,
                capture_output=True,
                timeout=self.timeout,
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            return False, f"checker command failed: {exc}"
        if proc.returncode == 0:
            return True, ""
        tail = (proc.stderr or proc.stdout).strip()[-200:]
        return False, f"checker exited {proc.returncode}: {tail}"

    def to_document(self) -> dict:
        doc: dict = {"kind": self.kind}
        if self.kind == "command":
            doc["command"] = list(self.command)
        else:
            doc["value"] = self.value
        return doc


def _clip(text: str, limit: int = 200) -> str:
    return text if len(text) <= limit else text[:limit] + "..."


@dataclass(frozen=True)
class Task:
    id: str
    input: str
    verifier: Verifier


@dataclass(frozen=True)
class TaskBatch:
    tasks: tuple[Task, ...]

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("task batch must be non-empty")
        ids = [t.id for t in self.tasks]
        if len(ids) != len(set(ids)):
            raise DuplicateTaskIdError("task batch has duplicate ids")

    def __len__(self) -> int:
        return len(self.tasks)

    def to_documents(self) -> list[dict]:
        return [
            {"id": t.id, "input": t.input, "verifier": t.verifier.to_document()}
            for t in self.tasks
        ]


def verifier_from_document(doc: dict, line: int = 0) -> Verifier:
    if not isinstance(doc, dict):
        raise MalformedRecordError("verifier must be an object", line)
    unknown = set(doc) - _VERIFIER_KEYS
    if unknown:
        raise MalformedRecordError(f"unknown verifier keys: {sorted(unknown)}", line)
    kind = doc.get("kind")
    if kind not in _VERIFIER_KINDS:
        raise MalformedRecordError(f"verifier kind must be one of {sorted(_VERIFIER_KINDS)}", line)
    if kind == "command":
        raw = doc.get("command")
        if isinstance(raw, str):
            command = tuple(shlex.split(raw))
        elif isinstance(raw, list) and all(isinstance(x, str) for x in raw):
            command = tuple(raw)
        else:
            raise MalformedRecordError("command verifier needs a string or list command", line)
        return Verifier(kind="command", command=command)
    value = doc.get("value")
    if not isinstance(value, str):
        raise MalformedRecordError(f"{kind} verifier needs a string value", line)
    return Verifier(kind=kind, value=value)


def task_from_document(doc: dict, line: int = 0) -> Task:
    if not isinstance(doc, dict):
        raise MalformedRecordError("task record must be an object", line)
    unknown = set(doc) - _TASK_KEYS
    if unknown:
        raise MalformedRecordError(f"unknown task keys: {sorted(unknown)}", line)
    for key in ("id", "input", "verifier"):
        if key not in doc:
            raise MalformedRecordError(f"task record missing {key!r}", line)
    return Task(
        id=str(doc["id"]),
        input=str(doc["input"]),
        verifier=verifier_from_document(doc["verifier"], line),
    )


def ingest_tasks(path: str | Path) -> TaskBatch:
    """Load a line-delimited batch; every malformed line is a located error."""
    tasks: list[Task] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(f"invalid JSON: {exc}", line_no) from None
            task = task_from_document(doc, line_no)
            if task.id in seen:
                raise DuplicateTaskIdError(f"duplicate task id {task.id!r} at line {line_no}")
            seen.add(task.id)
            tasks.append(task)
    return TaskBatch(tasks=tuple(tasks))

"""Run configuration loading and validation.

Configuration is a single JSON document; unknown keys are rejected and the
API key is never read from the file, only from the environment variable
named by ``endpoint.api_key_env``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ParseError, ValidationError

_ENDPOINT_KEYS = {
    "base_url",
    "model",
    "timeout",
    "api_key_env",
    "max_attempts",
    "concurrency",
    "temperature",
    "max_tokens",
}
_CONFIG_KEYS = {
    "graph",
    "tasks",
    "output_dir",
    "k",
    "patience",
    "epsilon",
    "max_iterations",
    "seed",
    "scorer",
    "executor",
    "judge",
    "endpoint",
    "mock_targets",
    "command",
    "workers",
    "bootstrap_draws",
}

SCORER_KINDS = {"mock", "llm"}
EXECUTOR_KINDS = {"mock", "command", "llm"}
JUDGE_KINDS = {"mock", "llm"}


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = ""
    model: str = ""
    timeout: float = 60.0
    api_key_env: str = "PROMPTDAG_API_KEY"
    max_attempts: int = 4
    concurrency: int = 4
    temperature: float = 0.2
    max_tokens: int = 2048


@dataclass(frozen=True)
class RunConfig:
    graph_path: Path
    tasks_path: Path
    output_dir: Path
    k: int = 5
    patience: int = 3
    epsilon: float = 0.0
    max_iterations: int = 10
    seed: int = 0
    scorer: str = "mock"
    executor: str = "mock"
    judge: str = "mock"
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    mock_targets: dict[str, str] = field(default_factory=dict)
    command: tuple[str, ...] = ()
    workers: int = 1
    bootstrap_draws: int = 2

    def validated(self) -> RunConfig:
        if not self.graph_path.exists():
            raise ValidationError("graph file does not exist", field="graph")
        if not self.tasks_path.exists():
            raise ValidationError("tasks file does not exist", field="tasks")
        if self.k < 2:
            raise ValidationError("k must be >= 2", field="k")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1", field="patience")
        if self.epsilon < 0:
            raise ValidationError("epsilon must be >= 0", field="epsilon")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1", field="max_iterations")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1", field="workers")
        if self.scorer not in SCORER_KINDS:
            raise ValidationError(f"scorer must be one of {sorted(SCORER_KINDS)}", field="scorer")
        if self.executor not in EXECUTOR_KINDS:
            raise ValidationError(
                f"executor must be one of {sorted(EXECUTOR_KINDS)}", field="executor"
            )
        if self.judge not in JUDGE_KINDS:
            raise ValidationError(f"judge must be one of {sorted(JUDGE_KINDS)}", field="judge")
        needs_endpoint = "llm" in (self.scorer, self.executor, self.judge)
        if needs_endpoint and (not self.endpoint.base_url or not self.endpoint.model):
            raise ValidationError(
                "llm components need endpoint.base_url and endpoint.model", field="endpoint"
            )
        if self.executor == "command" and not self.command:
            raise ValidationError("command executor needs a command", field="command")
        return self


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for key in ("graph", "tasks"):
        if key not in raw:
            raise ValidationError("required", field=key)

    endpoint = EndpointConfig()
    if "endpoint" in raw:
        entry = raw["endpoint"]
        if not isinstance(entry, dict):
            raise ValidationError("must be an object", field="endpoint")
        if "api_key" in entry:
            raise ValidationError(
                "secrets are read from the environment, never from the config file",
                field="endpoint.api_key",
            )
        unknown = set(entry) - _ENDPOINT_KEYS
        if unknown:
            raise ValidationError(f"unknown endpoint keys: {sorted(unknown)}", field="endpoint")
        endpoint = replace(
            endpoint,
            **{
                k: type(getattr(endpoint, k))(v)
                for k, v in entry.items()
            },
        )

    base_dir = path.parent
    command = raw.get("command", [])
    if isinstance(command, str):
        command = command.split()
    cfg = RunConfig(
        graph_path=base_dir / str(raw["graph"]),
        tasks_path=base_dir / str(raw["tasks"]),
        output_dir=base_dir / str(raw.get("output_dir", "out")),
        k=int(raw.get("k", 5)),
        patience=int(raw.get("patience", 3)),
        epsilon=float(raw.get("epsilon", 0.0)),
        max_iterations=int(raw.get("max_iterations", 10)),
        seed=int(raw.get("seed", 0)),
        scorer=str(raw.get("scorer", "mock")),
        executor=str(raw.get("executor", "mock")),
        judge=str(raw.get("judge", raw.get("scorer", "mock"))),
        endpoint=endpoint,
        mock_targets={str(k): str(v) for k, v in raw.get("mock_targets", {}).items()},
        command=tuple(str(x) for x in command),
        workers=int(raw.get("workers", 1)),
        bootstrap_draws=int(raw.get("bootstrap_draws", 2)),
    )
    return cfg.validated()

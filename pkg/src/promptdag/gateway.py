"""HTTP gateway to chat-completions-compatible endpoints.

Every attempt (success or failure) is appended to a JSONL audit log with
the bearer token redacted; retries use exponential backoff and only fire
for 429/5xx statuses and transport-level failures.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import requests

from .errors import GatewayTimeout, HttpStatusError, TransportError

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_TOKENS = 2048


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: list[dict[str, str]]
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS

    def body(self) -> dict:
        return {
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class ChatReply:
    content: str
    finish_reason: str = ""
    usage: dict = field(default_factory=dict)


_RETRYABLE = {429}


class ChatGateway:
    """Thread-safe client with bounded retries and per-attempt audit records.

    The bearer token is read from ``api_key_env`` at call time and never
    written to any persisted file.  A semaphore caps concurrent in-flight
    requests.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "PROMPTDAG_API_KEY",
        timeout: float = 60.0,
        max_attempts: int = 4,
        backoff_base: float = 0.5,
        audit_path: str | Path | None = None,
        max_concurrency: int = 4,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.audit_path = Path(audit_path) if audit_path else None
        self._sleep = sleeper
        self._semaphore = threading.Semaphore(max_concurrency)
        self._audit_lock = threading.Lock()
        self._session = requests.Session()

    def chat(self, request: ChatRequest) -> ChatReply:
        url = self.base_url + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_status: int | None = None
        last_error = ""
        with self._semaphore:
            for attempt in range(1, self.max_attempts + 1):
                try:
                    response = self._session.post(
                        url, json=request.body(), headers=headers, timeout=self.timeout
                    )
                except requests.Timeout as exc:
                    last_error = f"timeout: {exc}"
                    self._audit(attempt, request, status=None, error=last_error)
                    if attempt == self.max_attempts:
                        raise GatewayTimeout(f"no reply within {self.timeout}s") from exc
                    self._backoff(attempt)
                    continue
                except requests.RequestException as exc:
                    last_error = f"transport: {exc}"
                    self._audit(attempt, request, status=None, error=last_error)
                    if attempt == self.max_attempts:
                        raise TransportError(str(exc)) from exc
                    self._backoff(attempt)
                    continue
                last_status = response.status_code
                if response.status_code == 200:
                    reply = self._parse_reply(response)
                    self._audit(attempt, request, status=200, content=reply.content)
                    return reply
                detail = response.text[:500]
                self._audit(attempt, request, status=response.status_code, error=detail)
                if response.status_code in _RETRYABLE or response.status_code >= 500:
                    if attempt == self.max_attempts:
                        raise HttpStatusError(response.status_code, "retries exhausted")
                    self._backoff(attempt)
                    continue
                raise HttpStatusError(response.status_code, detail)
        raise HttpStatusError(last_status or 0, last_error)  # pragma: no cover - defensive

    @staticmethod
    def _parse_reply(response: requests.Response) -> ChatReply:
        try:
            data = response.json()
            choice = data["choices"][0]
            content = choice["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unparseable chat reply: {exc}") from exc
        return ChatReply(
            content=content,
            finish_reason=str(choice.get("finish_reason", "")),
            usage=dict(data.get("usage", {})),
        )

    def _backoff(self, attempt: int) -> None:
        self._sleep(self.backoff_base * (2 ** (attempt - 1)))

    def _audit(
        self,
        attempt: int,
        request: ChatRequest,
        status: int | None,
        content: str | None = None,
        error: str | None = None,
    ) -> None:
        if self.audit_path is None:
            return
        record = {
            "ts": time.time(),
            "attempt": attempt,
            "request": request.body(),
            "status": status,
        }
        if content is not None:
            record["content"] = content
        if error is not None:
            record["error"] = error
        line = json.dumps(record, ensure_ascii=False)
        with self._audit_lock:
            self.audit_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.audit_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

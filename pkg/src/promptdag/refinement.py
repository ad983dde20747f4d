"""Preference-guided pool refinement and the stopping rule.

After each selection round the loop (1) reclassifies pool candidates into
accepted/rejected preference exemplars, (2) distills execution errors into
at most three global fix suggestions, (3) walks the reversed topology so
every agent receives blame statements from its downstream consumers and
turns them into local fixes, and (4) rewrites each agent's pool as the
previously selected prompt plus K-1 small-edit variants, each tagged with
exactly one edit action.  Optimization stops once no validation-score gain
above the tolerance has been seen for a full patience window.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

from . import templates
from .errors import (
    GatewayError,
    MalformedReplyError,
    ScorerUnavailableError,
    VariantCountMismatchError,
)
from .gateway import ChatGateway, ChatRequest
from .scoring import Demonstration, PreferencePool, Score
from .topology import AgentGraph, AgentId, PromptCandidate, PromptPool, topological_order

log = logging.getLogger(__name__)

GLOBAL_FEEDBACK_LIMIT = 3


class MutationAction(str, Enum):
    """The allowed small-edit actions; every variant carries exactly one."""

    ADD_SENTENCE = "AddSentence"
    REPLACE_SENTENCE = "ReplaceSentence"
    REORGANIZE = "Reorganize"
    DELETE_SENTENCE = "DeleteSentence"


_ACTION_CYCLE = (
    MutationAction.ADD_SENTENCE,
    MutationAction.REPLACE_SENTENCE,
    MutationAction.REORGANIZE,
    MutationAction.DELETE_SENTENCE,
)


@dataclass(frozen=True)
class GlobalFeedback:
    """At most three fix suggestions distilled from execution errors."""

    items: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.items) > GLOBAL_FEEDBACK_LIMIT:
            raise ValueError(f"global feedback capped at {GLOBAL_FEEDBACK_LIMIT} items")


@dataclass(frozen=True)
class LocalFeedback:
    """Blames received from downstream agents plus this agent's own fixes."""

    agent: AgentId
    blames: tuple[str, ...] = ()
    fixes: tuple[str, ...] = ()


@dataclass(frozen=True)
class TerminationPolicy:
    """Patience window size and improvement tolerance for the stop rule."""

    patience: int = 3
    tolerance: float = 0.0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")


class LanguageJudge(Protocol):
    """Critic, feedback, and mutation roles behind one interface."""

    name: str

    def classify_candidates(self, pool: PromptPool, scores: list[Score]) -> list[bool]: ...

    def distill_global_feedback(self, errors: list[str]) -> list[str]: ...

    def local_fixes(
        self,
        agent: AgentId,
        prompt: str,
        global_items: list[str],
        blames: list[str],
        transcript: str,
    ) -> list[str]: ...

    def mutate_prompt(
        self, selected: str, n: int, global_items: list[str], local_fixes: list[str]
    ) -> list[tuple[str, MutationAction]]: ...

    def vary_prompt(self, base: str, n: int) -> list[str]: ...

    def degrade_examples(self, good: list, mode: str, n: int) -> list: ...


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def update_preferences(
    critic: LanguageJudge,
    pool: PromptPool,
    scores: list[Score],
    demos: PreferencePool,
    response: str = "",
) -> PreferencePool:
    """Route every candidate into the accepted or rejected exemplar pool."""
    if len(scores) != len(pool):
        raise ValueError(f"{len(scores)} scores for a pool of {len(pool)}")
    flags = critic.classify_candidates(pool, scores)
    for cand, accepted in zip(pool.candidates, flags):
        demo = Demonstration(prompt=cand.text, response=response)
        demos = demos.accept(demo) if accepted else demos.reject(demo)
    return demos


def collect_global_feedback(judge: LanguageJudge, errors: list[str]) -> GlobalFeedback:
    """Distill execution errors into at most three fix suggestions."""
    if not errors:
        return GlobalFeedback(())
    items = judge.distill_global_feedback(list(errors))
    return GlobalFeedback(tuple(items[:GLOBAL_FEEDBACK_LIMIT]))


def collect_local_feedback(
    judge: LanguageJudge,
    graph: AgentGraph,
    global_feedback: GlobalFeedback,
    transcripts: dict[AgentId, tuple[str, str]],
    prompts: dict[AgentId, str],
) -> dict[AgentId, LocalFeedback]:
    """Reverse-topology blame propagation with per-agent fix lists.

    Agents are visited sinks-first (reverse topological order), so each
    blamer has already seen the blames from its own downstream consumers.
    Every agent sends exactly one blame to each of its direct upstream
    producers, making the (blamer, blamed) pair set the reversed edge set.
    """
    incoming: dict[AgentId, list[str]] = {a: [] for a in graph.agent_ids()}
    result: dict[AgentId, LocalFeedback] = {}
    for agent in reversed(topological_order(graph)):
        inputs, output = transcripts.get(agent, ("", ""))
        transcript = f"input: {inputs}\noutput: {output}"
        fixes = judge.local_fixes(
            agent,
            prompts.get(agent, ""),
            list(global_feedback.items),
            list(incoming[agent]),
            transcript,
        )
        result[agent] = LocalFeedback(
            agent=agent, blames=tuple(incoming[agent]), fixes=tuple(fixes)
        )
        lead = fixes[0] if fixes else "upstream output did not support this step"
        for upstream in graph.parents(agent):
            incoming[upstream].append(f"[{agent}] {lead}")
    return result


def mutate_pool(
    mutator: LanguageJudge,
    selected: PromptCandidate,
    global_feedback: GlobalFeedback,
    local_feedback: LocalFeedback,
    n: int,
) -> PromptPool:
    """Rebuild a pool as the kept selection plus ``n`` tagged variants.

    The previously selected candidate survives at index 1; variants fill
    indices 2..n+1 and each records the single edit action that produced it.
    """
    if n < 1:
        raise ValueError("n must be >= 1 (pool capacity K = n + 1)")
    variants = mutator.mutate_prompt(
        selected.text, n, list(global_feedback.items), list(local_feedback.fixes)
    )
    if len(variants) != n:
        raise VariantCountMismatchError(f"requested {n} variants, got {len(variants)}")
    candidates = [
        PromptCandidate(agent=selected.agent, index=1, text=selected.text)
    ]
    for offset, (text, action) in enumerate(variants):
        candidates.append(
            PromptCandidate(
                agent=selected.agent,
                index=offset + 2,
                text=text,
                parent_index=1,
                action=MutationAction(action).value,
            )
        )
    return PromptPool(agent=selected.agent, candidates=tuple(candidates), capacity=n + 1)


def should_terminate(history: list[float], policy: TerminationPolicy) -> bool:
    """True once the last ``patience`` gains are all within tolerance.

    ``history`` is the validation score after each completed iteration;
    fewer than ``patience`` deltas means the window is not filled yet.
    """
    if not history:
        raise ValueError("history must be non-empty")
    deltas = [b - a for a, b in zip(history, history[1:])]
    if len(deltas) < policy.patience:
        return False
    return max(deltas[-policy.patience :]) <= policy.tolerance


# --------------------------------------------------------------------------
# Judges
# --------------------------------------------------------------------------


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def split_sentences(text: str) -> list[str]:
    return [s for s in _SENTENCE_SPLIT.split(text.strip()) if s]


def classify_edit(original: str, variant: str) -> MutationAction:
    """Infer which single edit action turned ``original`` into ``variant``."""
    orig = split_sentences(original)
    var = split_sentences(variant)
    if variant.strip().startswith(original.strip()) and len(variant) > len(original):
        return MutationAction.ADD_SENTENCE
    if len(var) < len(orig) and set(var) <= set(orig):
        return MutationAction.DELETE_SENTENCE
    if len(var) == len(orig) and sum(a != b for a, b in zip(orig, var)) == 1:
        return MutationAction.REPLACE_SENTENCE
    return MutationAction.REORGANIZE


def _ordered_dedup(items: list[str]) -> list[str]:
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


_REMEDY_CLAUSE = re.compile(r"agent \w+ prompt must mention '[^']+'")


class MockJudge:
    """Deterministic judge for offline runs: rule-based feedback and edits.

    Candidates are accepted at or above ``accept_threshold``; global
    feedback keeps the first three distinct error categories, pulling the
    actionable remedy clauses out of wrapped verifier messages when
    present; local fixes keep the items naming the agent; and mutation
    cycles through the four edit actions, injecting feedback sentences for
    additions and replacements.  Pure function of its inputs.
    """

    name = "mock"

    def __init__(self, accept_threshold: float = 0.5):
        self.accept_threshold = accept_threshold

    def classify_candidates(self, pool, scores):
        return [s.value >= self.accept_threshold for s in scores]

    def distill_global_feedback(self, errors):
        items: list[str] = []
        for err in errors:
            items.extend(_REMEDY_CLAUSE.findall(err) or [err])
        return _ordered_dedup(items)[:GLOBAL_FEEDBACK_LIMIT]

    def local_fixes(self, agent, prompt, global_items, blames, transcript):
        needle = f"agent {agent} "
        stripped = [re.sub(r"^\[[^\]]*\]\s*", "", item) for item in blames]
        mine = [item for item in _ordered_dedup(global_items + stripped) if needle in item]
        return mine[:GLOBAL_FEEDBACK_LIMIT]

    def mutate_prompt(self, selected, n, global_items, local_fixes):
        feed = _ordered_dedup(list(local_fixes) + list(global_items))
        variants: list[tuple[str, MutationAction]] = []
        seen = {selected}
        for idx in range(n):
            action = _ACTION_CYCLE[idx % len(_ACTION_CYCLE)]
            sentences = split_sentences(selected)
            note = feed[idx % len(feed)] if feed else f"Stay strictly on task (note {idx + 1})."
            if not note.endswith((".", "!", "?")):
                note += "."
            if action is MutationAction.ADD_SENTENCE:
                text = selected.rstrip() + " " + note
            elif action is MutationAction.REPLACE_SENTENCE:
                text = " ".join(sentences[:-1] + [note]) if len(sentences) > 1 else note
            elif action is MutationAction.REORGANIZE:
                text = " ".join(reversed(sentences))
            else:
                text = " ".join(sentences[:-1]) if len(sentences) > 1 else selected
            if not text.strip():
                text = selected
            while text in seen:
                text = text.rstrip() + f" (variant {idx + 1})"
            seen.add(text)
            variants.append((text, action))
        return variants

    def vary_prompt(self, base, n):
        suffixes = [
            "Be precise and concise.",
            "Double-check the output format.",
            "Keep the answer focused on the request.",
            "State results plainly without filler.",
            "Verify the result before answering.",
            "Prefer the simplest correct approach.",
        ]
        variants = []
        for idx in range(n):
            text = base.rstrip() + " " + suffixes[idx % len(suffixes)]
            if idx >= len(suffixes):
                text += f" (take {idx + 1})"
            variants.append(text)
        return variants

    def degrade_examples(self, good, mode, n):
        out = []
        for idx in range(n):
            example = good[idx % len(good)]
            if mode == "edge":
                upstream, downstream = example
                out.append([self._degrade_text(upstream, idx), downstream])
            else:
                out.append(self._degrade_text(example, idx))
        return out

    @staticmethod
    def _degrade_text(text: str, salt: int) -> str:
        sentences = split_sentences(text)
        if len(sentences) > 1:
            return " ".join(sentences[1:])
        return text.rstrip() + f" Ignore the instructions above (case {salt + 1})."


_NUMBERED = re.compile(r"^\s*\d+[.)]\s*(.+)$")


class LLMJudge:
    """Judge backed by a chat endpoint, rendering the payload templates.

    Candidate classification needs no model call: the exemplar routing
    conditions directly on the already-computed reward scores, so it uses
    the same threshold rule as the mock.  Replies that must be strict JSON
    arrays are parsed strictly; malformed replies are retried with the
    identical request and then surfaced, never silently patched.
    """

    name = "llm"

    def __init__(
        self,
        gateway: ChatGateway,
        model: str,
        temperature: float = 0.2,
        max_tokens: int = 2048,
        max_parse_retries: int = 3,
        accept_threshold: float = 0.5,
    ):
        self.gateway = gateway
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.max_parse_retries = max_parse_retries
        self.accept_threshold = accept_threshold

    # -- transport helpers ------------------------------------------------

    def _chat(self, payload: templates.RenderedPayload) -> str:
        request = ChatRequest(
            model=self.model,
            messages=[
                {"role": "system", "content": payload.system},
                {"role": "user", "content": payload.user},
            ],
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )
        try:
            return self.gateway.chat(request).content
        except GatewayError as exc:
            raise ScorerUnavailableError(f"judge endpoint failed: {exc}") from exc

    def _call_parsed(self, payload: templates.RenderedPayload, parse):
        last: Exception | None = None
        for attempt in range(1, self.max_parse_retries + 1):
            reply = self._chat(payload)
            try:
                return parse(reply)
            except MalformedReplyError as exc:
                last = exc
                log.warning(
                    "malformed judge reply (attempt %d/%d): %s",
                    attempt,
                    self.max_parse_retries,
                    exc,
                )
        raise MalformedReplyError(
            f"judge reply unusable after {self.max_parse_retries} attempts: {last}"
        )

    @staticmethod
    def _parse_json_array(reply: str, expect: int | None = None) -> list:
        try:
            data = json.loads(reply.strip())
        except json.JSONDecodeError as exc:
            raise MalformedReplyError(f"reply is not valid JSON: {exc}") from None
        if not isinstance(data, list):
            raise MalformedReplyError("reply is not a JSON array")
        if expect is not None and len(data) != expect:
            # Count mismatches are surfaced separately so callers can
            # distinguish them from unparseable replies.
            raise VariantCountMismatchError(f"expected {expect} entries, got {len(data)}")
        return data

    # -- judge interface ---------------------------------------------------

    def classify_candidates(self, pool, scores):
        return [s.value >= self.accept_threshold for s in scores]

    def distill_global_feedback(self, errors):
        payload = templates.global_feedback_payload([templates.clip_tail(e) for e in errors])

        def parse(reply: str) -> list[str]:
            items = []
            for line in reply.splitlines():
                match = _NUMBERED.match(line)
                if match:
                    items.append(match.group(1).strip())
            if not items:
                raise MalformedReplyError("no numbered fix suggestions in reply")
            return items[:GLOBAL_FEEDBACK_LIMIT]

        return self._call_parsed(payload, parse)

    def local_fixes(self, agent, prompt, global_items, blames, transcript):
        payload = templates.local_feedback_payload(global_items, blames, prompt)

        def parse(reply: str) -> list[str]:
            items = [
                line.strip().lstrip("•").strip()
                for line in reply.splitlines()
                if line.strip().startswith("•")
            ]
            if not items:
                raise MalformedReplyError("no • bullet lines in reply")
            return items

        return self._call_parsed(payload, parse)

    def mutate_prompt(self, selected, n, global_items, local_fixes):
        payload = templates.mutation_payload(n, selected, global_items, local_fixes)

        def parse(reply: str) -> list[tuple[str, MutationAction]]:
            data = self._parse_json_array(reply, expect=n)
            if not all(isinstance(x, str) and x.strip() for x in data):
                raise MalformedReplyError("variants must be non-empty strings")
            return [(text, classify_edit(selected, text)) for text in data]

        return self._call_parsed(payload, parse)

    def vary_prompt(self, base, n):
        payload = templates.variation_payload(n, base)

        def parse(reply: str) -> list[str]:
            data = self._parse_json_array(reply, expect=n)
            if not all(isinstance(x, str) and x.strip() for x in data):
                raise MalformedReplyError("variants must be non-empty strings")
            return list(data)

        return self._call_parsed(payload, parse)

    def degrade_examples(self, good, mode, n):
        payload = templates.neg_variation_payload(n, list(good), mode)

        def parse(reply: str) -> list:
            data = self._parse_json_array(reply, expect=n)
            if mode == "edge":
                ok = all(
                    isinstance(x, list) and len(x) == 2 and all(isinstance(s, str) for s in x)
                    for x in data
                )
            else:
                ok = all(isinstance(x, str) and x.strip() for x in data)
            if not ok:
                raise MalformedReplyError(f"bad {mode} degradation entries")
            return data

        return self._call_parsed(payload, parse)

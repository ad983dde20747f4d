"""Payload templates for the scoring and refinement model calls.

The template texts are fixed verbatim (including their original wording
quirks) because downstream parsing relies on the exact output contracts they
establish: score-per-line replies for reward calls, numbered bullets for
global feedback, ``•`` bullets for local feedback, and strict JSON arrays
for mutation/variation calls.  Editing them invalidates the golden-file
tests under ``tests/data/golden``.

Placeholders use single-brace tokens ({input}, {output}, {demo}, {i}, {j},
{n}) and are substituted literally; the templates are not ``str.format``
strings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

NODE_HEADER = """You are a *reward model* for evaluating the competence, clarity of candidate **role prompts**.
Based on the input, output and prefernece examples,
you should first rank the candidate prompts with the good and bad examples,
Then you will give each a distinct two-decimal quality score between (0.00, 1.00) based on the standard and alignment with the good examples.
You should be severely harsh and the score difference should be ranged from 0.4 - 0.8 and each differs more than 0.05 with each other.
Finally, return exactly a score each line corresponding to the **prompt’s original position**. (Not the sorted score)
Note that your output should contain only the numeric scores (e.g., 0.62). Nothing else."""

AGENT_REWARD_PREFIX = """You are an evaluation LLM. Given {input} and the agent’s response {output}, rate how well the response accomplishes the agent’s role on a scale 0–1 (higher is better).Use the preference demonstrations below as reference.Return ONLY the floating-point score.
=== Preference Demonstrations ===
{demo}
=== End Demonstrations ==="""

EDGE_HEADER = """You are a *reward model* for assessing **communication quality** from
an upstream agent to a downstream agent.  Consider information completeness, format,
clarity, and alignment with demonstrations.
Based on the input, output and prefernece examples,
you should first rank the candidate prompts with the good and bad examples,
Then you will give each a distinct two-decimal quality score between (0.00, 1.00) based on the standard and alignment with the good examples.
You should be severely harsh and the score difference should be ranged from 0.4 - 0.8 and each differs more than 0.05 with each other.
Finally, return exactly a score each line corresponding to the **prompt’s original position**. (Not the sorted score)
Note that your output should contain only the numeric scores (e.g., 0.62). Nothing else."""

EDGE_REWARD_PREFIX = """You are an evaluation LLM. Judge whether a message produced by agent {i} helps agent {j} perform its next step. Rate on a 0–1 scale.  Use the demonstrations for guidance. Return ONLY the floating-point score.
=== Preference Demonstrations ===
{demo}
=== End Demonstrations ==="""

GLOBAL_FEEDBACK_SYS = """You are an experienced prompt engineer and failure-analysis specialist.
Given multiple examples of runtime *error messages* produced by the given LLM-generated code,
identify the three most recurring but easy to solve root-cause patterns or missing constraints **in the prompts** that lead to the errors.  Produce a short **specific and actionable** list of fix suggestions an author can apply.
Note 1: Output each fix as a bullet starting with numbers. Do NOT quote full stack traces; mention key function names only if essential.
Note 2: You should focus on the pragmatism and cleaniness of code rather than if it's easy to read, for example, if the a module doesn't have package `List`, instead of asking to properly import the package, you should emphasize it should write code without any type hints or annotations."""

LOCAL_FEEDBACK_SYS = """You are a experienced prompt engineer and failure-analysis specialist. You are given:
1) The global overall feedback list that the system is currently facing.
2) Blame statements from downstream agents suggesting how the current module can be improved (may be empty).
3) The prompt this module is currently using.
Based on the roles of the current module, your task is to generate a *local feedback* list, focusing on give specific, actionable fix suggestions specifically for this current module to take to avoid downstream errors and satisfy the overall fix suggestions.  Each line starts with ‘•’."""

MUTATION_STRATEGY_SYS = """You are a experienced prompt engineer and failure-analysis specialist.
You are given the original <prompt> of a module plus two feedback blocks:
One overall fix feedback suggesting the errors the system currently experience and one optional local feedback suggesting what this current modules can focus on to improve to benefit the system.
Your task is to modify, improve, and explode the original prompt by outputing exactly {n} JSON strings as prompt variations with specific and detailed improvement.
Note:
1) You should focus on the pragmatism and cleaniness of the prompts (You shouldn't acutally write any code), so **always emphasize** the code should be executable, wrapped in one function, without any type hints or annotations, and named as solution if no other names are provided.
2) You are only allowed to make relatively small edits. You must choose exactly one action item in the following:  a) adding one sentence from the feedback.  b) replacing one senetence from the feedback to existing edits.  c) Re-organize, rewrite or clean the current prompt to make it logically consistent.  d) delete one redundant sentence in the current prompt.
3) You should ALWAYS respond with ONLY the VALID JSON array – You should return No headings, no prose such as </prompt>, no markdown fences such as ```, no trailing commas, no escape codes, or unclosed parenthesis.  Each string must be valid UTF-8. Escape all newlines as \\n. No raw newlines inside JSON strings.  Example (node, n = 2): ["Prompt variant 1","Prompt variant 2"]."""

VARIATION = """You are a prompt-engineering assistant.
The user will give you an original prompt TEMPLATE inside <prompt></prompt>.
Produce {n} diverse textual prompt variants (NOT solution, but the prompts) that keep the same intent but differ in wording, ordering, or tone.  Note that you should generate the prompt for the agent not generate solution.
Don't write code here and Return **only** a JSON array of strings.
Respond on a single line only. Do not emit any raw line breaks."""

NEG_VARIATION = """You are a prompt-mutation helper.
The user will give you a JSON object with:
good_examples : list[str]        # 3 GOOD prompt templates (node) *or* 3 GOOD upstream-downstream pairs
mode          : "node"|"edge"    # mutation type
n             : int              # number of BAD variants requested
Produce exactly {n} sligthly BAD variants:
• For "node": each string could omit some key instructions, introduce contradictions, or add irrelevant text that reduces agent quality.
• For "edge": each string code be a JSON array ["bad_upstream", "good_downstream"] where bad_upstream makes the pair incompatible.
• Note that your generation should be obviously worse than good examples, but not too absurd or entirely off the topic.
Remember, Return nothing except one valid JSON array.
- For mode = "node" → ["str", "str", …]
- For mode = "edge" → [["str","str"], ["str","str"], …]
You should ALWAYS respond with ONLY the VALID JSON array – You should return No headings, no prose such as </prompt>, no markdown fences such as ```, no trailing commas, no escape codes, or unclosed parenthesis.
Each string must be valid UTF-8. Escape all newlines as \\n. No raw newlines inside JSON strings."""

TRUNCATION_MARK = " …[truncated]"


def render(template: str, **values: str) -> str:
    """Substitute ``{name}`` tokens literally; unknown tokens are left alone."""
    out = template
    for name, value in values.items():
        out = out.replace("{" + name + "}", value)
    return out


def clip_tail(text: str, limit: int = 4000) -> str:
    """Cap payload fragments, cutting from the tail with an explicit marker."""
    if len(text) <= limit:
        return text
    return text[: max(0, limit - len(TRUNCATION_MARK))] + TRUNCATION_MARK


@dataclass(frozen=True)
class RenderedPayload:
    """A fully rendered request: system instructions plus user content."""

    system: str
    user: str

    def as_text(self) -> str:
        return self.system + "\n\n--- user ---\n\n" + self.user


def format_demonstrations(accepted: list[tuple[str, str]], rejected: list[tuple[str, str]]) -> str:
    """Render preference exemplars into the {demo} block of reward payloads."""

    def section(label: str, rows: list[tuple[str, str]]) -> list[str]:
        lines = [f"[{label}]"]
        if not rows:
            lines.append("(none)")
        for idx, (prompt, response) in enumerate(rows, start=1):
            lines.append(f"{idx}. prompt: {prompt}")
            lines.append(f"   response: {response}")
        return lines

    return "\n".join(section("accepted", accepted) + section("rejected", rejected))


def format_candidates(texts: list[str]) -> str:
    lines = ["=== Candidate Prompts ==="]
    lines += [f"{idx}. {text}" for idx, text in enumerate(texts, start=1)]
    lines.append("=== End Candidates ===")
    return "\n".join(lines)


def node_reward_payload(input_text: str, output_text: str, demo: str, candidates: list[str]) -> RenderedPayload:
    prefix = render(AGENT_REWARD_PREFIX, input=input_text, output=output_text, demo=demo)
    return RenderedPayload(system=NODE_HEADER, user=prefix + "\n\n" + format_candidates(candidates))


def edge_reward_payload(
    upstream: str,
    downstream: str,
    demo: str,
    upstream_output: str,
    candidates: list[str],
) -> RenderedPayload:
    prefix = render(EDGE_REWARD_PREFIX, i=upstream, j=downstream, demo=demo)
    body = (
        prefix
        + "\n\n=== Upstream Output ===\n"
        + upstream_output
        + "\n=== End Output ===\n\n"
        + format_candidates(candidates)
    )
    return RenderedPayload(system=EDGE_HEADER, user=body)


def global_feedback_payload(errors: list[str]) -> RenderedPayload:
    lines = ["=== Runtime Errors ==="]
    if errors:
        lines += [f"{idx}. {err}" for idx, err in enumerate(errors, start=1)]
    else:
        lines.append("(none)")
    lines.append("=== End Errors ===")
    return RenderedPayload(system=GLOBAL_FEEDBACK_SYS, user="\n".join(lines))


def local_feedback_payload(global_items: list[str], blames: list[str], prompt: str) -> RenderedPayload:
    lines = ["1) Global feedback:"]
    lines += [f"- {item}" for item in global_items]
    if not global_items:
        lines.append("(none)")
    lines.append("2) Blame statements:")
    if blames:
        lines += [f"- {b}" for b in blames]
    else:
        lines.append("(none)")
    lines.append("3) Current prompt:")
    lines.append("<prompt>" + prompt + "</prompt>")
    return RenderedPayload(system=LOCAL_FEEDBACK_SYS, user="\n".join(lines))


def mutation_payload(n: int, prompt: str, global_items: list[str], local_fixes: list[str]) -> RenderedPayload:
    system = render(MUTATION_STRATEGY_SYS, n=str(n))
    lines = ["<prompt>" + prompt + "</prompt>", "", "=== Overall Fix Feedback ==="]
    lines += [f"- {item}" for item in global_items] if global_items else ["(none)"]
    lines.append("=== Local Feedback ===")
    lines += [f"- {item}" for item in local_fixes] if local_fixes else ["(none)"]
    return RenderedPayload(system=system, user="\n".join(lines))


def variation_payload(n: int, prompt: str) -> RenderedPayload:
    system = render(VARIATION, n=str(n))
    return RenderedPayload(system=system, user="<prompt>" + prompt + "</prompt>")


def neg_variation_payload(n: int, good_examples: list, mode: str) -> RenderedPayload:
    system = render(NEG_VARIATION, n=str(n))
    body = json.dumps({"good_examples": good_examples, "mode": mode, "n": n})
    return RenderedPayload(system=system, user=body)

"""Run reports: trajectory records, frozen prompts, summary, and figures."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .orchestrator import OptimizationState


def report(state: OptimizationState, out_dir: str | Path) -> list[Path]:
    """Write the run artifacts into ``out_dir`` and return the file paths.

    Emits the per-iteration trajectory as line-delimited JSON, the frozen
    per-agent prompt set, a human-readable summary with a prompt-edit
    section for lineage-tagged variants, and a trajectory figure.
    """
    if not state.records:
        raise ValueError("report needs at least one completed iteration")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    trajectory = out / "trajectory.jsonl"
    with open(trajectory, "w", encoding="utf-8") as fh:
        for record in state.records:
            fh.write(json.dumps(record.to_document(), sort_keys=True) + "\n")
    written.append(trajectory)

    assert state.best is not None
    prompts_path = out / "final_prompts.json"
    prompts_path.write_text(
        json.dumps(dict(sorted(state.best.prompts.items())), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    written.append(prompts_path)

    summary = out / "summary.md"
    summary.write_text(_summary_text(state), encoding="utf-8")
    written.append(summary)

    figure = out / "trajectory.png"
    _trajectory_figure(state, figure)
    written.append(figure)
    return written


def _summary_text(state: OptimizationState) -> str:
    lines = ["# Optimization summary", ""]
    lines.append(f"- agents: {', '.join(state.graph.agent_ids())}")
    lines.append(f"- pool size K: {state.k}")
    lines.append(f"- iterations completed: {state.iteration}")
    lines.append(f"- frozen: {state.frozen}")
    best = state.best
    if best is not None:
        lines.append(
            f"- best: iteration {best.iteration}, pass-rate {best.pass_rate:.3f}, "
            f"joint score {best.joint_score:.3g}"
        )
    lines += ["", "## Trajectory", ""]
    lines.append("| t | S(t) | best | joint score | messages | chosen |")
    lines.append("|---|------|------|-------------|----------|--------|")
    for r in state.records:
        chosen = ", ".join(f"{a}#{k}" for a, k in sorted(r.choices.items()))
        lines.append(
            f"| {r.iteration} | {r.validation_score:.3f} | {r.best_score:.3f} "
            f"| {r.joint_score:.3g} | {r.message_count} | {chosen} |"
        )

    if best is not None:
        lines += ["", "## Frozen prompts", ""]
        for agent in sorted(best.prompts):
            lines.append(f"### {agent}")
            lines.append("")
            lines.append(best.prompts[agent])
            lines.append("")

    lines += ["## Prompt edits (final pools)", ""]
    for agent in state.graph.agent_ids():
        pool = state.pools[agent]
        lines.append(f"### {agent}")
        lines.append("")
        base = pool.candidates[0]
        lines.append(f"Base: {base.text}")
        lines.append("")
        for cand in pool.candidates[1:]:
            if cand.action:
                lines.append(f"{_action_label(cand.action)}: {cand.text}")
                lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def _action_label(action: str) -> str:
    labels = {
        "AddSentence": "Adding",
        "ReplaceSentence": "Replacement",
        "Reorganize": "Reorganized",
        "DeleteSentence": "Deletion",
    }
    return labels.get(action, action)


def _trajectory_figure(state: OptimizationState, path: Path) -> None:
    iterations = [r.iteration for r in state.records]
    scores = [r.validation_score for r in state.records]
    best = [r.best_score for r in state.records]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(iterations, scores, marker="o", label="validation score S(t)")
    ax.plot(iterations, best, marker="s", linestyle="--", label="best so far")
    ax.set_xlabel("iteration")
    ax.set_ylabel("pass rate")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

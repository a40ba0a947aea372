"""The bounded revision loop: draft once, then up to N rounds of
evaluation, targeted refinement, and redundancy checking.

A round that reports no failing sentences and no missing facts ends the
loop; refinement and the redundancy pass only run on dirty rounds, so a
full run costs at most 1 + N * (evaluators + 2) model calls.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from . import agents
from .agents import EvaluationReport, PromptLibrary, PromptTemplate, report_to_dict
from .core import (
    CANONICAL_DIMENSIONS,
    Dialogue,
    Dimension,
    RefineLoopError,
    Summary,
    serialize_summary,
    split_sentences,
    summary_from_texts,
    validate_attributions,
)
from .gateway import Backend, Gateway, RequestDefaults, RetryPolicy, TraceLog


class DraftFailed(RefineLoopError):
    pass


ALL_DIMENSIONS = frozenset(Dimension)


@dataclass(frozen=True)
class PipelineConfig:
    n_rounds: int = 2  # default revision budget
    backend_id: str = "default"
    prompt_versions: Mapping[str, str] = field(default_factory=dict)
    temperatures: Mapping[str, float] = field(default_factory=dict)
    evaluator_mask: frozenset[Dimension] = ALL_DIMENSIONS

    def __post_init__(self) -> None:
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        object.__setattr__(self, "prompt_versions", dict(self.prompt_versions))
        object.__setattr__(self, "temperatures", dict(self.temperatures))
        object.__setattr__(self, "evaluator_mask", frozenset(self.evaluator_mask))
        if not self.evaluator_mask:
            raise ValueError("evaluator_mask must name at least one dimension")


@dataclass(frozen=True)
class RoundRecord:
    report: EvaluationReport
    refined: Summary | None  # None when the round was already clean
    deduped: Summary | None


@dataclass(frozen=True)
class PipelineResult:
    final_summary: Summary
    rounds_executed: int
    per_round: tuple[RoundRecord, ...]
    terminated_early: bool
    trace: TraceLog


def _template(prompts: PromptLibrary, cfg: PipelineConfig, role_id: str) -> PromptTemplate:
    return prompts.get(role_id, cfg.prompt_versions.get(role_id))


def run_pipeline(
    dialogue: Dialogue,
    cfg: PipelineConfig,
    backends: Mapping[str, Backend],
    prompts: PromptLibrary,
    policy: RetryPolicy | None = None,
    trace: TraceLog | None = None,
    defaults: RequestDefaults | None = None,
) -> PipelineResult:
    """Run the full agentic loop for one dialogue."""
    trace = trace if trace is not None else TraceLog()
    gateway = Gateway(
        backend=backends[cfg.backend_id],
        policy=policy or RetryPolicy(),
        trace=trace,
        defaults=defaults or RequestDefaults(),
    )
    enabled = [dim for dim in CANONICAL_DIMENSIONS if dim in cfg.evaluator_mask]

    try:
        current = agents.draft(
            dialogue,
            _template(prompts, cfg, "draft"),
            gateway,
            temperature=cfg.temperatures.get("draft"),
        )
    except RefineLoopError as exc:
        raise DraftFailed(f"drafting failed for dialogue {dialogue.id!r}: {exc}") from exc
    validate_attributions(current, dialogue)

    per_round: list[RoundRecord] = []
    rounds_executed = 0
    terminated_early = False
    for round_index in range(1, cfg.n_rounds + 1):
        per_dimension = {
            dim: agents.evaluate_dimension(
                dialogue,
                current,
                dim,
                _template(prompts, cfg, agents.EVALUATOR_ROLE[dim]),
                gateway,
                round_index=round_index,
                temperature=cfg.temperatures.get(agents.EVALUATOR_ROLE[dim]),
            )
            for dim in enabled
        }
        report = agents.merge_feedback(round_index, per_dimension)
        rounds_executed = round_index
        if report.is_clean:
            per_round.append(RoundRecord(report=report, refined=None, deduped=None))
            terminated_early = True
            break
        refined = agents.refine(
            dialogue,
            current,
            report,
            _template(prompts, cfg, "refine"),
            gateway,
            round_index=round_index,
            temperature=cfg.temperatures.get("refine"),
        )
        validate_attributions(refined, dialogue)
        deduped = agents.check_redundancy(
            refined,
            _template(prompts, cfg, "redundancy"),
            gateway,
            round_index=round_index,
            temperature=cfg.temperatures.get("redundancy"),
        )
        validate_attributions(deduped, dialogue)
        per_round.append(RoundRecord(report=report, refined=refined, deduped=deduped))
        current = deduped

    return PipelineResult(
        final_summary=current,
        rounds_executed=rounds_executed,
        per_round=tuple(per_round),
        terminated_early=terminated_early,
        trace=trace,
    )


def run_monolithic(
    dialogue: Dialogue,
    template: PromptTemplate,
    gateway: Gateway,
    temperature: float | None = None,
) -> Summary:
    """Single-call baseline: one prompt, response split into a summary."""
    system, user = agents.render_prompt(
        template, {"dialogue": agents.format_dialogue(dialogue)}
    )
    response = gateway.chat(
        system, user, agent_role="monolithic", temperature=temperature
    )
    texts = split_sentences(response.content)
    if not texts:
        raise agents.EmptyDraft(f"monolithic summary for {dialogue.id!r} came back empty")
    return summary_from_texts(dialogue.id, texts)


def write_result_bundle(result: PipelineResult, out_dir: str | Path) -> Path:
    """Persist one pipeline run as a directory of documents."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "final_summary.json").write_text(
        serialize_summary(result.final_summary), encoding="utf-8"
    )
    rounds_dir = out / "rounds"
    rounds_dir.mkdir(exist_ok=True)
    for record in result.per_round:
        r = record.report.round
        (rounds_dir / f"round_{r}_report.json").write_text(
            json.dumps(report_to_dict(record.report), indent=2) + "\n", encoding="utf-8"
        )
        if record.refined is not None:
            (rounds_dir / f"round_{r}_refined.json").write_text(
                serialize_summary(record.refined), encoding="utf-8"
            )
        if record.deduped is not None:
            (rounds_dir / f"round_{r}_deduped.json").write_text(
                serialize_summary(record.deduped), encoding="utf-8"
            )
    with open(out / "trace.jsonl", "w", encoding="utf-8") as handle:
        for entry in result.trace.entries:
            handle.write(json.dumps(entry, ensure_ascii=False) + "\n")
    (out / "run.json").write_text(
        json.dumps(
            {
                "rounds_executed": result.rounds_executed,
                "terminated_early": result.terminated_early,
                "llm_calls": len(result.trace),
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return out

"""LLM-as-judge scoring: 1-5 per dimension with k-run aggregation, and
pairwise comparison hardened against position bias by order swapping."""

from __future__ import annotations

from dataclasses import dataclass
from statistics import fmean, stdev
from typing import Mapping

from .agents import PromptTemplate, format_dialogue, format_summary, render_prompt
from .core import CANONICAL_DIMENSIONS, Dialogue, Dimension, RefineLoopError, Summary
from .gateway import ChatMessage, FieldSpec, Gateway, extract_structured


class ScoreOutOfRange(RefineLoopError):
    pass


VALID_SCORES = frozenset({1, 2, 3, 4, 5})

_SCORE_SCHEMA = tuple(
    FieldSpec(dim.value, "integer") for dim in CANONICAL_DIMENSIONS
) + tuple(
    FieldSpec(f"{dim.value}_explanation", "text", required=False)
    for dim in CANONICAL_DIMENSIONS
)

_RETRY_NOTE = (
    "Each score must be an integer from 1 to 5. Reply again with the JSON object only."
)


@dataclass(frozen=True)
class DimensionStat:
    mean: float
    std: float
    runs: tuple[int, ...]


@dataclass(frozen=True)
class DimensionScores:
    per_dimension: Mapping[Dimension, DimensionStat]
    explanations: Mapping[Dimension, tuple[str, ...]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_dimension", dict(self.per_dimension))
        object.__setattr__(self, "explanations", dict(self.explanations))

    def means(self) -> dict[Dimension, float]:
        return {dim: stat.mean for dim, stat in self.per_dimension.items()}


def _one_judge_run(
    dialogue: Dialogue,
    summary: Summary,
    template: PromptTemplate,
    gateway: Gateway,
    seed: int | None,
) -> tuple[dict[Dimension, int], dict[Dimension, str]]:
    system, user = render_prompt(
        template,
        {"dialogue": format_dialogue(dialogue), "summary": format_summary(summary)},
    )
    response = gateway.chat(system, user, agent_role="judge_score", seed=seed)
    record = extract_structured(response, _SCORE_SCHEMA)
    if any(record[dim.value] not in VALID_SCORES for dim in CANONICAL_DIMENSIONS):
        # One corrective re-ask, then give up.
        retry = gateway.chat(
            system,
            user,
            agent_role="judge_score",
            seed=seed,
            extra_messages=(
                ChatMessage("assistant", response.content),
                ChatMessage("user", _RETRY_NOTE),
            ),
        )
        record = extract_structured(retry, _SCORE_SCHEMA)
        bad = {d.value: record[d.value] for d in CANONICAL_DIMENSIONS if record[d.value] not in VALID_SCORES}
        if bad:
            raise ScoreOutOfRange(f"judge returned out-of-range scores {bad} after re-ask")
    scores = {dim: record[dim.value] for dim in CANONICAL_DIMENSIONS}
    explanations = {
        dim: record.get(f"{dim.value}_explanation", "") for dim in CANONICAL_DIMENSIONS
    }
    return scores, explanations


def judge_summary(
    dialogue: Dialogue,
    summary: Summary,
    template: PromptTemplate,
    gateway: Gateway,
    k: int = 3,
) -> DimensionScores:
    """Score a summary k times and report per-dimension mean and sample std."""
    if template.role_id != "judge_score":
        raise ValueError(f"expected a judge_score template, got {template.role_id!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    base_seed = gateway.defaults.seed
    runs: dict[Dimension, list[int]] = {dim: [] for dim in CANONICAL_DIMENSIONS}
    notes: dict[Dimension, list[str]] = {dim: [] for dim in CANONICAL_DIMENSIONS}
    for run in range(k):
        seed = base_seed + run if base_seed is not None else None
        scores, explanations = _one_judge_run(dialogue, summary, template, gateway, seed)
        for dim in CANONICAL_DIMENSIONS:
            runs[dim].append(scores[dim])
            if explanations[dim]:
                notes[dim].append(explanations[dim])
    per_dimension = {
        dim: DimensionStat(
            mean=fmean(values),
            std=stdev(values) if len(values) > 1 else 0.0,
            runs=tuple(values),
        )
        for dim, values in runs.items()
    }
    return DimensionScores(
        per_dimension=per_dimension,
        explanations={dim: tuple(texts) for dim, texts in notes.items()},
    )


@dataclass(frozen=True)
class JudgeVerdict:
    winner: str  # A | B | tie
    first_order: str  # raw pick with (a, b) presentation
    second_order: str  # raw pick with (b, a) presentation

    def __post_init__(self) -> None:
        if self.winner not in ("A", "B", "tie"):
            raise ValueError(f"winner must be A, B, or tie, got {self.winner!r}")


_COMPARE_SCHEMA = (FieldSpec("winner", "text"),)


def _one_comparison(
    dialogue: Dialogue,
    first: Summary,
    second: Summary,
    template: PromptTemplate,
    gateway: Gateway,
) -> str:
    system, user = render_prompt(
        template,
        {
            "dialogue": format_dialogue(dialogue),
            "summary_a": format_summary(first),
            "summary_b": format_summary(second),
        },
    )
    response = gateway.chat(system, user, agent_role="judge_compare")
    raw = extract_structured(response, _COMPARE_SCHEMA)["winner"].strip().lower()
    if raw in ("a", "b"):
        return raw.upper()
    return "tie"


def judge_compare(
    dialogue: Dialogue,
    a: Summary,
    b: Summary,
    template: PromptTemplate,
    gateway: Gateway,
) -> JudgeVerdict:
    """Judge twice with candidate order swapped; disagreement becomes a tie."""
    if template.role_id != "judge_compare":
        raise ValueError(f"expected a judge_compare template, got {template.role_id!r}")
    first_order = _one_comparison(dialogue, a, b, template, gateway)
    second_raw = _one_comparison(dialogue, b, a, template, gateway)
    # In the swapped presentation, "A" points at candidate b.
    swap = {"A": "B", "B": "A", "tie": "tie"}
    second_order = swap[second_raw]
    winner = first_order if first_order == second_order else "tie"
    return JudgeVerdict(winner=winner, first_order=first_order, second_order=second_raw)

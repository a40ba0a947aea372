"""The five agent roles: drafting, per-dimension evaluation, refinement,
and redundancy checking.

Each agent is a prompt template plus typed parsing of the model's reply.
Evaluator replies are JSON lists of ``{"sentence_index", "label",
"explanation"}`` records; the refinement agent replies with targeted edits
and insertions, and is never trusted to rewrite passing sentences (a
post-hoc diff restores them if it tries).
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .core import (
    CANONICAL_DIMENSIONS,
    Dialogue,
    Dimension,
    Origin,
    RefineLoopError,
    Summary,
    SummarySentence,
    split_sentences,
)
from .gateway import Gateway, WrongKind, FieldSpec, extract_structured, parse_payload

logger = logging.getLogger(__name__)

ROLE_IDS = (
    "draft",
    "eval_accuracy",
    "eval_completeness",
    "eval_readability",
    "refine",
    "redundancy",
    "judge_score",
    "judge_compare",
)

EVALUATOR_ROLE = {
    Dimension.ACCURACY: "eval_accuracy",
    Dimension.COMPLETENESS: "eval_completeness",
    Dimension.READABILITY: "eval_readability",
}


class UnboundPlaceholder(RefineLoopError):
    pass


class TemplateNotFound(RefineLoopError):
    pass


class EmptyDraft(RefineLoopError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    role_id: str
    system_text: str
    user_text: str
    icl_examples: tuple[tuple[str, str], ...] = ()
    version: str = "v1"

    def __post_init__(self) -> None:
        if self.role_id not in ROLE_IDS:
            raise ValueError(f"unknown role_id {self.role_id!r}")
        object.__setattr__(
            self, "icl_examples", tuple((str(a), str(b)) for a, b in self.icl_examples)
        )


_PLACEHOLDER_RE = re.compile(r"\{([a-zA-Z_][a-zA-Z0-9_]*)\}")


def _substitute(text: str, bindings: Mapping[str, str]) -> str:
    # {{ and }} escape literal braces, e.g. for JSON examples inside prompts.
    guarded = text.replace("{{", "\x00").replace("}}", "\x01")

    def repl(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise UnboundPlaceholder(f"placeholder {{{name}}} has no binding")
        return bindings[name]

    return _PLACEHOLDER_RE.sub(repl, guarded).replace("\x00", "{").replace("\x01", "}")


def render_prompt(
    template: PromptTemplate, bindings: Mapping[str, str]
) -> tuple[str, str]:
    """Substitute placeholders; in-context examples precede the task input."""
    system = _substitute(template.system_text, bindings)
    user = _substitute(template.user_text, bindings)
    if template.icl_examples:
        blocks = [
            f"Example input:\n{inp}\nExample output:\n{out}"
            for inp, out in template.icl_examples
        ]
        user = "\n\n".join(blocks) + "\n\n" + user
    return system, user


def template_from_dict(payload: Mapping) -> PromptTemplate:
    return PromptTemplate(
        role_id=payload["role_id"],
        system_text=payload["system_text"],
        user_text=payload["user_text"],
        icl_examples=tuple((e["input"], e["output"]) for e in payload.get("icl_examples", ())),
        version=payload.get("version", "v1"),
    )


def template_to_dict(template: PromptTemplate) -> dict:
    return {
        "role_id": template.role_id,
        "version": template.version,
        "system_text": template.system_text,
        "user_text": template.user_text,
        "icl_examples": [{"input": a, "output": b} for a, b in template.icl_examples],
    }


class PromptLibrary:
    """Prompt templates loaded from a directory of JSON files."""

    def __init__(self, templates: Sequence[PromptTemplate]):
        self._templates: dict[tuple[str, str], PromptTemplate] = {}
        for t in templates:
            self._templates[(t.role_id, t.version)] = t

    @classmethod
    def from_dir(cls, path: str | Path) -> "PromptLibrary":
        templates = []
        for file in sorted(Path(path).glob("*.json")):
            with open(file, encoding="utf-8") as handle:
                templates.append(template_from_dict(json.load(handle)))
        return cls(templates)

    @classmethod
    def default(cls) -> "PromptLibrary":
        root = resources.files("refine_loop").joinpath("prompts")
        templates = []
        for entry in sorted(root.iterdir(), key=lambda e: e.name):
            if entry.name.endswith(".json"):
                templates.append(template_from_dict(json.loads(entry.read_text("utf-8"))))
        return cls(templates)

    def get(self, role_id: str, version: str | None = None) -> PromptTemplate:
        if version is not None:
            try:
                return self._templates[(role_id, version)]
            except KeyError:
                raise TemplateNotFound(f"no template for {role_id!r} version {version!r}")
        candidates = [t for (rid, _), t in self._templates.items() if rid == role_id]
        if not candidates:
            raise TemplateNotFound(f"no template for role {role_id!r}")
        return max(candidates, key=lambda t: t.version)

    def roles(self) -> frozenset[str]:
        return frozenset(rid for rid, _ in self._templates)


# --- feedback types -----------------------------------------------------------

@dataclass(frozen=True)
class SentenceFeedback:
    dimension: Dimension
    sentence_index: int | None  # None marks a missing-fact item
    label: str  # pass | fail
    explanation: str = ""

    def __post_init__(self) -> None:
        if self.label not in ("pass", "fail"):
            raise ValueError(f"label must be pass or fail, got {self.label!r}")
        if self.sentence_index is None and (
            self.dimension is not Dimension.COMPLETENESS or self.label != "fail"
        ):
            raise ValueError("missing-fact items belong to Completeness failures only")

    @property
    def is_missing_fact(self) -> bool:
        return self.sentence_index is None


@dataclass(frozen=True)
class EvaluationReport:
    round: int
    feedback: tuple[SentenceFeedback, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "feedback", tuple(self.feedback))
        seen = set()
        for item in self.feedback:
            if item.sentence_index is None:
                continue
            key = (item.dimension, item.sentence_index)
            if key in seen:
                raise ValueError(f"duplicate feedback for {key}")
            seen.add(key)

    def fail_items(self) -> tuple[SentenceFeedback, ...]:
        return tuple(
            f for f in self.feedback if f.label == "fail" and f.sentence_index is not None
        )

    def missing_items(self) -> tuple[SentenceFeedback, ...]:
        return tuple(f for f in self.feedback if f.sentence_index is None)

    @property
    def is_clean(self) -> bool:
        return not self.fail_items() and not self.missing_items()

    def items_for(self, dimension: Dimension) -> tuple[SentenceFeedback, ...]:
        return tuple(f for f in self.feedback if f.dimension is dimension)


def merge_feedback(round_index: int, per_dimension: Mapping[Dimension, Sequence[SentenceFeedback]]) -> EvaluationReport:
    """Merge evaluator outputs in canonical dimension order (deterministic)."""
    merged: list[SentenceFeedback] = []
    for dim in CANONICAL_DIMENSIONS:
        items = per_dimension.get(dim, ())
        merged.extend(
            sorted(items, key=lambda f: (f.sentence_index is None, f.sentence_index or 0))
        )
    return EvaluationReport(round=round_index, feedback=tuple(merged))


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "round": report.round,
        "feedback": [
            {
                "dimension": f.dimension.value,
                "sentence_index": "MISSING" if f.sentence_index is None else f.sentence_index,
                "label": f.label,
                "explanation": f.explanation,
            }
            for f in report.feedback
        ],
    }


# --- prompt-facing formatting ---------------------------------------------------

def format_dialogue(dialogue: Dialogue) -> str:
    return "\n".join(f"{t.index}. {t.speaker}: {t.text}" for t in dialogue.turns)


def format_summary(summary: Summary) -> str:
    return "\n".join(f"{s.index}. {s.text}" for s in summary.sentences)


def format_feedback(report: EvaluationReport) -> str:
    """Failures and missing facts, grouped in canonical dimension order."""
    lines: list[str] = []
    for dim in CANONICAL_DIMENSIONS:
        fails = [f for f in report.items_for(dim) if f.label == "fail" and not f.is_missing_fact]
        missing = [f for f in report.items_for(dim) if f.is_missing_fact]
        if not fails and not missing:
            continue
        lines.append(f"{dim.value.capitalize()} issues:")
        for item in fails:
            lines.append(f"- sentence {item.sentence_index}: {item.explanation}")
        for item in missing:
            lines.append(f"- missing fact: {item.explanation}")
    return "\n".join(lines) if lines else "(no issues)"


# --- agent operations ------------------------------------------------------------

def _require_role(template: PromptTemplate, role_id: str) -> None:
    if template.role_id != role_id:
        raise ValueError(f"expected a {role_id!r} template, got {template.role_id!r}")


def draft(
    dialogue: Dialogue,
    template: PromptTemplate,
    gateway: Gateway,
    temperature: float | None = None,
) -> Summary:
    """Generate the candidate summary (revision round 0)."""
    _require_role(template, "draft")
    system, user = render_prompt(template, {"dialogue": format_dialogue(dialogue)})
    response = gateway.chat(
        system, user, agent_role="draft", round_index=0, temperature=temperature
    )
    texts = split_sentences(response.content)
    if not texts:
        raise EmptyDraft(f"draft for dialogue {dialogue.id!r} came back empty")
    sentences = tuple(
        SummarySentence(index=i, text=t, origin=Origin.DRAFT) for i, t in enumerate(texts)
    )
    return Summary(dialogue_id=dialogue.id, sentences=sentences, revision_round=0)


def _parse_feedback_items(payload) -> list[dict]:
    if isinstance(payload, dict) and isinstance(payload.get("feedback"), list):
        items = payload["feedback"]
    elif isinstance(payload, list):
        items = payload
    else:
        raise WrongKind("evaluator payload must be a list of feedback records")
    for item in items:
        if not isinstance(item, dict):
            raise WrongKind(f"feedback record must be an object, got {item!r}")
    return items


def evaluate_dimension(
    dialogue: Dialogue,
    summary: Summary,
    dimension: Dimension,
    template: PromptTemplate,
    gateway: Gateway,
    round_index: int | None = None,
    temperature: float | None = None,
) -> list[SentenceFeedback]:
    """Run one evaluator; returns exactly one pass/fail item per sentence,
    plus missing-fact items for the completeness dimension."""
    _require_role(template, EVALUATOR_ROLE[dimension])
    system, user = render_prompt(
        template,
        {"dialogue": format_dialogue(dialogue), "summary": format_summary(summary)},
    )
    response = gateway.chat(
        system,
        user,
        agent_role=EVALUATOR_ROLE[dimension],
        round_index=round_index,
        temperature=temperature,
    )
    items = _parse_feedback_items(parse_payload(response.content))

    by_index: dict[int, SentenceFeedback] = {}
    missing: list[SentenceFeedback] = []
    n = len(summary.sentences)
    for item in items:
        raw_index = item.get("sentence_index")
        label = item.get("label")
        explanation = str(item.get("explanation", "") or "")
        if label not in ("pass", "fail"):
            raise WrongKind(f"feedback label must be pass or fail, got {label!r}")
        if raw_index == "MISSING" or raw_index is None:
            if dimension is not Dimension.COMPLETENESS or label != "fail":
                logger.warning("dropping stray missing-fact item from %s", dimension.value)
                continue
            missing.append(
                SentenceFeedback(
                    dimension=dimension, sentence_index=None, label="fail",
                    explanation=explanation or "unspecified missing fact",
                )
            )
            continue
        if isinstance(raw_index, bool) or not isinstance(raw_index, int):
            raise WrongKind(f"sentence_index must be an integer or MISSING, got {raw_index!r}")
        if not 0 <= raw_index < n:
            logger.warning(
                "dropping feedback for nonexistent sentence %d (summary has %d)", raw_index, n
            )
            continue
        if raw_index in by_index:
            continue  # first item wins
        if label == "fail" and not explanation:
            explanation = "unspecified issue"
        by_index[raw_index] = SentenceFeedback(
            dimension=dimension, sentence_index=raw_index, label=label, explanation=explanation
        )
    # Sentences the evaluator did not mention count as passing.
    for i in range(n):
        if i not in by_index:
            by_index[i] = SentenceFeedback(dimension=dimension, sentence_index=i, label="pass")
    return [by_index[i] for i in range(n)] + missing


_REFINE_SCHEMA = (FieldSpec("edits", "list", required=False), FieldSpec("insertions", "list", required=False))


def refine(
    dialogue: Dialogue,
    summary: Summary,
    report: EvaluationReport,
    template: PromptTemplate,
    gateway: Gateway,
    round_index: int | None = None,
    temperature: float | None = None,
) -> Summary:
    """Apply targeted sentence-level edits guided by the evaluation report.

    Only sentences with at least one failing label may change; edits aimed at
    passing sentences are contract violations, logged and discarded.  Each
    missing-fact item admits at most one inserted sentence.  Deletions take
    precedence over rewrites when feedback conflicts on one sentence.
    """
    _require_role(template, "refine")
    system, user = render_prompt(
        template,
        {
            "dialogue": format_dialogue(dialogue),
            "summary": format_summary(summary),
            "feedback": format_feedback(report),
        },
    )
    response = gateway.chat(
        system, user, agent_role="refine", round_index=round_index, temperature=temperature
    )
    record = extract_structured(response, _REFINE_SCHEMA)
    edits = record.get("edits", [])
    insertions = record.get("insertions", [])

    editable = {f.sentence_index for f in report.fail_items()}
    deletes: set[int] = set()
    replacements: dict[int, str] = {}
    for edit in edits:
        if not isinstance(edit, dict):
            logger.warning("dropping malformed edit %r", edit)
            continue
        index = edit.get("sentence_index")
        action = edit.get("action")
        if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < len(summary.sentences):
            logger.warning("dropping edit for nonexistent sentence %r", index)
            continue
        if index not in editable:
            logger.warning(
                "contract violation: refinement tried to edit passing sentence %d; restored",
                index,
            )
            continue
        if action == "delete":
            deletes.add(index)
        elif action == "replace" and isinstance(edit.get("text"), str) and edit["text"].strip():
            replacements.setdefault(index, edit["text"].strip())
        else:
            logger.warning("dropping malformed edit %r", edit)

    new_sentences: list[SummarySentence] = []
    for sentence in summary.sentences:
        if sentence.index in deletes:
            continue
        if sentence.index in replacements:
            new_sentences.append(
                SummarySentence(
                    index=0,  # reindexed below
                    text=replacements[sentence.index],
                    attributions=(),
                    origin=Origin.REFINED,
                )
            )
        else:
            new_sentences.append(sentence)

    max_insertions = len(report.missing_items())
    for text in insertions[:max_insertions]:
        if isinstance(text, str) and text.strip():
            new_sentences.append(
                SummarySentence(index=0, text=text.strip(), origin=Origin.INSERTED)
            )

    reindexed = tuple(
        SummarySentence(
            index=i, text=s.text, attributions=s.attributions, origin=s.origin
        )
        for i, s in enumerate(new_sentences)
    )
    return Summary(
        dialogue_id=summary.dialogue_id,
        sentences=reindexed,
        revision_round=summary.revision_round + 1,
    )


_REDUNDANCY_SCHEMA = (FieldSpec("actions", "list", required=False),)


def check_redundancy(
    summary: Summary,
    template: PromptTemplate,
    gateway: Gateway,
    round_index: int | None = None,
    temperature: float | None = None,
) -> Summary:
    """Summary-level pass removing inter- and intra-sentence repetition.

    The agent may delete or reword sentences, never add them; unrecognized
    actions are dropped.  The output keeps the input's revision round.
    """
    _require_role(template, "redundancy")
    system, user = render_prompt(template, {"summary": format_summary(summary)})
    response = gateway.chat(
        system, user, agent_role="redundancy", round_index=round_index, temperature=temperature
    )
    record = extract_structured(response, _REDUNDANCY_SCHEMA)
    actions = record.get("actions", [])

    deletes: set[int] = set()
    rewords: dict[int, str] = {}
    for action in actions:
        if not isinstance(action, dict):
            logger.warning("dropping malformed redundancy action %r", action)
            continue
        index = action.get("sentence_index")
        kind = action.get("action")
        if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < len(summary.sentences):
            logger.warning("dropping redundancy action for nonexistent sentence %r", index)
            continue
        if kind == "delete":
            deletes.add(index)
        elif kind == "reword" and isinstance(action.get("text"), str) and action["text"].strip():
            rewords.setdefault(index, action["text"].strip())
        elif kind != "keep":
            logger.warning("dropping malformed redundancy action %r", action)

    new_sentences: list[SummarySentence] = []
    for sentence in summary.sentences:
        if sentence.index in deletes:
            continue
        if sentence.index in rewords:
            new_sentences.append(
                SummarySentence(
                    index=0,
                    text=rewords[sentence.index],
                    attributions=sentence.attributions,
                    origin=Origin.REFINED,
                )
            )
        else:
            new_sentences.append(sentence)
    reindexed = tuple(
        SummarySentence(index=i, text=s.text, attributions=s.attributions, origin=s.origin)
        for i, s in enumerate(new_sentences)
    )
    return Summary(
        dialogue_id=summary.dialogue_id,
        sentences=reindexed,
        revision_round=summary.revision_round,
    )

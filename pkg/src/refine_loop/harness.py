"""Experiment protocols: synthetic error injection and judge meta-evaluation,
evaluator calibration, evaluator ablations, transcript noise simulation,
backend comparison runs, and blinded A/B pair construction.

Everything that draws randomness takes an explicit seed and is referentially
transparent in (inputs, seed), so ground truth stays machine-checkable.
"""

from __future__ import annotations

import hashlib
import math
import random
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from statistics import fmean, stdev
from typing import Callable, Mapping, Sequence

from . import agents, metrics
from .agents import PromptLibrary, PromptTemplate
from .autoeval import DimensionScores
from .core import (
    CANONICAL_DIMENSIONS,
    Dialogue,
    Dimension,
    RefineLoopError,
    Summary,
    SummarySentence,
    Turn,
)
from .gateway import Backend, Gateway, RequestDefaults, RetryPolicy, TraceLog
from .pipeline import PipelineConfig, run_pipeline


class RuleInapplicable(RefineLoopError):
    pass


class InsufficientGolds(RefineLoopError):
    pass


class TargetUnreachable(RefineLoopError):
    pass


class KeyMismatch(RefineLoopError):
    pass


class MissingSentence(RefineLoopError):
    pass


def derive_seed(seed: int, key: str) -> int:
    """Stable per-task stream seed from a master seed and a task key."""
    digest = hashlib.sha256(f"{seed}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


# --- synthetic error injection --------------------------------------------------

class ErrorKind(Enum):
    ENTITY_SWAP = "entity_swap"
    NEGATION_FLIP = "negation_flip"
    FABRICATED_SENTENCE = "fabricated_sentence"
    DROP_KEY_FACT = "drop_key_fact"
    DUPLICATE_SENTENCE = "duplicate_sentence"
    TENSE_FLIP = "tense_flip"
    DEMOGRAPHIC_INSERT = "demographic_insert"


KIND_DIMENSION: dict[ErrorKind, Dimension] = {
    ErrorKind.ENTITY_SWAP: Dimension.ACCURACY,
    ErrorKind.NEGATION_FLIP: Dimension.ACCURACY,
    ErrorKind.FABRICATED_SENTENCE: Dimension.ACCURACY,
    ErrorKind.DROP_KEY_FACT: Dimension.COMPLETENESS,
    ErrorKind.DUPLICATE_SENTENCE: Dimension.READABILITY,
    ErrorKind.TENSE_FLIP: Dimension.READABILITY,
    ErrorKind.DEMOGRAPHIC_INSERT: Dimension.READABILITY,
}


@dataclass(frozen=True)
class ErrorRule:
    kind: ErrorKind
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", dict(self.params))

    @property
    def target_dimension(self) -> Dimension:
        return KIND_DIMENSION[self.kind]


def default_rules() -> tuple[ErrorRule, ...]:
    return tuple(ErrorRule(kind) for kind in ErrorKind)


@dataclass(frozen=True)
class ErrorApplication:
    kind: ErrorKind
    sentence_index: int
    description: str

    @property
    def target_dimension(self) -> Dimension:
        return KIND_DIMENSION[self.kind]


@dataclass(frozen=True)
class ErrorManifest:
    applied: tuple[ErrorApplication, ...]
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "applied", tuple(self.applied))


_AUXILIARIES = ("was", "were", "is", "are", "did", "does", "has", "had", "will", "can", "should")
_FABRICATIONS = (
    "The request was escalated to the security team for review.",
    "The participants scheduled a follow-up call for the next morning.",
    "A refund of the monthly fee was issued during the call.",
    "The account was temporarily suspended as a precaution.",
)
_DEMOGRAPHIC_PHRASES = (
    "a middle-aged man",
    "an elderly woman",
    "a young foreign national",
    "a 45-year-old parent of three",
)


def _de_inflect(word: str) -> str:
    if word.endswith("ied"):
        return word[:-3] + "y"
    if word.endswith("ed"):
        return word[:-2]
    return word


def _replace_text(summary: Summary, index: int, text: str) -> Summary:
    sentences = list(summary.sentences)
    sentences[index] = replace(sentences[index], text=text)
    return replace(summary, sentences=tuple(sentences))


def _reindex(sentences: Sequence[SummarySentence]) -> tuple[SummarySentence, ...]:
    return tuple(replace(s, index=i) for i, s in enumerate(sentences))


def _apply_entity_swap(summary: Summary, dialogue: Dialogue, rng: random.Random):
    speakers = sorted(dialogue.speakers)
    if len(speakers) < 2:
        return None
    candidates = []
    for sentence in summary.sentences:
        for name in speakers:
            if re.search(rf"\b{re.escape(name)}\b", sentence.text):
                candidates.append((sentence.index, name))
    if not candidates:
        return None
    index, name = candidates[rng.randrange(len(candidates))]
    others = [s for s in speakers if s != name]
    other = others[rng.randrange(len(others))]
    new_text = re.sub(rf"\b{re.escape(name)}\b", other, summary.sentences[index].text, count=1)
    return (
        _replace_text(summary, index, new_text),
        ErrorApplication(ErrorKind.ENTITY_SWAP, index, f"swapped {name!r} for {other!r}"),
    )


def _apply_negation_flip(summary: Summary, dialogue: Dialogue, rng: random.Random):
    candidates = []
    for sentence in summary.sentences:
        words = sentence.text.split()
        for pos, word in enumerate(words):
            bare = word.lower().strip(".,!?")
            if bare in _AUXILIARIES and pos + 1 < len(words):
                candidates.append((sentence.index, pos, "aux"))
                break
            if bare.endswith("ed") and len(bare) > 3:
                candidates.append((sentence.index, pos, "verb"))
                break
    if not candidates:
        return None
    index, pos, mode = candidates[rng.randrange(len(candidates))]
    words = summary.sentences[index].text.split()
    if mode == "aux":
        words.insert(pos + 1, "not")
    else:
        stem = _de_inflect(words[pos].strip(".,!?"))
        trailing = words[pos][len(words[pos].rstrip(".,!?")):]
        words[pos] = f"did not {stem}{trailing}"
    new_text = " ".join(words)
    return (
        _replace_text(summary, index, new_text),
        ErrorApplication(ErrorKind.NEGATION_FLIP, index, f"negated sentence {index}"),
    )


def _apply_fabricated_sentence(summary: Summary, dialogue: Dialogue, rng: random.Random):
    text = _FABRICATIONS[rng.randrange(len(_FABRICATIONS))]
    position = rng.randrange(len(summary.sentences) + 1)
    sentences = list(summary.sentences)
    sentences.insert(position, SummarySentence(index=0, text=text))
    return (
        replace(summary, sentences=_reindex(sentences)),
        ErrorApplication(ErrorKind.FABRICATED_SENTENCE, position, f"fabricated: {text}"),
    )


def _apply_drop_key_fact(summary: Summary, dialogue: Dialogue, rng: random.Random):
    if len(summary.sentences) < 2:
        return None
    position = rng.randrange(len(summary.sentences))
    dropped = summary.sentences[position]
    sentences = [s for s in summary.sentences if s.index != position]
    return (
        replace(summary, sentences=_reindex(sentences)),
        ErrorApplication(ErrorKind.DROP_KEY_FACT, position, f"dropped: {dropped.text}"),
    )


def _apply_duplicate_sentence(summary: Summary, dialogue: Dialogue, rng: random.Random):
    position = rng.randrange(len(summary.sentences))
    sentences = list(summary.sentences)
    sentences.insert(position + 1, sentences[position])
    return (
        replace(summary, sentences=_reindex(sentences)),
        ErrorApplication(
            ErrorKind.DUPLICATE_SENTENCE, position + 1, f"duplicated sentence {position}"
        ),
    )


_TENSE_MAP = {"was": "is", "were": "are", "had": "has"}


def _apply_tense_flip(summary: Summary, dialogue: Dialogue, rng: random.Random):
    candidates = []
    for sentence in summary.sentences:
        words = sentence.text.split()
        for pos, word in enumerate(words):
            bare = word.lower().strip(".,!?")
            if bare in _TENSE_MAP:
                candidates.append((sentence.index, pos, "map"))
                break
            if bare.endswith("ed") and len(bare) > 3:
                candidates.append((sentence.index, pos, "verb"))
                break
    if not candidates:
        return None
    index, pos, mode = candidates[rng.randrange(len(candidates))]
    words = summary.sentences[index].text.split()
    bare = words[pos].strip(".,!?")
    trailing = words[pos][len(bare):]
    if mode == "map":
        flipped = _TENSE_MAP[bare.lower()]
        if bare[0].isupper():
            flipped = flipped.capitalize()
        words[pos] = flipped + trailing
    else:
        words[pos] = f"is {_de_inflect(bare)}ing{trailing}"
    return (
        _replace_text(summary, index, " ".join(words)),
        ErrorApplication(ErrorKind.TENSE_FLIP, index, f"flipped tense in sentence {index}"),
    )


def _apply_demographic_insert(summary: Summary, dialogue: Dialogue, rng: random.Random):
    speakers = sorted(dialogue.speakers)
    candidates = []
    for sentence in summary.sentences:
        for name in speakers:
            if re.search(rf"\b{re.escape(name)}\b", sentence.text):
                candidates.append((sentence.index, name))
    if not candidates:
        return None
    index, name = candidates[rng.randrange(len(candidates))]
    phrase = _DEMOGRAPHIC_PHRASES[rng.randrange(len(_DEMOGRAPHIC_PHRASES))]
    new_text = re.sub(
        rf"\b{re.escape(name)}\b", f"{name}, {phrase},", summary.sentences[index].text, count=1
    )
    return (
        _replace_text(summary, index, new_text),
        ErrorApplication(
            ErrorKind.DEMOGRAPHIC_INSERT, index, f"added demographic detail to sentence {index}"
        ),
    )


_APPLIERS: dict[ErrorKind, Callable] = {
    ErrorKind.ENTITY_SWAP: _apply_entity_swap,
    ErrorKind.NEGATION_FLIP: _apply_negation_flip,
    ErrorKind.FABRICATED_SENTENCE: _apply_fabricated_sentence,
    ErrorKind.DROP_KEY_FACT: _apply_drop_key_fact,
    ErrorKind.DUPLICATE_SENTENCE: _apply_duplicate_sentence,
    ErrorKind.TENSE_FLIP: _apply_tense_flip,
    ErrorKind.DEMOGRAPHIC_INSERT: _apply_demographic_insert,
}


def inject_errors(
    gold: Summary,
    dialogue: Dialogue,
    rules: Sequence[ErrorRule],
    count: int,
    seed: int,
) -> tuple[Summary, ErrorManifest]:
    """Apply exactly ``count`` seeded rule applications to a gold summary.

    Rules that cannot apply to the current summary are resampled; it is an
    error only when none of the given rules applies.
    """
    if not 1 <= count <= 3:
        raise ValueError("count must be between 1 and 3")
    if not gold.sentences:
        raise ValueError("gold summary is empty")
    if not rules:
        raise RuleInapplicable("no rules supplied")
    rng = random.Random(seed)
    current = gold
    applied: list[ErrorApplication] = []
    for _ in range(count):
        remaining = list(rules)
        outcome = None
        while remaining:
            rule = remaining.pop(rng.randrange(len(remaining)))
            outcome = _APPLIERS[rule.kind](current, dialogue, rng)
            if outcome is not None:
                break
        if outcome is None:
            raise RuleInapplicable(
                f"none of {[r.kind.value for r in rules]} applies to summary "
                f"{gold.dialogue_id!r}"
            )
        current, application = outcome
        applied.append(application)
    return current, ErrorManifest(applied=tuple(applied), seed=seed)


# --- judge meta-evaluation --------------------------------------------------------

PERFECT_SCORE = 5
SCORE_FLOOR = 1


@dataclass(frozen=True)
class MetaevalInstance:
    dialogue: Dialogue
    summary: Summary
    gold_scores: Mapping[Dimension, int]
    manifest: ErrorManifest | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold_scores", dict(self.gold_scores))


def gold_scores_from_manifest(manifest: ErrorManifest | None) -> dict[Dimension, int]:
    """Perfect 5s, minus one point per injected error on its dimension."""
    scores = {dim: PERFECT_SCORE for dim in CANONICAL_DIMENSIONS}
    if manifest is not None:
        for application in manifest.applied:
            dim = application.target_dimension
            scores[dim] = max(SCORE_FLOOR, scores[dim] - 1)
    return scores


def build_metaeval_set(
    golds: Sequence[tuple[Dialogue, Summary]],
    perturb_fraction: float = 0.5,
    rules: Sequence[ErrorRule] | None = None,
    seed: int = 0,
) -> tuple[MetaevalInstance, ...]:
    """Keep a fraction of golds perfect and perturb the rest with 1-3 errors."""
    if len(golds) < 2:
        raise InsufficientGolds(f"need at least 2 gold pairs, got {len(golds)}")
    if not 0.0 <= perturb_fraction <= 1.0:
        raise ValueError("perturb_fraction must be in [0, 1]")
    rules = tuple(rules) if rules else default_rules()
    rng = random.Random(seed)
    n_perturbed = int(round(len(golds) * perturb_fraction))
    perturbed_positions = set(rng.sample(range(len(golds)), n_perturbed))
    instances: list[MetaevalInstance] = []
    for position, (dialogue, summary) in enumerate(golds):
        if position in perturbed_positions:
            count = rng.randint(1, 3)
            stream_seed = derive_seed(seed, dialogue.id)
            perturbed, manifest = inject_errors(summary, dialogue, rules, count, stream_seed)
            instances.append(
                MetaevalInstance(
                    dialogue=dialogue,
                    summary=perturbed,
                    gold_scores=gold_scores_from_manifest(manifest),
                    manifest=manifest,
                )
            )
        else:
            instances.append(
                MetaevalInstance(
                    dialogue=dialogue,
                    summary=summary,
                    gold_scores=gold_scores_from_manifest(None),
                )
            )
    return tuple(instances)


JudgeFn = Callable[[MetaevalInstance], Mapping[Dimension, float]]


def oracle_judge(instance: MetaevalInstance) -> Mapping[Dimension, float]:
    """Reads the manifest-derived gold scores; MAE 0 by construction."""
    return dict(instance.gold_scores)


def constant_judge(value: float) -> JudgeFn:
    return lambda instance: {dim: value for dim in CANONICAL_DIMENSIONS}


def scoring_judge(
    template: PromptTemplate, gateway: Gateway, k: int = 3
) -> JudgeFn:
    """Adapter: judge an instance with the LLM judge, using per-run means."""
    from .autoeval import judge_summary

    def judge(instance: MetaevalInstance) -> Mapping[Dimension, float]:
        scores = judge_summary(instance.dialogue, instance.summary, template, gateway, k=k)
        return scores.means()

    return judge


@dataclass(frozen=True)
class MetaevalReport:
    maes: Mapping[Dimension, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "maes", dict(self.maes))

    @property
    def average(self) -> float:
        return fmean(self.maes[dim] for dim in CANONICAL_DIMENSIONS)

    def rows(self) -> list[tuple[str, float]]:
        rows = [(dim.value.capitalize(), self.maes[dim]) for dim in CANONICAL_DIMENSIONS]
        rows.append(("Average", self.average))
        return rows

    def to_text(self) -> str:
        lines = [f"{'Metric':<14}{'MAE':>8}"]
        for label, value in self.rows():
            lines.append(f"{label:<14}{value:>8.2f}")
        return "\n".join(lines)


def run_metaeval(
    dataset: Sequence[MetaevalInstance], judge: JudgeFn, jobs: int = 1
) -> MetaevalReport:
    """Score every instance and report per-dimension MAE against gold.

    jobs > 1 judges instances concurrently; use it only with judges whose
    calls are order-independent (sequence-scripted backends are not).
    """
    if not dataset:
        raise InsufficientGolds("meta-eval dataset is empty")
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            predictions = list(pool.map(judge, dataset))
    else:
        predictions = [judge(instance) for instance in dataset]
    maes = {
        dim: metrics.mae(
            [float(p[dim]) for p in predictions],
            [float(instance.gold_scores[dim]) for instance in dataset],
        )
        for dim in CANONICAL_DIMENSIONS
    }
    return MetaevalReport(maes=maes)


# --- evaluator calibration --------------------------------------------------------

@dataclass(frozen=True)
class CalibrationExample:
    dialogue_id: str
    sentence_index: int
    dimension: Dimension
    gold_label: str  # pass | fail

    def __post_init__(self) -> None:
        if self.gold_label not in ("pass", "fail"):
            raise ValueError(f"gold_label must be pass or fail, got {self.gold_label!r}")


def run_calibration(
    examples: Sequence[CalibrationExample],
    dimension: Dimension,
    template: PromptTemplate,
    gateway: Gateway,
    corpus: Mapping[str, tuple[Dialogue, Summary]],
) -> metrics.ClassificationMetrics:
    """Run one evaluator over the corpus and score its labels against gold."""
    relevant = [e for e in examples if e.dimension is dimension]
    if not relevant:
        raise metrics.EmptyInput(f"no calibration examples for {dimension.value}")
    predicted_by_key: dict[tuple[str, int], str] = {}
    for dialogue_id in sorted({e.dialogue_id for e in relevant}):
        if dialogue_id not in corpus:
            raise MissingSentence(f"corpus has no entry for dialogue {dialogue_id!r}")
        dialogue, summary = corpus[dialogue_id]
        feedback = agents.evaluate_dimension(dialogue, summary, dimension, template, gateway)
        for item in feedback:
            if item.sentence_index is not None:
                predicted_by_key[(dialogue_id, item.sentence_index)] = item.label
    predicted, gold = [], []
    for example in relevant:
        key = (example.dialogue_id, example.sentence_index)
        if key not in predicted_by_key:
            raise MissingSentence(
                f"evaluator produced no label for sentence {example.sentence_index} "
                f"of dialogue {example.dialogue_id!r}"
            )
        predicted.append(predicted_by_key[key])
        gold.append(example.gold_label)
    return metrics.classification_metrics(predicted, gold)


# --- score tables (ablations, backend matrix) ---------------------------------------

@dataclass(frozen=True)
class ScoreCell:
    mean: float
    std: float


@dataclass(frozen=True)
class ScoreRow:
    label: str
    cells: Mapping[Dimension, ScoreCell]

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", dict(self.cells))


@dataclass(frozen=True)
class ScoreTable:
    rows: tuple[ScoreRow, ...]

    def to_text(self) -> str:
        header = f"{'Variant':<24}" + "".join(
            f"{dim.value.capitalize():>16}" for dim in CANONICAL_DIMENSIONS
        )
        lines = [header]
        for row in self.rows:
            cells = "".join(
                f"{row.cells[dim].mean:>9.2f}±{row.cells[dim].std:<6.2f}"
                for dim in CANONICAL_DIMENSIONS
            )
            lines.append(f"{row.label:<24}{cells}")
        return "\n".join(lines)


ScoringFn = Callable[[Dialogue, Summary], DimensionScores]


def _aggregate_rows(per_dialogue: Sequence[DimensionScores]) -> dict[Dimension, ScoreCell]:
    """Corpus mean per judge run, then mean±std across runs."""
    if not per_dialogue:
        raise ValueError("nothing to aggregate: no dialogues were scored")
    cells = {}
    for dim in CANONICAL_DIMENSIONS:
        run_lists = [scores.per_dimension[dim].runs for scores in per_dialogue]
        k = min(len(runs) for runs in run_lists)
        corpus_means = [fmean(runs[j] for runs in run_lists) for j in range(k)]
        cells[dim] = ScoreCell(
            mean=fmean(corpus_means),
            std=stdev(corpus_means) if len(corpus_means) > 1 else 0.0,
        )
    return cells


def mask_label(mask: frozenset[Dimension]) -> str:
    if mask == frozenset(Dimension):
        return "full"
    missing = [dim.value for dim in CANONICAL_DIMENSIONS if dim not in mask]
    return "-" + ",-".join(missing)


@dataclass(frozen=True)
class AblationReport:
    table: ScoreTable
    llm_calls: Mapping[str, Mapping[str, int]]  # mask label -> dialogue id -> calls

    def __post_init__(self) -> None:
        object.__setattr__(self, "llm_calls", {k: dict(v) for k, v in self.llm_calls.items()})


def run_ablation(
    dialogues: Sequence[Dialogue],
    cfg: PipelineConfig,
    masks: Sequence[frozenset[Dimension]],
    judge: ScoringFn,
    backends: Mapping[str, Backend],
    prompts: PromptLibrary,
    policy: RetryPolicy | None = None,
    defaults: RequestDefaults | None = None,
) -> AblationReport:
    """Re-run the pipeline per evaluator mask and judge the final summaries."""
    if frozenset(Dimension) not in [frozenset(m) for m in masks]:
        raise ValueError("masks must include the full evaluator set as the baseline row")
    rows = []
    calls: dict[str, dict[str, int]] = {}
    for mask in masks:
        mask = frozenset(mask)
        label = mask_label(mask)
        masked_cfg = replace(cfg, evaluator_mask=mask)
        scored: list[DimensionScores] = []
        calls[label] = {}
        for dialogue in dialogues:
            trace = TraceLog()
            result = run_pipeline(
                dialogue, masked_cfg, backends, prompts,
                policy=policy, trace=trace, defaults=defaults,
            )
            calls[label][dialogue.id] = len(trace)
            scored.append(judge(dialogue, result.final_summary))
        rows.append(ScoreRow(label=label, cells=_aggregate_rows(scored)))
    return AblationReport(table=ScoreTable(rows=tuple(rows)), llm_calls=calls)


def run_backend_matrix(
    dialogues: Sequence[Dialogue],
    cfg: PipelineConfig,
    entries: Sequence[tuple[str, str | None]],
    judge: ScoringFn,
    backends: Mapping[str, Backend],
    prompts: PromptLibrary,
    policy: RetryPolicy | None = None,
    defaults: RequestDefaults | None = None,
) -> ScoreTable:
    """Run identical prompts across backend variants and tabulate judge scores.

    Each entry is (backend_id, reasoning_level).  Scripted backends are reset
    between entries so repeated entries replay identically.
    """
    if len(entries) < 2:
        raise ValueError("backend matrix needs at least two entries")
    base_defaults = defaults or RequestDefaults()
    rows = []
    for backend_id, reasoning_level in entries:
        backend = backends[backend_id]
        reset = getattr(backend, "reset", None)
        if callable(reset):
            reset()
        entry_cfg = replace(cfg, backend_id=backend_id)
        entry_defaults = replace(base_defaults, reasoning_level=reasoning_level)
        scored = []
        for dialogue in dialogues:
            result = run_pipeline(
                dialogue, entry_cfg, backends, prompts,
                policy=policy, defaults=entry_defaults,
            )
            scored.append(judge(dialogue, result.final_summary))
        label = backend_id if reasoning_level is None else f"{backend_id} ({reasoning_level} reasoning)"
        rows.append(ScoreRow(label=label, cells=_aggregate_rows(scored)))
    return ScoreTable(rows=tuple(rows))


# --- transcript noise simulation -----------------------------------------------------

DISFLUENCIES = ("um", "ah", "[laughter]")


@dataclass(frozen=True)
class NoiseSpec:
    target_wer: float
    disfluency_rate: float = 0.0
    channel_merge: bool = False
    merge_probability: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.target_wer < 1.0:
            raise ValueError("target_wer must be in [0, 1)")
        if not 0.0 <= self.disfluency_rate <= 1.0:
            raise ValueError("disfluency_rate must be in [0, 1]")
        if not 0.0 <= self.merge_probability <= 1.0:
            raise ValueError("merge_probability must be in [0, 1]")


_WER_TOLERANCE = 0.01


def _editable_positions(words_per_turn: Sequence[list[str]]) -> list[tuple[int, int]]:
    positions = []
    for turn_i, words in enumerate(words_per_turn):
        for word_j, word in enumerate(words):
            if any(ch.isalnum() for ch in word):
                positions.append((turn_i, word_j))
    return positions


def inject_asr_noise(dialogue: Dialogue, spec: NoiseSpec) -> tuple[Dialogue, float]:
    """Perturb a transcript to a target word error rate.

    Word substitutions, deletions, and insertions are placed at seeded
    positions; replacement tokens are out-of-vocabulary so each edit costs
    exactly one alignment operation.  The achieved rate is measured with
    :func:`metrics.wer` over the concatenated turns before disfluencies are
    added (disfluencies model structural speech noise, not recognition
    error).  Optional channel merging concatenates adjacent turns from
    distinct speakers under the first speaker.
    """
    rng = random.Random(spec.seed)
    words_per_turn = [turn.text.split() for turn in dialogue.turns]
    positions = _editable_positions(words_per_turn)
    n_tokens = len(positions)

    if spec.target_wer == 0.0:
        noisy = dialogue
        achieved = 0.0
    else:
        if n_tokens == 0:
            raise TargetUnreachable("dialogue has no editable words")
        n_edits = round(spec.target_wer * n_tokens)
        if abs(n_edits / n_tokens - spec.target_wer) > _WER_TOLERANCE:
            raise TargetUnreachable(
                f"cannot hit WER {spec.target_wer} within ±{_WER_TOLERANCE} "
                f"on {n_tokens} words"
            )
        vocabulary = {w for words in words_per_turn for w in metrics.tokenize(" ".join(words))}
        counter = 0

        def fresh_token() -> str:
            nonlocal counter
            while True:
                counter += 1
                token = f"unk{counter}"
                if token not in vocabulary:
                    return token

        chosen = rng.sample(range(len(positions)), n_edits)
        edits: dict[tuple[int, int], tuple[str, str | None]] = {}
        for position_index in sorted(chosen):
            op = rng.choice(("sub", "del", "ins"))
            token = fresh_token() if op in ("sub", "ins") else None
            edits[positions[position_index]] = (op, token)
        spare = [i for i in range(len(positions)) if i not in set(chosen)]
        rng.shuffle(spare)

        def apply_edits() -> list[list[str]]:
            noisy_words = []
            for turn_i, words in enumerate(words_per_turn):
                out: list[str] = []
                for word_j, word in enumerate(words):
                    op, token = edits.get((turn_i, word_j), (None, None))
                    if op == "del":
                        continue
                    if op == "sub":
                        out.append(token)
                        continue
                    out.append(word)
                    if op == "ins":
                        out.append(token)
                noisy_words.append(out)
            return noisy_words

        original_stream = [
            t for turn in dialogue.turns for t in metrics.tokenize(turn.text)
        ]
        # An adjacent delete+insert can collapse into one substitution under
        # the minimal alignment, so measure and top up with substitutions
        # until the achieved rate reaches the target band.
        while True:
            noisy_words = apply_edits()
            noisy_stream = [
                t for words in noisy_words for t in metrics.tokenize(" ".join(words))
            ]
            achieved, _ = metrics.wer(original_stream, noisy_stream)
            if achieved >= spec.target_wer - _WER_TOLERANCE:
                break
            if not spare:
                raise TargetUnreachable(
                    f"ran out of editable words at WER {achieved:.4f}, "
                    f"target {spec.target_wer}"
                )
            edits[positions[spare.pop()]] = ("sub", fresh_token())
        if achieved > spec.target_wer + _WER_TOLERANCE:
            raise TargetUnreachable(
                f"achieved WER {achieved:.4f} overshoots target {spec.target_wer} "
                f"beyond ±{_WER_TOLERANCE}"
            )
        new_turns = []
        for turn, words in zip(dialogue.turns, noisy_words):
            text = " ".join(words) if words else "..."
            new_turns.append(replace(turn, text=text))
        noisy = Dialogue(id=dialogue.id, turns=tuple(new_turns))

    if spec.disfluency_rate > 0.0:
        new_turns = []
        for turn in noisy.turns:
            if rng.random() < spec.disfluency_rate:
                filler = DISFLUENCIES[rng.randrange(len(DISFLUENCIES))]
                words = turn.text.split()
                words.insert(rng.randrange(len(words) + 1), filler)
                new_turns.append(replace(turn, text=" ".join(words)))
            else:
                new_turns.append(turn)
        noisy = Dialogue(id=noisy.id, turns=tuple(new_turns))

    if spec.channel_merge:
        merged: list[Turn] = []
        i = 0
        turns = noisy.turns
        while i < len(turns):
            if (
                i + 1 < len(turns)
                and turns[i].speaker != turns[i + 1].speaker
                and rng.random() < spec.merge_probability
            ):
                first, second = turns[i], turns[i + 1]
                merged.append(
                    Turn(
                        index=len(merged),
                        speaker=first.speaker,
                        text=f"{first.text} {second.text}",
                        start_ms=first.start_ms,
                        end_ms=second.end_ms,
                    )
                )
                i += 2
            else:
                merged.append(replace(turns[i], index=len(merged)))
                i += 1
        noisy = Dialogue(id=noisy.id, turns=tuple(merged))

    return noisy, achieved


# --- blinded A/B pair construction ----------------------------------------------------

@dataclass(frozen=True)
class BlindedPair:
    pair_id: str
    dialogue_id: str
    left: Summary
    right: Summary


def make_ab_pairs(
    a_outputs: Mapping[str, Summary],
    b_outputs: Mapping[str, Summary],
    seed: int = 0,
    a_label: str = "A",
    b_label: str = "B",
) -> tuple[list[BlindedPair], dict[str, dict[str, str]]]:
    """Blind two systems' outputs into left/right pairs with balanced order.

    Exactly ceil(n/2) pairs present system A on the left.  The returned key
    maps pair_id -> {"left": label, "right": label} and is meant to be stored
    separately from the pairs.
    """
    if set(a_outputs) != set(b_outputs):
        raise KeyMismatch(
            f"system outputs cover different dialogues: "
            f"{sorted(set(a_outputs) ^ set(b_outputs))[:5]}"
        )
    dialogue_ids = sorted(a_outputs)
    n = len(dialogue_ids)
    a_first_flags = [True] * math.ceil(n / 2) + [False] * (n - math.ceil(n / 2))
    random.Random(seed).shuffle(a_first_flags)
    pairs: list[BlindedPair] = []
    key: dict[str, dict[str, str]] = {}
    for i, dialogue_id in enumerate(dialogue_ids):
        pair_id = f"pair-{i:04d}"
        if a_first_flags[i]:
            left, right = a_outputs[dialogue_id], b_outputs[dialogue_id]
            key[pair_id] = {"left": a_label, "right": b_label}
        else:
            left, right = b_outputs[dialogue_id], a_outputs[dialogue_id]
            key[pair_id] = {"left": b_label, "right": a_label}
        pairs.append(
            BlindedPair(pair_id=pair_id, dialogue_id=dialogue_id, left=left, right=right)
        )
    return pairs, key

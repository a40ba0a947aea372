"""Deterministic evaluation metrics.

Everything here is a pure function, so the pipeline, the experiment harness,
and the tests can all cross-check each other against the same arithmetic.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from statistics import fmean
from typing import Sequence

from .core import RefineLoopError, Summary, nfc


class EmptyReference(RefineLoopError):
    pass


class LengthMismatch(RefineLoopError):
    pass


class EmptyInput(RefineLoopError):
    pass


class EmptyTally(RefineLoopError):
    pass


_NON_WORD_RE = re.compile(r"[^\w\s]+")


def tokenize(text: str) -> tuple[str, ...]:
    """Fixed WER tokenization: NFC, lowercase, punctuation stripped, split."""
    cleaned = _NON_WORD_RE.sub("", nfc(text).lower())
    return tuple(cleaned.split())


@dataclass(frozen=True)
class AlignmentCounts:
    substitutions: int
    insertions: int
    deletions: int
    hits: int
    reference_len: int

    def __post_init__(self) -> None:
        if self.hits + self.substitutions + self.deletions != self.reference_len:
            raise ValueError("hits + substitutions + deletions must equal reference_len")


def _as_words(value: str | Sequence[str]) -> tuple[str, ...]:
    if isinstance(value, str):
        return tokenize(value)
    return tuple(value)


def wer(
    reference: str | Sequence[str], hypothesis: str | Sequence[str]
) -> tuple[float, AlignmentCounts]:
    """Word error rate (S+I+D)/N under a minimal unit-cost edit alignment.

    Strings are tokenized with :func:`tokenize`; pre-split word sequences are
    used as given.  Raises EmptyReference when the reference has no words.
    """
    ref = _as_words(reference)
    hyp = _as_words(hypothesis)
    if not ref:
        raise EmptyReference("reference has no words")

    n, m = len(ref), len(hyp)
    # cost[i][j] = edit distance between ref[:i] and hyp[:j]
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        row = cost[i]
        prev = cost[i - 1]
        ref_word = ref[i - 1]
        for j in range(1, m + 1):
            if ref_word == hyp[j - 1]:
                row[j] = prev[j - 1]
            else:
                best = prev[j - 1]  # substitution
                if prev[j] < best:
                    best = prev[j]  # deletion
                if row[j - 1] < best:
                    best = row[j - 1]  # insertion
                row[j] = best + 1

    # Traceback one minimal alignment (diagonal preferred) to split the cost
    # into substitutions / insertions / deletions / hits.
    subs = ins = dels = hits = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and cost[i][j] == cost[i - 1][j - 1]:
            hits += 1
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and cost[i][j] == cost[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and cost[i][j] == cost[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    counts = AlignmentCounts(
        substitutions=subs, insertions=ins, deletions=dels, hits=hits, reference_len=n
    )
    rate = (subs + ins + dels) / n
    return rate, counts


# --- redundancy oracle -------------------------------------------------------

def _gram_multiset(words: Sequence[str], n: int) -> Counter:
    if len(words) >= n:
        return Counter(tuple(words[i : i + n]) for i in range(len(words) - n + 1))
    # Too short for full n-grams: fall back to unigrams.
    return Counter((w,) for w in words)


def _multiset_jaccard(a: Counter, b: Counter) -> float:
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    inter = sum(min(a[key], b[key]) for key in a.keys() & b.keys())
    union = sum(max(a[key], b[key]) for key in a.keys() | b.keys())
    return inter / union


def ngram_redundancy(
    summary: Summary, n: int = 3, threshold: float = 0.6
) -> tuple[list[tuple[int, int, float]], list[tuple[int, str]]]:
    """Flag repeated content across and within summary sentences.

    Pair flags: (i, j, similarity) with i < j, where similarity is the Jaccard
    overlap of word n-gram multisets (unigrams when a sentence is shorter than
    n words) and similarity >= threshold.  Intra flags: (i, gram) when any
    k-gram with k <= n repeats inside sentence i; the longest repeated gram is
    reported.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    words_per_sentence = [tokenize(s.text) for s in summary.sentences]
    grams = [_gram_multiset(w, n) for w in words_per_sentence]

    pair_flags: list[tuple[int, int, float]] = []
    for i in range(len(grams)):
        for j in range(i + 1, len(grams)):
            similarity = _multiset_jaccard(grams[i], grams[j])
            if similarity >= threshold:
                pair_flags.append((i, j, similarity))

    intra_flags: list[tuple[int, str]] = []
    for i, words in enumerate(words_per_sentence):
        for k in range(min(n, len(words)), 0, -1):
            counts = Counter(tuple(words[p : p + k]) for p in range(len(words) - k + 1))
            repeated = [gram for gram, c in counts.items() if c >= 2]
            if repeated:
                # Deterministic pick: the repeated gram occurring first.
                first = min(
                    repeated,
                    key=lambda g: next(
                        p for p in range(len(words) - k + 1) if tuple(words[p : p + k]) == g
                    ),
                )
                intra_flags.append((i, " ".join(first)))
                break
    return pair_flags, intra_flags


def attribution_coverage(summary: Summary) -> float:
    """Fraction of sentences carrying at least one turn attribution.

    An empty summary is vacuously fully covered.
    """
    if not summary.sentences:
        return 1.0
    attributed = sum(1 for s in summary.sentences if s.attributions)
    return attributed / len(summary.sentences)


def mae(predicted: Sequence[float], gold: Sequence[float]) -> float:
    if len(predicted) != len(gold):
        raise LengthMismatch(f"{len(predicted)} predictions vs {len(gold)} gold values")
    if not predicted:
        raise EmptyInput("mae of empty vectors is undefined")
    return fmean(abs(p - g) for p, g in zip(predicted, gold))


# --- preference statistics ---------------------------------------------------

@dataclass(frozen=True)
class Tally:
    wins_a: int
    wins_b: int
    ties: int

    def __post_init__(self) -> None:
        if min(self.wins_a, self.wins_b, self.ties) < 0:
            raise ValueError("tally counts must be non-negative")

    @property
    def total(self) -> int:
        return self.wins_a + self.wins_b + self.ties


def wilson_interval(successes: int, total: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise EmptyTally("cannot compute an interval over zero trials")
    p = successes / total
    denom = 1.0 + z * z / total
    center = (p + z * z / (2 * total)) / denom
    margin = (z / denom) * math.sqrt(p * (1 - p) / total + z * z / (4 * total * total))
    # The interval contains p by construction; keep that exact under rounding.
    lo = min(max(0.0, center - margin), p)
    hi = max(min(1.0, center + margin), p)
    return lo, hi


@dataclass(frozen=True)
class PreferenceRates:
    rate_a: float
    rate_b: float
    rate_tie: float
    wilson95_a: tuple[float, float]


def preference_rates(tally: Tally) -> PreferenceRates:
    if tally.total == 0:
        raise EmptyTally("tally has no records")
    total = tally.total
    return PreferenceRates(
        rate_a=tally.wins_a / total,
        rate_b=tally.wins_b / total,
        rate_tie=tally.ties / total,
        wilson95_a=wilson_interval(tally.wins_a, total),
    )


# --- binary classification ---------------------------------------------------

_VALID_LABELS = frozenset({"pass", "fail"})


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: bool  # precision or recall had an empty positive set


def classification_metrics(
    predicted: Sequence[str], gold: Sequence[str]
) -> ClassificationMetrics:
    """Confusion-matrix metrics with 'fail' as the positive class."""
    if len(predicted) != len(gold):
        raise LengthMismatch(f"{len(predicted)} predictions vs {len(gold)} gold labels")
    if not predicted:
        raise EmptyInput("no labels to score")
    for label in (*predicted, *gold):
        if label not in _VALID_LABELS:
            raise ValueError(f"labels must be 'pass' or 'fail', got {label!r}")
    tp = sum(1 for p, g in zip(predicted, gold) if p == "fail" and g == "fail")
    fp = sum(1 for p, g in zip(predicted, gold) if p == "fail" and g == "pass")
    fn = sum(1 for p, g in zip(predicted, gold) if p == "pass" and g == "fail")
    tn = len(gold) - tp - fp - fn

    degenerate = False
    if tp + fp == 0:
        precision, degenerate = 1.0, True
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall, degenerate = 1.0, True
    else:
        recall = tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return ClassificationMetrics(
        accuracy=(tp + tn) / len(gold),
        precision=precision,
        recall=recall,
        f1=f1,
        degenerate=degenerate,
    )

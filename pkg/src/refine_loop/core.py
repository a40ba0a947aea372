"""Domain types shared by every stage of the summarization pipeline.

Transcripts are line-delimited JSON (one header line with the dialogue id,
then one record per turn); summaries are a single JSON object.  All text is
normalized to NFC on construction so equality is stable across platforms.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from typing import Iterable, Mapping


class RefineLoopError(Exception):
    """Base class for every domain error raised by this package."""


class EmptyDialogue(RefineLoopError):
    pass


class MalformedRecord(RefineLoopError):
    pass


class NonContiguousIndex(RefineLoopError):
    pass


class InvalidAttribution(RefineLoopError):
    pass


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


class Dimension(Enum):
    """The three summary requirements, in canonical merge order."""

    ACCURACY = "accuracy"
    COMPLETENESS = "completeness"
    READABILITY = "readability"

    @property
    def order(self) -> int:
        return _DIMENSION_ORDER[self]

    def __lt__(self, other: object):
        if not isinstance(other, Dimension):
            return NotImplemented
        return self.order < other.order


CANONICAL_DIMENSIONS: tuple[Dimension, ...] = (
    Dimension.ACCURACY,
    Dimension.COMPLETENESS,
    Dimension.READABILITY,
)
_DIMENSION_ORDER = {dim: i for i, dim in enumerate(CANONICAL_DIMENSIONS)}


class Origin(Enum):
    DRAFT = "draft"
    REFINED = "refined"
    INSERTED = "inserted"


@dataclass(frozen=True)
class Turn:
    index: int
    speaker: str
    text: str
    start_ms: int | None = None
    end_ms: int | None = None

    def __post_init__(self) -> None:
        if self.index < 0:
            raise MalformedRecord(f"turn index must be >= 0, got {self.index}")
        if not isinstance(self.speaker, str) or not self.speaker.strip():
            raise MalformedRecord("turn is missing a speaker")
        if not isinstance(self.text, str) or not self.text.strip():
            raise MalformedRecord("turn text is empty")
        for name in ("start_ms", "end_ms"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < 0):
                raise MalformedRecord(f"{name} must be a non-negative integer")
        if (
            self.start_ms is not None
            and self.end_ms is not None
            and self.end_ms < self.start_ms
        ):
            raise MalformedRecord("end_ms precedes start_ms")
        object.__setattr__(self, "speaker", nfc(self.speaker))
        object.__setattr__(self, "text", nfc(self.text))


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Turn, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        if not self.turns:
            raise EmptyDialogue(f"dialogue {self.id!r} has no turns")
        for position, turn in enumerate(self.turns):
            if turn.index != position:
                raise NonContiguousIndex(
                    f"turn at position {position} carries index {turn.index}"
                )

    @property
    def speakers(self) -> frozenset[str]:
        return frozenset(turn.speaker for turn in self.turns)


@dataclass(frozen=True)
class SummarySentence:
    index: int
    text: str
    attributions: tuple[int, ...] = ()
    origin: Origin = Origin.DRAFT

    def __post_init__(self) -> None:
        if self.index < 0:
            raise MalformedRecord(f"sentence index must be >= 0, got {self.index}")
        if not isinstance(self.text, str) or not self.text.strip():
            raise MalformedRecord("summary sentence text is empty")
        object.__setattr__(self, "text", nfc(self.text))
        object.__setattr__(self, "attributions", tuple(int(a) for a in self.attributions))


@dataclass(frozen=True)
class Summary:
    dialogue_id: str
    sentences: tuple[SummarySentence, ...]
    revision_round: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if self.revision_round < 0:
            raise MalformedRecord("revision_round must be >= 0")
        for position, sentence in enumerate(self.sentences):
            if sentence.index != position:
                raise NonContiguousIndex(
                    f"sentence at position {position} carries index {sentence.index}"
                )

    def texts(self) -> tuple[str, ...]:
        return tuple(sentence.text for sentence in self.sentences)


def summary_from_texts(
    dialogue_id: str,
    texts: Iterable[str],
    origin: Origin = Origin.DRAFT,
    revision_round: int = 0,
) -> Summary:
    sentences = tuple(
        SummarySentence(index=i, text=t, origin=origin) for i, t in enumerate(texts)
    )
    return Summary(dialogue_id=dialogue_id, sentences=sentences, revision_round=revision_round)


def validate_attributions(summary: Summary, dialogue: Dialogue) -> None:
    """Every attribution must name an existing turn of the paired dialogue."""
    if summary.dialogue_id != dialogue.id:
        raise InvalidAttribution(
            f"summary is for {summary.dialogue_id!r}, dialogue is {dialogue.id!r}"
        )
    n_turns = len(dialogue.turns)
    for sentence in summary.sentences:
        for turn_index in sentence.attributions:
            if not 0 <= turn_index < n_turns:
                raise InvalidAttribution(
                    f"sentence {sentence.index} cites turn {turn_index}, "
                    f"dialogue has {n_turns} turns"
                )


# --- sentence splitting -----------------------------------------------------

def _load_abbreviations() -> frozenset[str]:
    data = resources.files("refine_loop").joinpath("data/abbreviations.txt").read_text("utf-8")
    return frozenset(line.strip().lower() for line in data.splitlines() if line.strip())


_ABBREVIATIONS = _load_abbreviations()
_TERMINALS = frozenset(".?!")


def split_sentences(text: str) -> list[str]:
    """Split prose into sentences at terminal punctuation followed by space.

    Whitespace is collapsed first, so joining the result with single spaces
    reproduces the normalized input.  A fixed abbreviation list (``e.g.``,
    ``Mr.`` and friends, shipped as package data) guards against false splits.
    """
    normalized = re.sub(r"\s+", " ", nfc(text)).strip()
    if not normalized:
        return []
    sentences: list[str] = []
    start = 0
    i = 0
    while i < len(normalized):
        ch = normalized[i]
        if ch in _TERMINALS and i + 1 < len(normalized) and normalized[i + 1] == " ":
            candidate = normalized[start : i + 1]
            last_word = candidate.rsplit(" ", 1)[-1]
            if last_word.lower() not in _ABBREVIATIONS:
                sentences.append(candidate)
                start = i + 2
                i = start
                continue
        i += 1
    tail = normalized[start:]
    if tail:
        sentences.append(tail)
    return sentences


# --- anonymization ----------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"^\[(?:REDACTED_[A-Z0-9_]+|SPEAKER_\d+)\]$")
_EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}")
_LONG_DIGITS_RE = re.compile(r"\d{7,}")


@dataclass(frozen=True)
class RedactionRule:
    pattern: str  # literal text, or a wildcard pattern using '*'
    replacement: str

    def __post_init__(self) -> None:
        if not self.pattern:
            raise MalformedRecord("redaction rule pattern is empty")
        if not _PLACEHOLDER_RE.match(self.replacement):
            raise MalformedRecord(
                f"replacement {self.replacement!r} must look like [REDACTED_*] or [SPEAKER_k]"
            )

    def compiled(self) -> re.Pattern[str]:
        parts = [re.escape(piece) for piece in self.pattern.split("*")]
        return re.compile(".*?".join(parts))


@dataclass(frozen=True)
class RedactionRuleSet:
    rules: tuple[RedactionRule, ...] = ()
    speaker_roster: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "speaker_roster", dict(self.speaker_roster))
        for name, placeholder in self.speaker_roster.items():
            if not name:
                raise MalformedRecord("roster contains an empty speaker name")
            if not _PLACEHOLDER_RE.match(placeholder):
                raise MalformedRecord(
                    f"roster placeholder {placeholder!r} must look like "
                    "[REDACTED_*] or [SPEAKER_k]"
                )


def redact_text(text: str, rules: RedactionRuleSet) -> str:
    out = text
    for name, placeholder in rules.speaker_roster.items():
        out = re.sub(rf"\b{re.escape(name)}\b", placeholder, out)
    for rule in rules.rules:
        out = rule.compiled().sub(rule.replacement, out)
    out = _EMAIL_RE.sub("[REDACTED_EMAIL]", out)
    out = _LONG_DIGITS_RE.sub("[REDACTED_NUMBER]", out)
    return out


def anonymize(dialogue: Dialogue, rules: RedactionRuleSet) -> Dialogue:
    """Redact roster names, emails, and long digit runs inside turn texts.

    Only turn texts change; ids, speakers, and indices are untouched.
    Applying the same rule set twice is a no-op, because replacement tokens
    never match any rule.
    """
    new_turns = tuple(replace(t, text=redact_text(t.text, rules)) for t in dialogue.turns)
    return Dialogue(id=dialogue.id, turns=new_turns)


# --- serialization ----------------------------------------------------------

def parse_dialogue(doc: str) -> Dialogue:
    lines = [line for line in doc.splitlines() if line.strip()]
    if not lines:
        raise EmptyDialogue("transcript document is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"bad header line: {exc}") from exc
    if not isinstance(header, dict) or not isinstance(header.get("id"), str):
        raise MalformedRecord("header line must be an object with a string 'id'")
    if len(lines) == 1:
        raise EmptyDialogue(f"transcript {header['id']!r} has no turn records")
    turns = []
    for line in lines[1:]:
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"bad turn record: {exc}") from exc
        if not isinstance(record, dict):
            raise MalformedRecord("turn record must be an object")
        missing = [k for k in ("index", "speaker", "text") if k not in record]
        if missing:
            raise MalformedRecord(f"turn record is missing {missing}")
        turns.append(
            Turn(
                index=record["index"],
                speaker=record["speaker"],
                text=record["text"],
                start_ms=record.get("start_ms"),
                end_ms=record.get("end_ms"),
            )
        )
    return Dialogue(id=header["id"], turns=tuple(turns))


def serialize_dialogue(dialogue: Dialogue) -> str:
    lines = [json.dumps({"id": dialogue.id}, ensure_ascii=False)]
    for turn in dialogue.turns:
        record: dict = {"index": turn.index, "speaker": turn.speaker, "text": turn.text}
        if turn.start_ms is not None:
            record["start_ms"] = turn.start_ms
        if turn.end_ms is not None:
            record["end_ms"] = turn.end_ms
        lines.append(json.dumps(record, ensure_ascii=False))
    return "\n".join(lines) + "\n"


def parse_summary(doc: str) -> Summary:
    try:
        payload = json.loads(doc)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"bad summary document: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedRecord("summary document must be an object")
    try:
        sentences = tuple(
            SummarySentence(
                index=item["index"],
                text=item["text"],
                attributions=tuple(item.get("attributions", ())),
                origin=Origin(item.get("origin", "draft")),
            )
            for item in payload["sentences"]
        )
        return Summary(
            dialogue_id=payload["dialogue_id"],
            sentences=sentences,
            revision_round=payload.get("revision_round", 0),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedRecord(f"bad summary document: {exc}") from exc


def serialize_summary(summary: Summary) -> str:
    payload = {
        "dialogue_id": summary.dialogue_id,
        "revision_round": summary.revision_round,
        "sentences": [
            {
                "index": s.index,
                "text": s.text,
                "attributions": list(s.attributions),
                "origin": s.origin.value,
            }
            for s in summary.sentences
        ],
    }
    return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"

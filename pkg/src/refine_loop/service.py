"""HTTP service backing human annotation.

Serves blinded A/B pairs and attribution tasks, and records submissions in
a single append-only line-delimited log.  The log is the only persistent
state: every append is flushed and fsynced before the caller gets its record
id back, and startup replays the whole file to rebuild the in-memory index.
Resubmissions supersede earlier records (last write wins) while the full
history stays in the log for audit.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping

from fastapi import FastAPI, HTTPException, Query
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import metrics
from .core import (
    Dialogue,
    RefineLoopError,
    Summary,
    parse_dialogue,
    parse_summary,
)
from .harness import BlindedPair


class UnknownExperiment(RefineLoopError):
    pass


class UnknownPair(RefineLoopError):
    pass


class InvalidChoice(RefineLoopError):
    pass


class UnknownDialogue(RefineLoopError):
    pass


class InvalidTurnIndex(RefineLoopError):
    pass


class NoRecords(RefineLoopError):
    pass


class MissingKey(RefineLoopError):
    pass


VALID_CHOICES = ("left", "right", "tie")

NO_TASKS = "no_tasks"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _summary_payload(summary: Summary) -> dict:
    return {"sentences": [s.text for s in summary.sentences]}


def _dialogue_payload(dialogue: Dialogue) -> dict:
    return {
        "id": dialogue.id,
        "turns": [
            {"index": t.index, "speaker": t.speaker, "text": t.text} for t in dialogue.turns
        ],
    }


@dataclass(frozen=True)
class Experiment:
    experiment_id: str
    pairs: Mapping[str, BlindedPair]
    key: Mapping[str, Mapping[str, str]] | None  # pair_id -> {left: system, right: system}

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", dict(self.pairs))
        object.__setattr__(self, "key", dict(self.key) if self.key is not None else None)


class ServiceStore:
    """On-disk layout:

    root/
      dialogues/<id>.jsonl        transcript documents
      experiments/<id>/pairs.json blinded pairs
      experiments/<id>/key.json   unblinding key (optional until export)
      attribution/<id>.json       summary document for attribution labeling
      events.log                  append-only submission log
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()
        self.dialogues: dict[str, Dialogue] = {}
        self.experiments: dict[str, Experiment] = {}
        self.attribution_tasks: dict[str, Summary] = {}
        self._load_corpus()

        self._log_path = self.root / "events.log"
        self._pref_effective: dict[tuple[str, str, str], dict] = {}
        self._pref_history: dict[tuple[str, str, str], list[dict]] = {}
        self._attr_effective: dict[tuple[str, int, str], dict] = {}
        self._attr_history: dict[tuple[str, int, str], list[dict]] = {}
        self._seq = 0
        self._replay()
        self._log = open(self._log_path, "a", encoding="utf-8")

    # --- loading -------------------------------------------------------------

    def _load_corpus(self) -> None:
        dialogues_dir = self.root / "dialogues"
        if dialogues_dir.is_dir():
            for path in sorted(dialogues_dir.glob("*.jsonl")):
                dialogue = parse_dialogue(path.read_text("utf-8"))
                self.dialogues[dialogue.id] = dialogue
        experiments_dir = self.root / "experiments"
        if experiments_dir.is_dir():
            for exp_dir in sorted(p for p in experiments_dir.iterdir() if p.is_dir()):
                pairs_path = exp_dir / "pairs.json"
                if not pairs_path.is_file():
                    continue
                payload = json.loads(pairs_path.read_text("utf-8"))
                pairs = {}
                for item in payload["pairs"]:
                    pair = BlindedPair(
                        pair_id=item["pair_id"],
                        dialogue_id=item["dialogue_id"],
                        left=parse_summary(json.dumps(item["left"])),
                        right=parse_summary(json.dumps(item["right"])),
                    )
                    pairs[pair.pair_id] = pair
                key_path = exp_dir / "key.json"
                key = None
                if key_path.is_file():
                    key = json.loads(key_path.read_text("utf-8"))["pairs"]
                self.experiments[payload["experiment_id"]] = Experiment(
                    experiment_id=payload["experiment_id"], pairs=pairs, key=key
                )
        attribution_dir = self.root / "attribution"
        if attribution_dir.is_dir():
            for path in sorted(attribution_dir.glob("*.json")):
                summary = parse_summary(path.read_text("utf-8"))
                self.attribution_tasks[summary.dialogue_id] = summary

    def _replay(self) -> None:
        if not self._log_path.is_file():
            return
        with open(self._log_path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    self._index(json.loads(line))

    def _index(self, record: dict) -> None:
        self._seq += 1
        if record["kind"] == "preference":
            key = (record["experiment_id"], record["pair_id"], record["annotator_id"])
            self._pref_history.setdefault(key, []).append(record)
            self._pref_effective[key] = record
        elif record["kind"] == "attribution":
            key = (record["dialogue_id"], record["sentence_index"], record["annotator_id"])
            self._attr_history.setdefault(key, []).append(record)
            self._attr_effective[key] = record

    def _append(self, record: dict) -> str:
        # Caller must hold self._lock.  Durable before acknowledgment.
        record["record_id"] = f"evt-{self._seq + 1:08d}"
        self._log.write(json.dumps(record, ensure_ascii=False) + "\n")
        self._log.flush()
        os.fsync(self._log.fileno())
        self._index(record)
        return record["record_id"]

    def close(self) -> None:
        with self._lock:
            self._log.close()

    # --- preference workflow ----------------------------------------------------

    def _experiment(self, experiment_id: str) -> Experiment:
        try:
            return self.experiments[experiment_id]
        except KeyError:
            raise UnknownExperiment(f"experiment {experiment_id!r} is not loaded")

    def progress(self, experiment_id: str, annotator_id: str) -> tuple[int, int]:
        experiment = self._experiment(experiment_id)
        with self._lock:
            done = sum(
                1
                for (exp, _pid, annotator) in self._pref_effective
                if exp == experiment_id and annotator == annotator_id
            )
        return done, len(experiment.pairs)

    def next_pair(self, experiment_id: str, annotator_id: str) -> BlindedPair | None:
        """The least-judged pair this annotator has not judged yet."""
        experiment = self._experiment(experiment_id)
        with self._lock:
            judged = {
                pid
                for (exp, pid, annotator) in self._pref_effective
                if exp == experiment_id and annotator == annotator_id
            }
            counts: dict[str, int] = {pid: 0 for pid in experiment.pairs}
            for exp, pid, _annotator in self._pref_effective:
                if exp == experiment_id:
                    counts[pid] = counts.get(pid, 0) + 1
        remaining = [pid for pid in experiment.pairs if pid not in judged]
        if not remaining:
            return None
        best = min(remaining, key=lambda pid: (counts[pid], pid))
        return experiment.pairs[best]

    def submit_preference(
        self, experiment_id: str, pair_id: str, annotator_id: str, choice: str
    ) -> str:
        experiment = self._experiment(experiment_id)
        if pair_id not in experiment.pairs:
            raise UnknownPair(f"experiment {experiment_id!r} has no pair {pair_id!r}")
        if choice not in VALID_CHOICES:
            raise InvalidChoice(f"choice must be one of {VALID_CHOICES}, got {choice!r}")
        if not annotator_id.strip():
            raise InvalidChoice("annotator_id must be non-empty")
        key = (experiment_id, pair_id, annotator_id)
        with self._lock:
            prior = self._pref_effective.get(key)
            record = {
                "kind": "preference",
                "experiment_id": experiment_id,
                "pair_id": pair_id,
                "annotator_id": annotator_id,
                "choice": choice,
                "submitted_at": _now(),
                "supersedes": prior["record_id"] if prior else None,
            }
            return self._append(record)

    def results(self, experiment_id: str) -> dict:
        experiment = self._experiment(experiment_id)
        if experiment.key is None:
            raise MissingKey(f"experiment {experiment_id!r} has no unblinding key file")
        with self._lock:
            effective = [
                record
                for (exp, _pid, _annotator), record in self._pref_effective.items()
                if exp == experiment_id
            ]
        if not effective:
            raise NoRecords(f"experiment {experiment_id!r} has no submissions")
        systems = sorted({label for sides in experiment.key.values() for label in sides.values()})
        wins = {system: 0 for system in systems}
        ties = 0
        for record in effective:
            if record["choice"] == "tie":
                ties += 1
            else:
                system = experiment.key[record["pair_id"]][record["choice"]]
                wins[system] += 1
        system_a = systems[0]
        system_b = systems[1] if len(systems) > 1 else systems[0]
        tally = metrics.Tally(wins_a=wins[system_a], wins_b=wins[system_b], ties=ties)
        rates = metrics.preference_rates(tally)
        return {
            "experiment_id": experiment_id,
            "n_effective": len(effective),
            "wins": wins,
            "ties": ties,
            "rates": {
                system_a: rates.rate_a,
                system_b: rates.rate_b,
                "tie": rates.rate_tie,
            },
            "wilson95": {system_a: list(rates.wilson95_a)},
        }

    def export(self, experiment_id: str) -> dict:
        experiment = self._experiment(experiment_id)
        if experiment.key is None:
            raise MissingKey(f"experiment {experiment_id!r} has no unblinding key file")
        with self._lock:
            history = [
                record
                for records in self._pref_history.values()
                for record in records
                if record["experiment_id"] == experiment_id
            ]
        unblinded = []
        for record in sorted(history, key=lambda r: r["record_id"]):
            sides = experiment.key[record["pair_id"]]
            unblinded.append(
                {
                    **record,
                    "chosen_system": None if record["choice"] == "tie" else sides[record["choice"]],
                    "left_system": sides["left"],
                    "right_system": sides["right"],
                }
            )
        return {"experiment_id": experiment_id, "records": unblinded}

    # --- attribution workflow -----------------------------------------------------

    def attribution_task(self, dialogue_id: str) -> tuple[Dialogue, Summary]:
        if dialogue_id not in self.attribution_tasks or dialogue_id not in self.dialogues:
            raise UnknownDialogue(f"no attribution task for dialogue {dialogue_id!r}")
        return self.dialogues[dialogue_id], self.attribution_tasks[dialogue_id]

    def submit_attribution(
        self,
        dialogue_id: str,
        sentence_index: int,
        turn_indices: list[int],
        annotator_id: str,
    ) -> str:
        dialogue, summary = self.attribution_task(dialogue_id)
        if not 0 <= sentence_index < len(summary.sentences):
            raise InvalidTurnIndex(
                f"summary for {dialogue_id!r} has no sentence {sentence_index}"
            )
        for turn_index in turn_indices:
            if not 0 <= turn_index < len(dialogue.turns):
                raise InvalidTurnIndex(
                    f"dialogue {dialogue_id!r} has no turn {turn_index}"
                )
        key = (dialogue_id, sentence_index, annotator_id)
        with self._lock:
            prior = self._attr_effective.get(key)
            record = {
                "kind": "attribution",
                "dialogue_id": dialogue_id,
                "sentence_index": sentence_index,
                "turn_indices": sorted(set(turn_indices)),
                "annotator_id": annotator_id,
                "submitted_at": _now(),
                "supersedes": prior["record_id"] if prior else None,
            }
            return self._append(record)

    def attribution_records(self, dialogue_id: str, annotator_id: str) -> list[dict]:
        """Effective records for one annotator, for restoring UI state."""
        self.attribution_task(dialogue_id)  # raises UnknownDialogue
        with self._lock:
            records = [
                record
                for (did, _idx, annotator), record in self._attr_effective.items()
                if did == dialogue_id and annotator == annotator_id
            ]
        return sorted(records, key=lambda r: r["sentence_index"])

    def attribution_coverage(self, dialogue_id: str) -> float:
        """Coverage over effective records: labeled-with-turns / total sentences."""
        _dialogue, summary = self.attribution_task(dialogue_id)
        with self._lock:
            grounded = {
                sentence_index
                for (did, sentence_index, _annotator), record in self._attr_effective.items()
                if did == dialogue_id and record["turn_indices"]
            }
        if not summary.sentences:
            return 1.0
        return len(grounded) / len(summary.sentences)

    # --- audit helpers --------------------------------------------------------------

    def preference_history(
        self, experiment_id: str, pair_id: str, annotator_id: str
    ) -> list[dict]:
        with self._lock:
            return list(self._pref_history.get((experiment_id, pair_id, annotator_id), []))

    def effective_preferences(self, experiment_id: str) -> list[dict]:
        with self._lock:
            return [
                record
                for (exp, _pid, _annotator), record in self._pref_effective.items()
                if exp == experiment_id
            ]


def write_experiment(
    root: str | Path,
    experiment_id: str,
    pairs: list[BlindedPair],
    key: Mapping[str, Mapping[str, str]],
    dialogues: Mapping[str, Dialogue] | None = None,
) -> Path:
    """Lay out an experiment (and its dialogues) in a service store directory."""
    from .core import serialize_dialogue, serialize_summary

    root = Path(root)
    exp_dir = root / "experiments" / experiment_id
    exp_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "experiment_id": experiment_id,
        "pairs": [
            {
                "pair_id": p.pair_id,
                "dialogue_id": p.dialogue_id,
                "left": json.loads(serialize_summary(p.left)),
                "right": json.loads(serialize_summary(p.right)),
            }
            for p in pairs
        ],
    }
    (exp_dir / "pairs.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    (exp_dir / "key.json").write_text(
        json.dumps({"experiment_id": experiment_id, "pairs": dict(key)}, indent=2) + "\n",
        encoding="utf-8",
    )
    if dialogues:
        dialogues_dir = root / "dialogues"
        dialogues_dir.mkdir(parents=True, exist_ok=True)
        for dialogue in dialogues.values():
            (dialogues_dir / f"{dialogue.id}.jsonl").write_text(
                serialize_dialogue(dialogue), encoding="utf-8"
            )
    return exp_dir


class PreferenceBody(BaseModel):
    annotator_id: str
    choice: str


class AttributionBody(BaseModel):
    annotator_id: str
    turn_indices: list[int]


def build_app(store: ServiceStore, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="refine-loop annotation service")

    def _pair_payload(experiment_id: str, pair: BlindedPair, annotator_id: str) -> dict:
        dialogue = store.dialogues.get(pair.dialogue_id)
        done, total = store.progress(experiment_id, annotator_id)
        return {
            "status": "ok",
            "pair_id": pair.pair_id,
            "dialogue": _dialogue_payload(dialogue) if dialogue else {"id": pair.dialogue_id},
            "left": _summary_payload(pair.left),
            "right": _summary_payload(pair.right),
            "progress": {"done": done, "total": total},
        }

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.get("/experiments/{experiment_id}/next")
    def next_pair(experiment_id: str, annotator: str = Query(...)) -> dict:
        try:
            pair = store.next_pair(experiment_id, annotator)
        except UnknownExperiment as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if pair is None:
            done, total = store.progress(experiment_id, annotator)
            return {"status": NO_TASKS, "progress": {"done": done, "total": total}}
        return _pair_payload(experiment_id, pair, annotator)

    @app.post("/experiments/{experiment_id}/pairs/{pair_id}/preference")
    def submit_preference(experiment_id: str, pair_id: str, body: PreferenceBody) -> dict:
        try:
            record_id = store.submit_preference(
                experiment_id, pair_id, body.annotator_id, body.choice
            )
        except (UnknownExperiment, UnknownPair) as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except InvalidChoice as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        done, total = store.progress(experiment_id, body.annotator_id)
        return {"record_id": record_id, "progress": {"done": done, "total": total}}

    @app.get("/experiments/{experiment_id}/results")
    def results(experiment_id: str) -> dict:
        try:
            return store.results(experiment_id)
        except (UnknownExperiment, NoRecords) as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except MissingKey as exc:
            raise HTTPException(status_code=403, detail=str(exc))

    @app.get("/experiments/{experiment_id}/export")
    def export(experiment_id: str) -> dict:
        try:
            return store.export(experiment_id)
        except UnknownExperiment as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except MissingKey as exc:
            raise HTTPException(status_code=403, detail=str(exc))

    @app.get("/attribution/{dialogue_id}")
    def attribution_task(dialogue_id: str) -> dict:
        try:
            dialogue, summary = store.attribution_task(dialogue_id)
        except UnknownDialogue as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "dialogue": _dialogue_payload(dialogue),
            "summary": _summary_payload(summary),
        }

    @app.get("/attribution/{dialogue_id}/coverage")
    def attribution_coverage(dialogue_id: str) -> dict:
        try:
            coverage = store.attribution_coverage(dialogue_id)
        except UnknownDialogue as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {"dialogue_id": dialogue_id, "coverage": coverage}

    @app.get("/attribution/{dialogue_id}/records")
    def attribution_records(dialogue_id: str, annotator: str = Query(...)) -> dict:
        try:
            records = store.attribution_records(dialogue_id, annotator)
        except UnknownDialogue as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "records": [
                {"sentence_index": r["sentence_index"], "turn_indices": r["turn_indices"]}
                for r in records
            ]
        }

    @app.post("/attribution/{dialogue_id}/sentences/{sentence_index}")
    def submit_attribution(
        dialogue_id: str, sentence_index: int, body: AttributionBody
    ) -> dict:
        try:
            record_id = store.submit_attribution(
                dialogue_id, sentence_index, body.turn_indices, body.annotator_id
            )
        except UnknownDialogue as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except InvalidTurnIndex as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"record_id": record_id}

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app

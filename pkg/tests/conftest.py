from __future__ import annotations

import json
from importlib import resources

import pytest

from refine_loop.agents import PromptLibrary
from refine_loop.core import Dialogue, Origin, Summary, SummarySentence, parse_dialogue
from refine_loop.gateway import Gateway, ScriptEntry, ScriptedBackend, TraceLog


@pytest.fixture(scope="session")
def sample_dialogue() -> Dialogue:
    doc = (
        resources.files("refine_loop")
        .joinpath("data/sample_dialogue.jsonl")
        .read_text("utf-8")
    )
    return parse_dialogue(doc)


@pytest.fixture(scope="session")
def prompts() -> PromptLibrary:
    return PromptLibrary.default()


def make_summary(texts, dialogue_id="sample-support-call", origin=Origin.DRAFT, revision_round=0):
    return Summary(
        dialogue_id=dialogue_id,
        sentences=tuple(
            SummarySentence(index=i, text=t, origin=origin) for i, t in enumerate(texts)
        ),
        revision_round=revision_round,
    )


def sequence_script(*responses: str) -> ScriptedBackend:
    return ScriptedBackend(
        [ScriptEntry("sequence_position", str(i), r) for i, r in enumerate(responses)]
    )


def scripted_gateway(*responses: str) -> Gateway:
    return Gateway(backend=sequence_script(*responses), trace=TraceLog())


def feedback_json(items) -> str:
    return json.dumps(items)


def all_pass(n: int) -> str:
    return feedback_json(
        [{"sentence_index": i, "label": "pass", "explanation": ""} for i in range(n)]
    )

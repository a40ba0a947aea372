from __future__ import annotations

import json
import random

import pytest

from refine_loop.core import Dimension, Origin
from refine_loop.gateway import TraceLog
from refine_loop.pipeline import (
    DraftFailed,
    PipelineConfig,
    run_monolithic,
    run_pipeline,
)

from conftest import all_pass, scripted_gateway, sequence_script


DRAFT_TEXT = (
    "A developer contacted a team lead about a permission error. "
    "The issue had lasted two weeks. "
    "The developer was added to the reader group."
)


def _clean_round(n_sentences: int) -> list[str]:
    return [all_pass(n_sentences)] * 3


def _run(cfg, responses, dialogue, prompts):
    backend = sequence_script(*responses)
    trace = TraceLog()
    result = run_pipeline(dialogue, cfg, {cfg.backend_id: backend}, prompts, trace=trace)
    return result, trace


def test_clean_first_round_terminates_early(sample_dialogue, prompts):
    cfg = PipelineConfig(backend_id="scripted")
    responses = [DRAFT_TEXT, *_clean_round(3)]
    result, trace = _run(cfg, responses, sample_dialogue, prompts)
    assert result.rounds_executed == 1
    assert result.terminated_early
    assert result.final_summary.revision_round == 0
    assert [s.text for s in result.final_summary.sentences] == [
        "A developer contacted a team lead about a permission error.",
        "The issue had lasted two weeks.",
        "The developer was added to the reader group.",
    ]
    assert len(trace) == 1 + 3  # draft + three evaluators


def _dirty_then_clean_responses():
    fail_round = [
        json.dumps(
            [
                {"sentence_index": 0, "label": "pass", "explanation": ""},
                {"sentence_index": 1, "label": "fail", "explanation": "contradicts turn 7"},
                {"sentence_index": 2, "label": "pass", "explanation": ""},
            ]
        ),
        all_pass(3),
        all_pass(3),
    ]
    refine_response = json.dumps(
        {
            "edits": [
                {
                    "sentence_index": 1,
                    "action": "replace",
                    "text": "The issue had lasted about two days.",
                }
            ],
            "insertions": [],
        }
    )
    redundancy_response = json.dumps({"actions": []})
    return [DRAFT_TEXT, *fail_round, refine_response, redundancy_response, *_clean_round(3)]


def test_fail_then_clean_applies_edit(sample_dialogue, prompts):
    cfg = PipelineConfig(backend_id="scripted")
    result, trace = _run(cfg, _dirty_then_clean_responses(), sample_dialogue, prompts)
    assert result.rounds_executed == 2
    assert result.final_summary.sentences[1].text == "The issue had lasted about two days."
    assert result.final_summary.sentences[1].origin is Origin.REFINED
    assert result.final_summary.revision_round == 1
    assert len(trace) == 1 + (3 + 2) + 3


def test_default_round_budget_is_two():
    assert PipelineConfig().n_rounds == 2


def test_clean_round_runs_no_refine_or_redundancy(sample_dialogue, prompts):
    cfg = PipelineConfig(backend_id="scripted")
    responses = [DRAFT_TEXT, *_clean_round(3)]
    _, trace = _run(cfg, responses, sample_dialogue, prompts)
    roles = [e["agent_role"] for e in trace.entries]
    assert "refine" not in roles
    assert "redundancy" not in roles


def test_mask_excludes_evaluator_calls(sample_dialogue, prompts):
    cfg = PipelineConfig(
        backend_id="scripted",
        evaluator_mask=frozenset({Dimension.ACCURACY, Dimension.READABILITY}),
    )
    responses = [DRAFT_TEXT, all_pass(3), all_pass(3)]
    result, trace = _run(cfg, responses, sample_dialogue, prompts)
    roles = [e["agent_role"] for e in trace.entries]
    assert "eval_completeness" not in roles
    assert roles.count("eval_accuracy") == 1
    assert roles.count("eval_readability") == 1
    assert result.terminated_early
    report = result.per_round[0].report
    assert all(f.dimension is not Dimension.COMPLETENESS for f in report.feedback)


def test_trace_entries_carry_round_numbers(sample_dialogue, prompts):
    cfg = PipelineConfig(backend_id="scripted")
    _, trace = _run(cfg, _dirty_then_clean_responses(), sample_dialogue, prompts)
    for entry in trace.entries:
        assert "round" in entry
    rounds = {e["agent_role"]: e["round"] for e in trace.entries}
    assert rounds["draft"] == 0
    assert rounds["refine"] == 1


def test_draft_failure_wrapped(sample_dialogue, prompts):
    cfg = PipelineConfig(backend_id="scripted")
    backend = sequence_script("")
    with pytest.raises(DraftFailed):
        run_pipeline(sample_dialogue, cfg, {"scripted": backend}, prompts)


def test_termination_bound_random_schedules(sample_dialogue, prompts):
    """Random fail/clean schedules always halt within the call budget."""
    rng = random.Random(42)
    for _ in range(25):
        n_rounds = rng.randint(1, 4)
        cfg = PipelineConfig(n_rounds=n_rounds, backend_id="scripted")
        responses = [DRAFT_TEXT]
        schedule = [rng.random() < 0.5 for _ in range(n_rounds)]
        for dirty in schedule:
            if dirty:
                responses += [
                    json.dumps(
                        [
                            {"sentence_index": 0, "label": "fail", "explanation": "x"},
                            {"sentence_index": 1, "label": "pass", "explanation": ""},
                            {"sentence_index": 2, "label": "pass", "explanation": ""},
                        ]
                    ),
                    all_pass(3),
                    all_pass(3),
                    json.dumps(
                        {
                            "edits": [
                                {"sentence_index": 0, "action": "replace", "text": "Fixed."}
                            ],
                            "insertions": [],
                        }
                    ),
                    json.dumps({"actions": []}),
                ]
            else:
                responses += _clean_round(3)
                break
        result, trace = _run(cfg, responses, sample_dialogue, prompts)
        assert result.rounds_executed <= n_rounds
        assert len(trace) <= 1 + n_rounds * (3 + 2)
        if result.terminated_early:
            assert result.per_round[-1].report.is_clean
        first_clean = next((i for i, dirty in enumerate(schedule) if not dirty), None)
        if first_clean is not None:
            assert result.rounds_executed == first_clean + 1


def test_monolithic_three_sentences(sample_dialogue, prompts):
    gateway = scripted_gateway("S one. S two. S three.")
    summary = run_monolithic(sample_dialogue, prompts.get("draft"), gateway)
    assert len(summary.sentences) == 3
    assert len(gateway.trace) == 1


def test_monolithic_empty_response(sample_dialogue, prompts):
    from refine_loop.agents import EmptyDraft

    gateway = scripted_gateway("")
    with pytest.raises(EmptyDraft):
        run_monolithic(sample_dialogue, prompts.get("draft"), gateway)


def test_result_bundle_layout(tmp_path, sample_dialogue, prompts):
    from refine_loop.pipeline import write_result_bundle

    cfg = PipelineConfig(backend_id="scripted")
    result, _ = _run(cfg, _dirty_then_clean_responses(), sample_dialogue, prompts)
    out = write_result_bundle(result, tmp_path / "bundle")
    assert (out / "final_summary.json").is_file()
    assert (out / "rounds" / "round_1_report.json").is_file()
    assert (out / "rounds" / "round_1_refined.json").is_file()
    assert (out / "trace.jsonl").is_file()
    run_info = json.loads((out / "run.json").read_text())
    assert run_info["rounds_executed"] == 2

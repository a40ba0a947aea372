from __future__ import annotations

import json

import pytest

from refine_loop.core import Dialogue, Dimension, Summary, Turn, serialize_summary
from refine_loop.gateway import Gateway, ScriptEntry, ScriptedBackend, TraceLog
from refine_loop.harness import (
    ErrorKind,
    ErrorManifest,
    ErrorRule,
    InsufficientGolds,
    KeyMismatch,
    MissingSentence,
    NoiseSpec,
    RuleInapplicable,
    TargetUnreachable,
    build_metaeval_set,
    CalibrationExample,
    constant_judge,
    default_rules,
    derive_seed,
    gold_scores_from_manifest,
    inject_asr_noise,
    inject_errors,
    make_ab_pairs,
    mask_label,
    oracle_judge,
    run_ablation,
    run_backend_matrix,
    run_calibration,
    run_metaeval,
)
from refine_loop.pipeline import PipelineConfig

from conftest import make_summary


def _gold_summary(dialogue_id="gold-0"):
    return make_summary(
        [
            "Riley contacted Morgan about a billing question.",
            "Morgan verified the account before making changes.",
            "The disputed charge was reversed.",
            "Riley agreed to monitor the next statement.",
        ],
        dialogue_id=dialogue_id,
    )


def _gold_dialogue(dialogue_id="gold-0"):
    lines = [
        ("Riley", "I have a question about a charge on my bill."),
        ("Morgan", "Happy to help, let me verify your account first."),
        ("Riley", "Verified and ready."),
        ("Morgan", "I see the charge and I am reversing it now."),
        ("Riley", "Thanks, I will monitor the next statement."),
    ]
    return Dialogue(
        id=dialogue_id,
        turns=tuple(Turn(index=i, speaker=s, text=t) for i, (s, t) in enumerate(lines)),
    )


# --- error injection ------------------------------------------------------------


def test_duplicate_sentence_rule():
    gold = _gold_summary()
    perturbed, manifest = inject_errors(
        gold, _gold_dialogue(), [ErrorRule(ErrorKind.DUPLICATE_SENTENCE)], count=1, seed=5
    )
    assert len(perturbed.sentences) == len(gold.sentences) + 1
    assert manifest.applied[0].kind is ErrorKind.DUPLICATE_SENTENCE
    assert manifest.applied[0].target_dimension is Dimension.READABILITY
    texts = [s.text for s in perturbed.sentences]
    assert len(set(texts)) == len(texts) - 1  # exactly one duplicate


def test_negation_flip_contradicts():
    gold = _gold_summary()
    perturbed, manifest = inject_errors(
        gold, _gold_dialogue(), [ErrorRule(ErrorKind.NEGATION_FLIP)], count=1, seed=3
    )
    assert manifest.applied[0].target_dimension is Dimension.ACCURACY
    changed = [
        (old.text, new.text)
        for old, new in zip(gold.sentences, perturbed.sentences)
        if old.text != new.text
    ]
    assert len(changed) == 1
    assert "not" in changed[0][1]


def test_drop_key_fact_requires_two_sentences():
    single = make_summary(["Only one sentence."])
    with pytest.raises(RuleInapplicable):
        inject_errors(
            single, _gold_dialogue(), [ErrorRule(ErrorKind.DROP_KEY_FACT)], count=2, seed=1
        )


def test_inapplicable_rule_resampled():
    single = make_summary(["Riley helped."])
    perturbed, manifest = inject_errors(
        single,
        _gold_dialogue(),
        [ErrorRule(ErrorKind.DROP_KEY_FACT), ErrorRule(ErrorKind.DUPLICATE_SENTENCE)],
        count=1,
        seed=0,
    )
    assert manifest.applied[0].kind is ErrorKind.DUPLICATE_SENTENCE


def test_injection_deterministic():
    gold = _gold_summary()
    a = inject_errors(gold, _gold_dialogue(), default_rules(), count=3, seed=99)
    b = inject_errors(gold, _gold_dialogue(), default_rules(), count=3, seed=99)
    assert serialize_summary(a[0]) == serialize_summary(b[0])
    assert a[1] == b[1]


def test_entity_swap_changes_name():
    gold = _gold_summary()
    perturbed, manifest = inject_errors(
        gold, _gold_dialogue(), [ErrorRule(ErrorKind.ENTITY_SWAP)], count=1, seed=2
    )
    assert manifest.applied[0].target_dimension is Dimension.ACCURACY
    assert [s.text for s in perturbed.sentences] != [s.text for s in gold.sentences]


def test_count_bounds():
    with pytest.raises(ValueError):
        inject_errors(_gold_summary(), _gold_dialogue(), default_rules(), count=0, seed=1)
    with pytest.raises(ValueError):
        inject_errors(_gold_summary(), _gold_dialogue(), default_rules(), count=4, seed=1)


# --- gold score decrement ----------------------------------------------------------


def test_decrement_rule_two_accuracy_errors():
    from refine_loop.harness import ErrorApplication

    manifest = ErrorManifest(
        applied=(
            ErrorApplication(ErrorKind.NEGATION_FLIP, 0, "x"),
            ErrorApplication(ErrorKind.ENTITY_SWAP, 1, "y"),
        ),
        seed=0,
    )
    scores = gold_scores_from_manifest(manifest)
    assert scores[Dimension.ACCURACY] == 3
    assert scores[Dimension.COMPLETENESS] == 5
    assert scores[Dimension.READABILITY] == 5


def test_decrement_floor_is_one():
    from refine_loop.harness import ErrorApplication

    manifest = ErrorManifest(
        applied=tuple(
            ErrorApplication(ErrorKind.FABRICATED_SENTENCE, 0, "x") for _ in range(3)
        )
        * 3,  # 9 accuracy errors
        seed=0,
    )
    assert gold_scores_from_manifest(manifest)[Dimension.ACCURACY] == 1


# --- metaeval set ------------------------------------------------------------------


def _golds(n):
    return [(_gold_dialogue(f"gold-{i}"), _gold_summary(f"gold-{i}")) for i in range(n)]


def test_metaeval_set_splits_42_into_21_21():
    dataset = build_metaeval_set(_golds(42), perturb_fraction=0.5, seed=7)
    perturbed = [inst for inst in dataset if inst.manifest is not None]
    perfect = [inst for inst in dataset if inst.manifest is None]
    assert len(perturbed) == 21
    assert len(perfect) == 21
    for inst in perfect:
        assert all(v == 5 for v in inst.gold_scores.values())
    for inst in perturbed:
        assert 1 <= len(inst.manifest.applied) <= 3
        targeted = {a.target_dimension for a in inst.manifest.applied}
        for dim in Dimension:
            if dim in targeted:
                assert inst.gold_scores[dim] < 5
            else:
                assert inst.gold_scores[dim] == 5


def test_metaeval_fraction_zero_all_perfect():
    dataset = build_metaeval_set(_golds(4), perturb_fraction=0.0, seed=1)
    assert all(inst.manifest is None for inst in dataset)
    assert all(v == 5 for inst in dataset for v in inst.gold_scores.values())


def test_metaeval_requires_two_golds():
    with pytest.raises(InsufficientGolds):
        build_metaeval_set(_golds(1), seed=0)


def test_metaeval_deterministic():
    a = build_metaeval_set(_golds(6), seed=13)
    b = build_metaeval_set(_golds(6), seed=13)
    assert [serialize_summary(i.summary) for i in a] == [
        serialize_summary(i.summary) for i in b
    ]


def test_derive_seed_stable():
    assert derive_seed(7, "gold-1") == derive_seed(7, "gold-1")
    assert derive_seed(7, "gold-1") != derive_seed(7, "gold-2")


# --- metaeval run ---------------------------------------------------------------------


def test_oracle_judge_gives_zero_mae():
    dataset = build_metaeval_set(_golds(10), seed=3)
    report = run_metaeval(dataset, oracle_judge)
    assert all(v == 0.0 for v in report.maes.values())
    assert report.average == 0.0


def test_constant_judge_on_perfect_set_gives_two():
    dataset = build_metaeval_set(_golds(6), perturb_fraction=0.0, seed=3)
    report = run_metaeval(dataset, constant_judge(3))
    assert all(v == pytest.approx(2.0) for v in report.maes.values())


def test_report_rows_layout():
    from refine_loop.harness import MetaevalReport

    report = MetaevalReport(
        maes={
            Dimension.ACCURACY: 0.28,
            Dimension.COMPLETENESS: 0.58,
            Dimension.READABILITY: 0.56,
        }
    )
    rows = report.rows()
    assert [label for label, _ in rows] == [
        "Accuracy",
        "Completeness",
        "Readability",
        "Average",
    ]
    assert rows[-1][1] == pytest.approx((0.28 + 0.58 + 0.56) / 3)
    assert f"{rows[-1][1]:.2f}" == "0.47"
    assert "0.47" in report.to_text()


def test_metaeval_parallel_judging_matches_serial():
    dataset = build_metaeval_set(_golds(8), seed=5)
    serial = run_metaeval(dataset, oracle_judge, jobs=1)
    parallel = run_metaeval(dataset, oracle_judge, jobs=4)
    assert serial == parallel


# --- calibration -------------------------------------------------------------------------


def _calibration_setup():
    dialogue = _gold_dialogue("cal-0")
    summary = make_summary(
        ["Riley reported a billing problem.", "The weather was discussed at length."],
        dialogue_id="cal-0",
    )
    corpus = {"cal-0": (dialogue, summary)}
    examples = [
        CalibrationExample("cal-0", 0, Dimension.COMPLETENESS, "pass"),
        CalibrationExample("cal-0", 1, Dimension.COMPLETENESS, "fail"),
    ]
    return corpus, examples


def _evaluator_gateway(payload):
    backend = ScriptedBackend([ScriptEntry("sequence_position", "0", json.dumps(payload))])
    return Gateway(backend=backend, trace=TraceLog())


def test_calibration_perfect_evaluator(prompts):
    corpus, examples = _calibration_setup()
    payload = [
        {"sentence_index": 0, "label": "pass", "explanation": ""},
        {"sentence_index": 1, "label": "fail", "explanation": "small talk"},
    ]
    result = run_calibration(
        examples,
        Dimension.COMPLETENESS,
        prompts.get("eval_completeness"),
        _evaluator_gateway(payload),
        corpus,
    )
    assert result.accuracy == 1.0


def test_calibration_half_correct(prompts):
    corpus, examples = _calibration_setup()
    payload = [
        {"sentence_index": 0, "label": "pass", "explanation": ""},
        {"sentence_index": 1, "label": "pass", "explanation": ""},
    ]
    result = run_calibration(
        examples,
        Dimension.COMPLETENESS,
        prompts.get("eval_completeness"),
        _evaluator_gateway(payload),
        corpus,
    )
    assert result.accuracy == 0.5


def test_calibration_missing_sentence(prompts):
    corpus, _ = _calibration_setup()
    examples = [CalibrationExample("cal-0", 9, Dimension.COMPLETENESS, "pass")]
    payload = [{"sentence_index": 0, "label": "pass", "explanation": ""}]
    with pytest.raises(MissingSentence):
        run_calibration(
            examples,
            Dimension.COMPLETENESS,
            prompts.get("eval_completeness"),
            _evaluator_gateway(payload),
            corpus,
        )


# --- noise injection ----------------------------------------------------------------------


def _long_dialogue(n_turns=60, words_per_turn=10):
    turns = []
    for i in range(n_turns):
        speaker = "Agent" if i % 2 == 0 else "Caller"
        words = [f"word{i}x{j}" for j in range(words_per_turn)]
        turns.append(Turn(index=i, speaker=speaker, text=" ".join(words)))
    return Dialogue(id="long", turns=tuple(turns))


def test_noise_target_zero_is_identity(sample_dialogue):
    spec = NoiseSpec(target_wer=0.0, disfluency_rate=0.0, channel_merge=False, seed=1)
    noisy, achieved = inject_asr_noise(sample_dialogue, spec)
    assert noisy == sample_dialogue
    assert achieved == 0.0


def test_noise_hits_paper_target_rate():
    dialogue = _long_dialogue()
    for seed in (0, 1, 2):
        noisy, achieved = inject_asr_noise(dialogue, NoiseSpec(target_wer=0.134, seed=seed))
        assert 0.124 <= achieved <= 0.144
        assert noisy.id == dialogue.id


def test_noise_deterministic():
    dialogue = _long_dialogue()
    spec = NoiseSpec(target_wer=0.2, seed=11)
    a, rate_a = inject_asr_noise(dialogue, spec)
    b, rate_b = inject_asr_noise(dialogue, spec)
    assert a == b
    assert rate_a == rate_b


def test_noise_preserves_structure_without_merge():
    dialogue = _long_dialogue()
    noisy, _ = inject_asr_noise(dialogue, NoiseSpec(target_wer=0.1, seed=4))
    assert len(noisy.turns) == len(dialogue.turns)
    assert noisy.speakers == dialogue.speakers


def test_noise_disfluencies_inserted():
    dialogue = _long_dialogue(n_turns=20)
    spec = NoiseSpec(target_wer=0.0, disfluency_rate=1.0, seed=9)
    noisy, achieved = inject_asr_noise(dialogue, spec)
    assert achieved == 0.0
    fillers = sum(
        1
        for turn in noisy.turns
        for word in turn.text.split()
        if word in ("um", "ah", "[laughter]")
    )
    assert fillers == 20  # one per turn at rate 1.0


def test_forced_channel_merge_on_two_turns():
    dialogue = Dialogue(
        id="two",
        turns=(
            Turn(0, "A", "first part here"),
            Turn(1, "B", "second part here"),
        ),
    )
    spec = NoiseSpec(target_wer=0.0, channel_merge=True, merge_probability=1.0, seed=0)
    noisy, _ = inject_asr_noise(dialogue, spec)
    assert len(noisy.turns) == 1
    assert noisy.turns[0].speaker == "A"
    assert noisy.turns[0].text == "first part here second part here"


def test_noise_target_unreachable_on_short_dialogue():
    # 10 words: the nearest achievable rates are 0.1 and 0.2, both > 0.01 away.
    dialogue = Dialogue(
        id="short",
        turns=(Turn(0, "A", "one two three four five six seven eight nine ten"),),
    )
    with pytest.raises(TargetUnreachable):
        inject_asr_noise(dialogue, NoiseSpec(target_wer=0.134, seed=0))


# --- A/B pairs -------------------------------------------------------------------------------


def _system_outputs(n):
    a = {f"d{i:03d}": make_summary([f"System A summary {i}."], f"d{i:03d}") for i in range(n)}
    b = {f"d{i:03d}": make_summary([f"System B summary {i}."], f"d{i:03d}") for i in range(n)}
    return a, b


def test_ab_pairs_exact_balance_fifty():
    a, b = _system_outputs(50)
    pairs, key = make_ab_pairs(a, b, seed=21)
    a_first = sum(1 for p in pairs if key[p.pair_id]["left"] == "A")
    assert a_first == 25
    assert len(pairs) == 50


def test_ab_pairs_balance_odd():
    a, b = _system_outputs(7)
    pairs, key = make_ab_pairs(a, b, seed=2)
    a_first = sum(1 for p in pairs if key[p.pair_id]["left"] == "A")
    assert a_first == 4  # ceil(7/2)


def test_ab_pairs_deterministic():
    a, b = _system_outputs(10)
    pairs1, key1 = make_ab_pairs(a, b, seed=5)
    pairs2, key2 = make_ab_pairs(a, b, seed=5)
    assert key1 == key2
    assert [(p.pair_id, p.left.sentences[0].text) for p in pairs1] == [
        (p.pair_id, p.left.sentences[0].text) for p in pairs2
    ]


def test_ab_pairs_key_reconstructs_assignment():
    a, b = _system_outputs(12)
    pairs, key = make_ab_pairs(a, b, seed=3)
    for pair in pairs:
        sides = key[pair.pair_id]
        left_is_a = pair.left.sentences[0].text.startswith("System A")
        assert sides["left"] == ("A" if left_is_a else "B")
        assert sides["right"] == ("B" if left_is_a else "A")


def test_ab_pairs_key_mismatch():
    a, b = _system_outputs(3)
    del b["d000"]
    with pytest.raises(KeyMismatch):
        make_ab_pairs(a, b, seed=0)


# --- ablation and backend matrix -----------------------------------------------------------


DRAFT_TEXT = (
    "A developer contacted a team lead about a permission error. "
    "The issue had lasted two weeks. "
    "The developer was added to the reader group."
)

ACCURACY_FAIL = json.dumps(
    [
        {"sentence_index": 0, "label": "pass", "explanation": ""},
        {"sentence_index": 1, "label": "fail", "explanation": "wrong duration"},
        {"sentence_index": 2, "label": "pass", "explanation": ""},
    ]
)
ALL_PASS_3 = json.dumps(
    [{"sentence_index": i, "label": "pass", "explanation": ""} for i in range(3)]
)
REFINE_EDIT = json.dumps(
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
JUDGE_SCORE = json.dumps(
    {
        "accuracy": 4,
        "completeness": 4,
        "readability": 5,
        "accuracy_explanation": "",
        "completeness_explanation": "",
        "readability_explanation": "",
    }
)


def _content_keyed_backend():
    """Responses keyed on role markers in the system prompts; the accuracy
    evaluator always fails sentence 1, everything else is clean."""
    return ScriptedBackend(
        [
            ScriptEntry("contains_substring", "You are a summarization assistant", DRAFT_TEXT),
            ScriptEntry("contains_substring", "accuracy evaluator", ACCURACY_FAIL),
            ScriptEntry("contains_substring", "completeness evaluator", ALL_PASS_3),
            ScriptEntry("contains_substring", "readability evaluator", ALL_PASS_3),
            ScriptEntry("contains_substring", "refinement editor", REFINE_EDIT),
            ScriptEntry("contains_substring", "redundancy checker", json.dumps({"actions": []})),
            ScriptEntry("contains_substring", "grading a dialogue summary", JUDGE_SCORE),
        ],
        backend_id="scenario",
    )


def _judge(prompts, backend):
    from refine_loop.autoeval import judge_summary

    template = prompts.get("judge_score")

    def judge(dialogue, summary):
        gateway = Gateway(backend=backend, trace=TraceLog())
        return judge_summary(dialogue, summary, template, gateway, k=2)

    return judge


ALL_MASKS = [
    frozenset(Dimension),
    frozenset({Dimension.COMPLETENESS, Dimension.READABILITY}),  # -accuracy
    frozenset({Dimension.ACCURACY, Dimension.READABILITY}),  # -completeness
    frozenset({Dimension.ACCURACY, Dimension.COMPLETENESS}),  # -readability
]


def test_ablation_shape_and_call_counts(sample_dialogue, prompts):
    backend = _content_keyed_backend()
    cfg = PipelineConfig(backend_id="scenario", n_rounds=2)
    report = run_ablation(
        [sample_dialogue], cfg, ALL_MASKS, _judge(prompts, backend),
        {"scenario": backend}, prompts,
    )
    assert len(report.table.rows) == 4
    for row in report.table.rows:
        assert set(row.cells) == set(Dimension)
    labels = [row.label for row in report.table.rows]
    assert labels == ["full", "-accuracy", "-completeness", "-readability"]
    # Closed form: 1 draft + per dirty round (|mask| + refine + redundancy).
    # The accuracy evaluator always fails, so masks containing it run both
    # rounds fully; the -accuracy mask is clean in round 1.
    assert report.llm_calls["full"][sample_dialogue.id] == 1 + (3 + 2) + (3 + 2)
    assert report.llm_calls["-accuracy"][sample_dialogue.id] == 1 + 2
    assert report.llm_calls["-completeness"][sample_dialogue.id] == 1 + (2 + 2) + (2 + 2)
    assert report.llm_calls["-readability"][sample_dialogue.id] == 1 + (2 + 2) + (2 + 2)


def test_ablation_masked_dimension_never_called(sample_dialogue, prompts):
    backend = _content_keyed_backend()
    cfg = PipelineConfig(backend_id="scenario", n_rounds=2)
    trace = TraceLog()
    from refine_loop.pipeline import run_pipeline
    from dataclasses import replace as dc_replace

    run_pipeline(
        sample_dialogue,
        dc_replace(cfg, evaluator_mask=frozenset({Dimension.COMPLETENESS, Dimension.READABILITY})),
        {"scenario": backend},
        prompts,
        trace=trace,
    )
    assert all(e["agent_role"] != "eval_accuracy" for e in trace.entries)


def test_ablation_without_accuracy_keeps_draft(sample_dialogue, prompts):
    """When only the accuracy evaluator ever fails, removing it leaves drafts."""
    backend = _content_keyed_backend()
    cfg = PipelineConfig(backend_id="scenario", n_rounds=2)
    from refine_loop.pipeline import run_pipeline
    from dataclasses import replace as dc_replace

    result = run_pipeline(
        sample_dialogue,
        dc_replace(cfg, evaluator_mask=frozenset({Dimension.COMPLETENESS, Dimension.READABILITY})),
        {"scenario": backend},
        prompts,
    )
    assert result.terminated_early
    assert [s.text for s in result.final_summary.sentences] == [
        "A developer contacted a team lead about a permission error.",
        "The issue had lasted two weeks.",
        "The developer was added to the reader group.",
    ]
    assert result.final_summary.revision_round == 0


def test_ablation_requires_full_mask(sample_dialogue, prompts):
    backend = _content_keyed_backend()
    cfg = PipelineConfig(backend_id="scenario")
    with pytest.raises(ValueError):
        run_ablation(
            [sample_dialogue], cfg, ALL_MASKS[1:], _judge(prompts, backend),
            {"scenario": backend}, prompts,
        )


def test_mask_labels():
    assert mask_label(frozenset(Dimension)) == "full"
    assert mask_label(frozenset({Dimension.COMPLETENESS, Dimension.READABILITY})) == "-accuracy"


def test_backend_matrix_identical_entries_identical_rows(sample_dialogue, prompts):
    backend = _content_keyed_backend()
    cfg = PipelineConfig(backend_id="scenario", n_rounds=1)
    table = run_backend_matrix(
        [sample_dialogue],
        cfg,
        [("scenario", None), ("scenario", None)],
        _judge(prompts, backend),
        {"scenario": backend},
        prompts,
    )
    assert len(table.rows) == 2
    assert table.rows[0].cells == table.rows[1].cells
    assert table.rows[0].label == "scenario"


def test_backend_matrix_requires_two_entries(sample_dialogue, prompts):
    backend = _content_keyed_backend()
    cfg = PipelineConfig(backend_id="scenario")
    with pytest.raises(ValueError):
        run_backend_matrix(
            [sample_dialogue], cfg, [("scenario", None)],
            _judge(prompts, backend), {"scenario": backend}, prompts,
        )


def test_backend_matrix_reasoning_labels(sample_dialogue, prompts):
    backend = _content_keyed_backend()
    cfg = PipelineConfig(backend_id="scenario", n_rounds=1)
    table = run_backend_matrix(
        [sample_dialogue],
        cfg,
        [("scenario", "none"), ("scenario", "low"), ("scenario", "medium")],
        _judge(prompts, backend),
        {"scenario": backend},
        prompts,
    )
    assert [row.label for row in table.rows] == [
        "scenario (none reasoning)",
        "scenario (low reasoning)",
        "scenario (medium reasoning)",
    ]

"""Command-line entry point exposing every workflow.

Exit codes: 0 success, 1 domain error, 2 usage error.  Every command that
takes --out writes a run manifest there, on success and on failure alike.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

from . import agents, autoeval, harness, metrics, pipeline, service
from .agents import PromptLibrary
from .core import (
    Dialogue,
    Dimension,
    RefineLoopError,
    Summary,
    parse_dialogue,
    parse_summary,
    serialize_dialogue,
    serialize_summary,
)
from .gateway import (
    Backend,
    Gateway,
    HttpBackend,
    RequestDefaults,
    RetryPolicy,
    TraceLog,
    load_script,
)
from .pipeline import PipelineConfig


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    prompt_versions: dict = field(default_factory=dict)
    backend_ids: list = field(default_factory=list)
    started_at: str = ""
    finished_at: str = ""
    status: str = "running"
    outputs: list = field(default_factory=list)

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "manifest.json").write_text(
            json.dumps(self.__dict__, indent=2, default=str) + "\n", encoding="utf-8"
        )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def _build_backend(args, config: dict) -> tuple[str, Backend]:
    """Backend from flags, falling back to the config file registry."""
    name = args.backend or config.get("backend", {}).get("kind", "scripted")
    if name == "scripted":
        script = getattr(args, "script", None) or config.get("backend", {}).get("script")
        if not script:
            raise RefineLoopError("the scripted backend needs --script")
        backend = load_script(script)
        return backend.backend_id, backend
    if name == "http":
        http_cfg = config.get("backend", {})
        base_url = http_cfg.get("base_url")
        model = http_cfg.get("model", "")
        if not base_url:
            raise RefineLoopError("the http backend needs a config file with backend.base_url")
        backend = HttpBackend(
            base_url=base_url,
            model_id=model,
            reasoning_field=http_cfg.get("reasoning_field", "reasoning_effort"),
        )
        return backend.backend_id, backend
    raise RefineLoopError(f"unknown backend {name!r} (expected scripted or http)")


def _prompts(args, config: dict) -> PromptLibrary:
    prompts_dir = getattr(args, "prompts_dir", None) or config.get("prompts_dir")
    if prompts_dir:
        return PromptLibrary.from_dir(prompts_dir)
    return PromptLibrary.default()


def _parse_mask(text: str | None) -> frozenset[Dimension]:
    """"full", "-readability", or an explicit list like "accuracy,completeness"."""
    if not text or text == "full":
        return frozenset(Dimension)
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    try:
        if all(t.startswith("-") for t in tokens):
            mask = set(Dimension)
            for token in tokens:
                mask.discard(Dimension(token[1:]))
        else:
            mask = {Dimension(t) for t in tokens}
    except ValueError as exc:
        raise RefineLoopError(f"bad evaluator mask {text!r}: {exc}") from exc
    if not mask:
        raise RefineLoopError(f"mask {text!r} removes every evaluator")
    return frozenset(mask)


def _pipeline_config(args, config: dict, backend_id: str) -> PipelineConfig:
    return PipelineConfig(
        n_rounds=args.n_rounds or config.get("n_rounds", 2),
        backend_id=backend_id,
        prompt_versions=config.get("prompt_versions", {}),
        temperatures=config.get("temperatures", {}),
        evaluator_mask=_parse_mask(getattr(args, "mask", None) or config.get("mask")),
    )


def _read_dialogue(path: str) -> Dialogue:
    return parse_dialogue(Path(path).read_text("utf-8"))


def _read_corpus(directory: str) -> list[Dialogue]:
    paths = sorted(Path(directory).glob("*.jsonl"))
    if not paths:
        raise RefineLoopError(f"no *.jsonl transcripts under {directory}")
    return [parse_dialogue(p.read_text("utf-8")) for p in paths]


def _read_gold_pairs(directory: str) -> list[tuple[Dialogue, Summary]]:
    """Gold pairs: <stem>.dialogue.jsonl next to <stem>.summary.json."""
    pairs = []
    for dialogue_path in sorted(Path(directory).glob("*.dialogue.jsonl")):
        stem = dialogue_path.name[: -len(".dialogue.jsonl")]
        summary_path = dialogue_path.with_name(f"{stem}.summary.json")
        if not summary_path.is_file():
            raise RefineLoopError(f"missing summary for gold dialogue {dialogue_path.name}")
        pairs.append(
            (
                parse_dialogue(dialogue_path.read_text("utf-8")),
                parse_summary(summary_path.read_text("utf-8")),
            )
        )
    if not pairs:
        raise RefineLoopError(f"no gold *.dialogue.jsonl pairs under {directory}")
    return pairs


def _score_table_payload(table: harness.ScoreTable) -> dict:
    return {
        "rows": [
            {
                "label": row.label,
                "scores": {
                    dim.value: {"mean": cell.mean, "std": cell.std}
                    for dim, cell in row.cells.items()
                },
            }
            for row in table.rows
        ]
    }


def _make_judge(args, config: dict, prompts: PromptLibrary, backend: Backend):
    """LLM judge closure for ablation/matrix commands."""
    template = prompts.get("judge_score")
    k = args.judge_runs or 3

    def judge(dialogue: Dialogue, summary: Summary) -> autoeval.DimensionScores:
        gateway = Gateway(backend=backend, trace=TraceLog(), defaults=RequestDefaults(seed=args.seed))
        return autoeval.judge_summary(dialogue, summary, template, gateway, k=k)

    return judge


# --- subcommands -------------------------------------------------------------------


def cmd_summarize(args, config: dict, manifest: RunManifest) -> int:
    dialogue = _read_dialogue(args.dialogue)
    prompts = _prompts(args, config)
    if args.dry_run:
        cfg = _pipeline_config(args, config, backend_id="dry-run")
        for role in ("draft", "refine", "redundancy", *agents.EVALUATOR_ROLE.values()):
            prompts.get(role, cfg.prompt_versions.get(role))
        print("dry run ok: config and prompts validated, no backend calls made")
        return 0
    backend_id, backend = _build_backend(args, config)
    manifest.backend_ids.append(backend_id)
    cfg = _pipeline_config(args, config, backend_id)
    trace = TraceLog()
    if args.monolithic:
        gateway = Gateway(backend=backend, trace=trace, defaults=RequestDefaults(seed=args.seed))
        summary = pipeline.run_monolithic(dialogue, prompts.get("draft"), gateway)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "final_summary.json").write_text(serialize_summary(summary), encoding="utf-8")
        with open(out / "trace.jsonl", "w", encoding="utf-8") as handle:
            for entry in trace.entries:
                handle.write(json.dumps(entry) + "\n")
        manifest.outputs.append(str(out / "final_summary.json"))
        print(f"monolithic summary: {len(summary.sentences)} sentences, 1 llm call")
        return 0
    result = pipeline.run_pipeline(
        dialogue, cfg, {backend_id: backend}, prompts,
        trace=trace, defaults=RequestDefaults(seed=args.seed),
    )
    bundle = pipeline.write_result_bundle(result, args.out)
    manifest.outputs.append(str(bundle))
    print(
        f"summary for {dialogue.id}: {len(result.final_summary.sentences)} sentences, "
        f"{result.rounds_executed} rounds, {len(trace)} llm calls"
        + (" (terminated early)" if result.terminated_early else "")
    )
    for sentence in result.final_summary.sentences:
        print(f"  {sentence.index}. {sentence.text}")
    return 0


def cmd_judge(args, config: dict, manifest: RunManifest) -> int:
    dialogue = _read_dialogue(args.dialogue)
    summary = parse_summary(Path(args.summary).read_text("utf-8"))
    prompts = _prompts(args, config)
    if args.dry_run:
        prompts.get("judge_score")
        print("dry run ok")
        return 0
    backend_id, backend = _build_backend(args, config)
    manifest.backend_ids.append(backend_id)
    gateway = Gateway(backend=backend, trace=TraceLog(), defaults=RequestDefaults(seed=args.seed))
    scores = autoeval.judge_summary(
        dialogue, summary, prompts.get("judge_score"), gateway, k=args.judge_runs or 3
    )
    payload = {
        dim.value: {
            "mean": stat.mean,
            "std": stat.std,
            "runs": list(stat.runs),
            "explanations": list(scores.explanations[dim]),
        }
        for dim, stat in scores.per_dimension.items()
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "judge_report.json").write_text(json.dumps(payload, indent=2) + "\n", "utf-8")
        manifest.outputs.append(str(out / "judge_report.json"))
    for dim in Dimension:
        stat = scores.per_dimension[dim]
        print(f"{dim.value:<14}{stat.mean:.2f} ± {stat.std:.2f}  runs={list(stat.runs)}")
    return 0


def cmd_metaeval(args, config: dict, manifest: RunManifest) -> int:
    golds = _read_gold_pairs(args.golds)
    if args.dry_run:
        print(f"dry run ok: {len(golds)} gold pairs loaded")
        return 0
    dataset = harness.build_metaeval_set(
        golds, perturb_fraction=args.perturb_fraction, seed=args.seed or 0
    )
    if args.judge == "scripted-oracle":
        judge = harness.oracle_judge
    elif args.judge == "constant-3":
        judge = harness.constant_judge(3)
    else:
        prompts = _prompts(args, config)
        backend_id, backend = _build_backend(args, config)
        manifest.backend_ids.append(backend_id)
        gateway = Gateway(backend=backend, trace=TraceLog(), defaults=RequestDefaults(seed=args.seed))
        judge = harness.scoring_judge(
            prompts.get("judge_score"), gateway, k=args.judge_runs or 3
        )
    report = harness.run_metaeval(dataset, judge, jobs=args.jobs)
    print(report.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "rows": [{"metric": label, "mae": value} for label, value in report.rows()],
            "n_instances": len(dataset),
            "n_perturbed": sum(1 for inst in dataset if inst.manifest is not None),
        }
        (out / "metaeval_report.json").write_text(json.dumps(payload, indent=2) + "\n", "utf-8")
        manifest.outputs.append(str(out / "metaeval_report.json"))
    return 0


def cmd_calibrate(args, config: dict, manifest: RunManifest) -> int:
    with open(args.examples, encoding="utf-8") as handle:
        raw = json.load(handle)
    examples = [
        harness.CalibrationExample(
            dialogue_id=e["dialogue_id"],
            sentence_index=e["sentence_index"],
            dimension=Dimension(e["dimension"]),
            gold_label=e["gold_label"],
        )
        for e in raw
    ]
    corpus: dict[str, tuple[Dialogue, Summary]] = {}
    for dialogue_path in sorted(Path(args.corpus).glob("*.dialogue.jsonl")):
        stem = dialogue_path.name[: -len(".dialogue.jsonl")]
        summary_path = dialogue_path.with_name(f"{stem}.summary.json")
        dialogue = parse_dialogue(dialogue_path.read_text("utf-8"))
        corpus[dialogue.id] = (dialogue, parse_summary(summary_path.read_text("utf-8")))
    dimension = Dimension(args.dimension)
    prompts = _prompts(args, config)
    if args.dry_run:
        prompts.get(agents.EVALUATOR_ROLE[dimension])
        print(f"dry run ok: {len(examples)} examples, {len(corpus)} corpus entries")
        return 0
    backend_id, backend = _build_backend(args, config)
    manifest.backend_ids.append(backend_id)
    gateway = Gateway(backend=backend, trace=TraceLog(), defaults=RequestDefaults(seed=args.seed))
    result = harness.run_calibration(
        examples, dimension, prompts.get(agents.EVALUATOR_ROLE[dimension]), gateway, corpus
    )
    print(
        f"accuracy={result.accuracy:.3f} precision={result.precision:.3f} "
        f"recall={result.recall:.3f} f1={result.f1:.3f}"
        + (" (degenerate)" if result.degenerate else "")
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "calibration.json").write_text(
            json.dumps(result.__dict__, indent=2) + "\n", "utf-8"
        )
        manifest.outputs.append(str(out / "calibration.json"))
    return 0


def cmd_ablate(args, config: dict, manifest: RunManifest) -> int:
    dialogues = _read_corpus(args.dialogues)
    prompts = _prompts(args, config)
    masks = [_parse_mask(token.strip()) for token in (args.masks or "full").split(";")]
    if args.dry_run:
        print(f"dry run ok: {len(dialogues)} dialogues, {len(masks)} masks")
        return 0
    backend_id, backend = _build_backend(args, config)
    manifest.backend_ids.append(backend_id)
    cfg = _pipeline_config(args, config, backend_id)
    judge = _make_judge(args, config, prompts, backend)
    report = harness.run_ablation(
        dialogues, cfg, masks, judge, {backend_id: backend}, prompts,
        defaults=RequestDefaults(seed=args.seed),
    )
    print(report.table.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = _score_table_payload(report.table)
        payload["llm_calls"] = {k: dict(v) for k, v in report.llm_calls.items()}
        (out / "ablation.json").write_text(json.dumps(payload, indent=2) + "\n", "utf-8")
        manifest.outputs.append(str(out / "ablation.json"))
    return 0


def cmd_noise(args, config: dict, manifest: RunManifest) -> int:
    dialogue = _read_dialogue(args.dialogue)
    spec = harness.NoiseSpec(
        target_wer=args.target_wer,
        disfluency_rate=args.disfluency_rate,
        channel_merge=args.channel_merge,
        seed=args.seed or 0,
    )
    if args.dry_run:
        print("dry run ok")
        return 0
    noisy, achieved = harness.inject_asr_noise(dialogue, spec)
    print(f"achieved wer {achieved:.4f} (target {args.target_wer})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{dialogue.id}.noisy.jsonl").write_text(serialize_dialogue(noisy), "utf-8")
        manifest.outputs.append(str(out / f"{dialogue.id}.noisy.jsonl"))
    return 0


def cmd_wer(args, config: dict, manifest: RunManifest) -> int:
    reference = Path(args.ref).read_text("utf-8")
    hypothesis = Path(args.hyp).read_text("utf-8")
    rate, counts = metrics.wer(reference, hypothesis)
    print(f"{rate:.4f}")
    print(
        f"S={counts.substitutions} I={counts.insertions} D={counts.deletions} "
        f"H={counts.hits} N={counts.reference_len}",
        file=sys.stderr,
    )
    return 0


def _read_summaries_dir(directory: str) -> dict[str, Summary]:
    outputs = {}
    for path in sorted(Path(directory).glob("*.json")):
        summary = parse_summary(path.read_text("utf-8"))
        outputs[summary.dialogue_id] = summary
    if not outputs:
        raise RefineLoopError(f"no *.json summaries under {directory}")
    return outputs


def cmd_abtest_build(args, config: dict, manifest: RunManifest) -> int:
    a_outputs = _read_summaries_dir(args.a)
    b_outputs = _read_summaries_dir(args.b)
    pairs, key = harness.make_ab_pairs(
        a_outputs, b_outputs, seed=args.seed or 0,
        a_label=args.a_name, b_label=args.b_name,
    )
    dialogues = None
    if args.dialogues:
        dialogues = {d.id: d for d in _read_corpus(args.dialogues)}
    exp_dir = service.write_experiment(
        args.out, args.experiment_id, pairs, key, dialogues=dialogues
    )
    manifest.outputs.append(str(exp_dir))
    print(f"experiment {args.experiment_id}: {len(pairs)} blinded pairs under {exp_dir}")
    return 0


def cmd_abtest_serve(args, config: dict, manifest: RunManifest) -> int:
    import uvicorn

    store = service.ServiceStore(args.store)
    static_dir = args.static or None
    app = service.build_app(store, static_dir=static_dir)
    print(f"serving {len(store.experiments)} experiments on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_abtest_report(args, config: dict, manifest: RunManifest) -> int:
    store = service.ServiceStore(args.store)
    try:
        results = store.results(args.experiment_id)
    finally:
        store.close()
    print(json.dumps(results, indent=2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.json").write_text(json.dumps(results, indent=2) + "\n", "utf-8")
        manifest.outputs.append(str(out / "results.json"))
    return 0


def cmd_backend_matrix(args, config: dict, manifest: RunManifest) -> int:
    dialogues = _read_corpus(args.dialogues)
    prompts = _prompts(args, config)
    entries_cfg = config.get("matrix", [])
    if len(entries_cfg) < 2:
        raise RefineLoopError("config must list >= 2 matrix entries")
    if args.dry_run:
        print(f"dry run ok: {len(entries_cfg)} entries, {len(dialogues)} dialogues")
        return 0
    backends: dict[str, Backend] = {}
    entries: list[tuple[str, str | None]] = []
    for entry in entries_cfg:
        backend_id = entry["backend"]
        if backend_id not in backends:
            if entry.get("kind", "scripted") == "scripted":
                backends[backend_id] = load_script(entry["script"])
                backends[backend_id].backend_id = backend_id
            else:
                backends[backend_id] = HttpBackend(
                    base_url=entry["base_url"],
                    model_id=entry.get("model", ""),
                    backend_id=backend_id,
                    reasoning_field=entry.get("reasoning_field", "reasoning_effort"),
                )
        entries.append((backend_id, entry.get("reasoning_level")))
    manifest.backend_ids.extend(sorted(backends))
    cfg = _pipeline_config(args, config, backend_id=entries[0][0])
    judge_backend = backends[entries[0][0]]
    judge = _make_judge(args, config, prompts, judge_backend)
    table = harness.run_backend_matrix(
        dialogues, cfg, entries, judge, backends, prompts,
        defaults=RequestDefaults(seed=args.seed),
    )
    print(table.to_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "backend_matrix.json").write_text(
            json.dumps(_score_table_payload(table), indent=2) + "\n", "utf-8"
        )
        manifest.outputs.append(str(out / "backend_matrix.json"))
    return 0


# --- parser -------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flags win over config)")
    parser.add_argument("--out", help="output directory for artifacts and the run manifest")
    parser.add_argument("--seed", type=int, help="master seed for seeded operations")
    parser.add_argument("--jobs", type=int, default=1, help="dialogue-level parallelism")
    parser.add_argument("--dry-run", action="store_true", help="validate inputs, no backend calls")


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backend", choices=["scripted", "http"], help="backend kind")
    parser.add_argument("--script", help="script file for the scripted backend")
    parser.add_argument("--prompts-dir", help="directory of prompt template JSON files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refine-loop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", help="run the agentic pipeline on one dialogue")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--dialogue", required=True)
    p.add_argument("--n-rounds", type=int)
    p.add_argument("--mask", help="evaluator mask, e.g. full or -readability")
    p.add_argument("--monolithic", action="store_true", help="single-call baseline instead")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("judge", help="score a summary with the LLM judge")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--dialogue", required=True)
    p.add_argument("--summary", required=True)
    p.add_argument("--judge-runs", type=int)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("metaeval", help="synthetic-error meta-evaluation of the judge")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--golds", required=True, help="directory of gold dialogue/summary pairs")
    p.add_argument("--judge", default="scripted-oracle",
                   choices=["scripted-oracle", "constant-3", "llm"])
    p.add_argument("--judge-runs", type=int)
    p.add_argument("--perturb-fraction", type=float, default=0.5)
    p.add_argument("--rules", default="default", help="error rule set (default: all kinds)")
    p.set_defaults(func=cmd_metaeval)

    p = sub.add_parser("calibrate", help="evaluator calibration against gold labels")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--examples", required=True, help="JSON list of calibration examples")
    p.add_argument("--corpus", required=True, help="directory of dialogue/summary pairs")
    p.add_argument("--dimension", required=True,
                   choices=[d.value for d in Dimension])
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("ablate", help="evaluator-mask ablation study")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--masks", default="full;-accuracy;-completeness;-readability",
                   help="semicolon-separated masks")
    p.add_argument("--n-rounds", type=int)
    p.add_argument("--judge-runs", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("noise", help="inject transcript noise at a target WER")
    _add_common(p)
    p.add_argument("--dialogue", required=True)
    p.add_argument("--target-wer", type=float, required=True)
    p.add_argument("--disfluency-rate", type=float, default=0.0)
    p.add_argument("--channel-merge", action="store_true")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("wer", help="word error rate between two text files")
    _add_common(p)
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.set_defaults(func=cmd_wer)

    abtest = sub.add_parser("abtest", help="A/B preference experiment tooling")
    absub = abtest.add_subparsers(dest="abtest_command", required=True)

    p = absub.add_parser("build", help="build a blinded experiment store")
    _add_common(p)
    p.add_argument("--a", required=True, help="directory of system A summaries")
    p.add_argument("--b", required=True, help="directory of system B summaries")
    p.add_argument("--a-name", default="system-a")
    p.add_argument("--b-name", default="system-b")
    p.add_argument("--dialogues", help="directory of transcripts to bundle")
    p.add_argument("--experiment-id", default="exp-001")
    p.set_defaults(func=cmd_abtest_build)

    p = absub.add_parser("serve", help="serve the annotation HTTP API")
    _add_common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--static", help="directory of annotator UI assets to serve at /")
    p.set_defaults(func=cmd_abtest_serve)

    p = absub.add_parser("report", help="tally an experiment's preferences")
    _add_common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--experiment-id", default="exp-001")
    p.set_defaults(func=cmd_abtest_report)

    p = sub.add_parser("backend-matrix", help="compare backends/reasoning levels")
    _add_common(p)
    _add_backend_flags(p)
    p.add_argument("--dialogues", required=True)
    p.add_argument("--n-rounds", type=int)
    p.add_argument("--judge-runs", type=int)
    p.set_defaults(func=cmd_backend_matrix)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    config = {}
    manifest = RunManifest(
        command=" ".join(argv if argv is not None else sys.argv[1:]),
        seeds={"seed": args.seed},
        started_at=_now(),
    )
    out_dir = Path(args.out) if getattr(args, "out", None) else None
    try:
        config = _load_config(getattr(args, "config", None))
        manifest.config = config
        code = args.func(args, config, manifest)
        manifest.status = "ok" if code == 0 else "error"
        return code
    except (RefineLoopError, OSError, ValueError, json.JSONDecodeError) as exc:
        manifest.status = "error"
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        manifest.finished_at = _now()
        if out_dir is not None:
            manifest.write(out_dir)


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()

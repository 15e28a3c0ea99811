"""Command-line entry points: eval, synth, analyze, audit.

Exit codes: 0 success, 1 usage or configuration error, 2 backend
unreachable, 3 partial failure (some samples or videos were skipped).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import pipeline as pl
from .analysis import (
    NoiseModel,
    corrected_loss,
    effective_samples,
    per_token_score,
    sample_budget,
    spearman,
)
from .backends import CachedTextBackend, ChatCompletionsClient, HttpTextBackend
from .cache import DiskCache
from .config import RunConfig, load_config
from .errors import BackendError, ConfigError, StreamHarnessError
from .judge import JudgeClient, judge_sample
from .scoring import BenchmarkReport, VerdictBundle, aggregate, score_sample
from .timeline import MODE_SUBTASKS, StreamTimeline, read_trajectories_jsonl

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_BACKEND = 2
EXIT_PARTIAL = 3


def render_table(report: BenchmarkReport) -> str:
    """Fixed-width benchmark table: subtasks, mode averages, overall."""
    rows: list[tuple[str, str]] = []
    for mode, subtasks in MODE_SUBTASKS.items():
        for sub in subtasks:
            if sub in report.subtask_means:
                rows.append((sub.value, f"{report.subtask_means[sub]:7.2f}"))
        if mode in report.mode_means:
            rows.append((f"{mode.value} (avg)", f"{report.mode_means[mode]:7.2f}"))
    rows.append(("Overall", f"{report.overall:7.2f}"))
    if report.per_token_score is not None:
        rows.append(("Score per token", f"{report.per_token_score:7.2f}"))
    width = max(len(name) for name, _ in rows)
    lines = [f"{'Task':<{width}}  {'Score':>7}", "-" * (width + 9)]
    lines += [f"{name:<{width}}  {value}" for name, value in rows]
    return "\n".join(lines)


def _read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _load_verdicts(path: Path) -> dict[str, VerdictBundle]:
    bundles = {}
    for obj in _read_jsonl(path):
        quality = {(int(g), int(t)): float(v) for g, t, v in obj["quality"]}
        bundles[obj["sample_id"]] = VerdictBundle(
            quality=quality, repetition=bool(obj.get("repetition", False))
        )
    return bundles


def _judge_client(config: RunConfig, args) -> Optional[JudgeClient]:
    endpoint = args.judge_endpoint or config.judge.endpoint
    model = args.judge_model or config.judge.model
    if not endpoint or not model:
        return None
    client = ChatCompletionsClient(
        endpoint=endpoint, model=model, api_key=config.judge.auth_token
    )
    # JudgeClient memoizes raw judge replies itself; wrapping the backend in
    # CachedTextBackend would collide on the same keys and defeat parse retries.
    concurrency = args.judge_concurrency or config.judge.concurrency
    return JudgeClient(
        HttpTextBackend(client),
        DiskCache(config.cache_dir),
        parse_retries=config.judge.parse_retries,
        concurrency=concurrency,
    )


def cmd_eval(args) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    report_format = args.report_format or config.report_format
    logs = Path(args.from_logs)
    timelines = {
        obj["sample_id"]: StreamTimeline.from_json(obj)
        for obj in _read_jsonl(logs / "timelines.jsonl")
    }
    trajectories = read_trajectories_jsonl(logs / "trajectories.jsonl")

    verdict_path = logs / "verdicts.jsonl"
    precomputed = _load_verdicts(verdict_path) if verdict_path.exists() else {}
    judge = _judge_client(config, args)
    if judge is None and not precomputed:
        print("eval needs either a judge endpoint or a verdicts.jsonl in the log dir",
              file=sys.stderr)
        return EXIT_USAGE

    scores = []
    total_tokens = 0
    total_turns = 0
    skipped: list[str] = []
    for sample_id, timeline in sorted(timelines.items()):
        traj = trajectories.get(sample_id)
        if traj is None:
            skipped.append(sample_id)
            continue
        bundle = precomputed.get(sample_id)
        if bundle is None:
            try:
                bundle = judge_sample(
                    timeline, traj, judge,
                    double_far_scores=config.judge.double_forward_scores,
                )
            except BackendError:
                return EXIT_BACKEND
        scores.append((timeline.ground_truth.subtask, score_sample(timeline, traj, bundle)))
        total_tokens += sum(a.completion_tokens for a in traj.turns)
        total_turns += len(traj)

    if not scores:
        print("no samples could be scored", file=sys.stderr)
        return EXIT_PARTIAL
    report = aggregate(scores, total_tokens, total_turns)

    out_dir = Path(args.out_dir or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_hash": config.content_hash(),
        "sample_count": report.sample_count,
        "skipped_samples": skipped,
        "log_dir": str(logs),
    }
    with open(out_dir / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    if report_format in ("json", "both"):
        print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    if report_format in ("table", "both"):
        print(render_table(report))
    return EXIT_PARTIAL if skipped else EXIT_OK


def _load_videos(path: Path) -> list[pl.Video]:
    return [
        pl.Video(
            video_id=obj["video_id"],
            duration_seconds=obj["duration_seconds"],
            segment_refs=tuple(obj["segment_refs"]) if obj.get("segment_refs") else None,
        )
        for obj in _read_jsonl(path)
    ]


def cmd_synth(args) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    videos = _load_videos(Path(args.videos))
    if not videos:
        print("empty video pool", file=sys.stderr)
        return EXIT_USAGE
    if not args.backend_endpoint or not args.backend_model:
        print("synth needs --backend-endpoint and --backend-model", file=sys.stderr)
        return EXIT_USAGE

    out_dir = Path(args.out_dir or config.out_dir)
    start = 0
    if args.resume:
        manifests = sorted(out_dir.glob("manifest_*.json"))
        if manifests:
            start = pl.HandoffManifest.load(manifests[-1]).iteration + 1

    client = ChatCompletionsClient(
        endpoint=args.backend_endpoint,
        model=args.backend_model,
        api_key=config.backend.auth_token,
    )
    backend = CachedTextBackend(HttpTextBackend(client), DiskCache(config.cache_dir))
    try:
        manifests = pl.iterate(
            videos,
            backend_for_iteration=lambda i: backend,
            iterations=args.iterations,
            out_dir=out_dir,
            start_iteration=start,
            max_questions=args.max_questions,
        )
    except BackendError:
        return EXIT_BACKEND
    for manifest in manifests:
        print(json.dumps(manifest.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_analyze(args) -> int:
    if args.metric == "eta":
        result = {"per_token_score": per_token_score(args.overall, args.avg_tokens)}
    elif args.metric == "spearman":
        if len(args.ranks) != 2:
            print("spearman needs exactly two --ranks lists", file=sys.stderr)
            return EXIT_USAGE
        a, b = (tuple(int(x) for x in r.split(",")) for r in args.ranks)
        result = {"spearman": spearman(a, b)}
    elif args.metric == "noise":
        noise = NoiseModel(rho_minus=args.rho_minus, rho_plus=args.rho_plus)
        result = {
            "corrected_loss": corrected_loss(
                args.loss_as_labeled, args.loss_as_flipped, args.label, noise
            )
        }
    elif args.metric == "effective":
        result = {"effective_samples": effective_samples(args.n, args.eps_v)}
    elif args.metric == "budget":
        result = {"sample_budget": sample_budget(args.log_covering, args.eps_v, args.eps)}
    else:
        return EXIT_USAGE
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_audit(args) -> int:
    dataset = pl.load_dataset(args.dataset)
    n = args.sample if args.sample else len(dataset)
    judge_backend = None
    if args.judge_endpoint and args.judge_model:
        client = ChatCompletionsClient(endpoint=args.judge_endpoint, model=args.judge_model)
        judge_backend = CachedTextBackend(HttpTextBackend(client), DiskCache(args.cache_dir))
    try:
        report = pl.audit(dataset, n=min(n, len(dataset)), seed=args.seed,
                          judge_backend=judge_backend)
    except BackendError:
        return EXIT_BACKEND
    print(json.dumps(report.to_json(), indent=2, sort_keys=True))
    mechanical = [report.pass_rates["trajectory_consistency"], report.pass_rates["sample_validity"]]
    return EXIT_OK if all(r == 1.0 for r in mechanical) else EXIT_PARTIAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamharness",
        description="Streaming dialogue evaluation, trajectory synthesis, and analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="score recorded sessions into a benchmark report")
    p_eval.add_argument("--from-logs", required=True,
                        help="directory with timelines.jsonl, trajectories.jsonl, "
                             "and optionally verdicts.jsonl")
    p_eval.add_argument("--config", help="run config JSON")
    p_eval.add_argument("--report-format", choices=("json", "table", "both"))
    p_eval.add_argument("--out-dir")
    p_eval.add_argument("--judge-endpoint")
    p_eval.add_argument("--judge-model")
    p_eval.add_argument("--judge-concurrency", type=int)
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="synthesize silent/respond training trajectories")
    p_synth.add_argument("--videos", required=True, help="video pool JSONL")
    p_synth.add_argument("--iterations", type=int, default=1)
    p_synth.add_argument("--backend-endpoint")
    p_synth.add_argument("--backend-model")
    p_synth.add_argument("--config")
    p_synth.add_argument("--out-dir")
    p_synth.add_argument("--max-questions", type=int, default=5)
    p_synth.add_argument("--resume", action="store_true",
                         help="continue from the latest handoff manifest in the output dir")
    p_synth.set_defaults(func=cmd_synth)

    p_an = sub.add_parser("analyze", help="closed-form analysis utilities")
    an_sub = p_an.add_subparsers(dest="metric", required=True)
    p_eta = an_sub.add_parser("eta", help="score per completion token")
    p_eta.add_argument("--overall", type=float, required=True)
    p_eta.add_argument("--avg-tokens", type=float, required=True)
    p_sp = an_sub.add_parser("spearman", help="rank correlation between two orderings")
    p_sp.add_argument("--ranks", action="append", required=True,
                      help="comma-separated rank list; pass twice")
    p_noise = an_sub.add_parser("noise", help="noise-corrected loss for one example")
    p_noise.add_argument("--rho-minus", type=float, required=True)
    p_noise.add_argument("--rho-plus", type=float, required=True)
    p_noise.add_argument("--loss-as-labeled", type=float, required=True)
    p_noise.add_argument("--loss-as-flipped", type=float, required=True)
    p_noise.add_argument("--label", choices=("R", "I"), required=True)
    p_eff = an_sub.add_parser("effective", help="noise-discounted effective sample count")
    p_eff.add_argument("--n", type=int, required=True)
    p_eff.add_argument("--eps-v", type=float, required=True)
    p_budget = an_sub.add_parser("budget", help="sample budget for target accuracy")
    p_budget.add_argument("--log-covering", type=float, required=True)
    p_budget.add_argument("--eps-v", type=float, required=True)
    p_budget.add_argument("--eps", type=float, required=True)
    p_an.set_defaults(func=cmd_analyze)

    p_audit = sub.add_parser("audit", help="quality-check a synthesized dataset")
    p_audit.add_argument("--dataset", required=True)
    p_audit.add_argument("--sample", type=int, default=0, help="0 audits every record")
    p_audit.add_argument("--seed", type=int, default=0)
    p_audit.add_argument("--cache-dir", default="cache")
    p_audit.add_argument("--judge-endpoint")
    p_audit.add_argument("--judge-model")
    p_audit.set_defaults(func=cmd_audit)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"backend unreachable: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except StreamHarnessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

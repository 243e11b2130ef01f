"""Operator command line: prepare data, annotate rationales, score rewards,
evaluate prediction logs, and launch the reward service.

One multiplexed binary with shared config loading and JSON-line logging.
Exit codes: 0 success, 1 runtime failure, 2 usage error. Every subcommand is
deterministic given its inputs, config, and seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .actions import FormatError, parse_action, serialize_action
from .annotate import (
    DEFAULT_EXCERPT_CHARS,
    AnnotationCache,
    AnnotationRequest,
    ProviderError,
    ValidationError,
    annotate,
    build_prompt,
    get_provider,
)
from .config import (
    effective_config,
    matcher_config_from,
    provider_config_from,
    reward_config_from,
)
from .evaluation import compute_metrics, load_predictions, render_report
from .pipeline import (
    build_examples,
    emit_jsonl,
    format_distribution_table,
    load_examples,
    load_raw_sessions,
    process_raw_session,
    split_dataset,
    write_distribution_csv,
)
from .rewards import InvalidDistribution, SparseRow, TokenDistribution, score_response
from .service import ServiceConfig, serve

log = logging.getLogger("shopsim")


class _JsonLineFormatter(logging.Formatter):
    def format(self, record):
        entry = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        return json.dumps(entry, ensure_ascii=False)


def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLineFormatter())
    root = logging.getLogger("shopsim")
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level.upper(), logging.INFO))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--log-level", help="debug|info|warning|error")
    common.add_argument(
        "--dump-config", action="store_true", help="print the effective config and exit"
    )

    parser = argparse.ArgumentParser(
        prog="shopsim",
        description="Web-shopper behavior simulation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"shopsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="raw sessions -> train/test example JSONL")
    p.add_argument("--input", required=True, help="raw-session JSONL (one session per line)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--history-window", type=int, help="past steps per query (0 = none)")
    p.add_argument("--full-history", action="store_true", help="unbounded history window")
    p.add_argument("--split-ratio", type=float, help="fraction of sessions in train")
    p.add_argument("--seed", type=int, help="split shuffle seed")

    p = sub.add_parser("annotate", parents=[common], help="fill missing rationales in example JSONL")
    p.add_argument("--data", required=True, help="directory holding train.jsonl/test.jsonl")
    p.add_argument("--provider", help="mock|http")
    p.add_argument("--cache", help="rationale cache directory")
    p.add_argument("--concurrency", type=int, help="max concurrent provider calls")

    p = sub.add_parser("score", parents=[common], help="offline batch reward scoring")
    p.add_argument("--predictions", required=True, help="JSONL: {session_id, step, raw_output, ...}")
    p.add_argument("--ground-truth", required=True, help="JSONL: {session_id, step, action}")
    p.add_argument("--out", required=True, help="breakdown JSONL output path")

    p = sub.add_parser("eval", parents=[common], help="metrics over a prediction log")
    p.add_argument("--predictions", required=True, help="JSONL with inline ground_truth")
    p.add_argument("--out", required=True, help="report output path")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--min-exact", type=float, help="fail (exit 1) below this exact-match accuracy")
    p.add_argument("--min-type-acc", type=float, help="fail (exit 1) below this type accuracy")
    p.add_argument("--min-f1", type=float, help="fail (exit 1) below this macro F1")

    sub.add_parser("serve", parents=[common], help="run the reward scoring service")
    return parser


def _flag_overrides(args) -> dict:
    overrides = {"pipeline": {}, "annotate": {}, "eval": {}, "log": {}}
    if getattr(args, "history_window", None) is not None:
        overrides["pipeline"]["history_window"] = args.history_window
    if getattr(args, "split_ratio", None) is not None:
        overrides["pipeline"]["split_ratio"] = args.split_ratio
    if getattr(args, "seed", None) is not None:
        overrides["pipeline"]["seed"] = args.seed
    if getattr(args, "provider", None) is not None:
        overrides["annotate"]["provider"] = args.provider
    if getattr(args, "cache", None) is not None:
        overrides["annotate"]["cache_dir"] = args.cache
    if getattr(args, "concurrency", None) is not None:
        overrides["annotate"]["concurrency"] = args.concurrency
    if getattr(args, "log_level", None) is not None:
        overrides["log"]["level"] = args.log_level
    return overrides


def cmd_prepare(args, config) -> int:
    pipeline_cfg = config["pipeline"]
    window = None if args.full_history else pipeline_cfg["history_window"]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    examples = []
    for raw in load_raw_sessions(args.input):
        session = process_raw_session(raw)
        examples.extend(
            build_examples(session, history_window=window, char_budget=pipeline_cfg["char_budget"])
        )
    train, test = split_dataset(examples, seed=pipeline_cfg["seed"], ratio=pipeline_cfg["split_ratio"])

    emit_jsonl(train, out_dir / "train.jsonl")
    emit_jsonl(test, out_dir / "test.jsonl")
    write_distribution_csv(train, test, out_dir / "distribution.csv")
    print(format_distribution_table(train, test))
    log.info("prepared %d train / %d test examples into %s", len(train), len(test), out_dir)
    return 0


def _annotate_examples_file(path, provider, cache, example_text, concurrency, rationales, report):
    """Fill missing target rationales in one example JSONL file; record every
    (session, step) -> rationale pair for history backfill."""
    examples = load_examples(path)
    jobs = []
    for ex in examples:
        if ex.rationale is not None:
            report["preserved"] += 1
            rationales[(ex.session_id, ex.step)] = ex.rationale
            continue
        jobs.append(ex)

    def run_job(ex):
        request = AnnotationRequest(
            history_actions=tuple(serialize_action(item.action) for item in ex.history),
            context_html=ex.current_html[:DEFAULT_EXCERPT_CHARS],
            action_json=serialize_action(ex.action),
        )
        key = AnnotationCache.key(provider.model_id, build_prompt(request, example_text))
        cached = cache.get(key) is not None
        try:
            return ex, annotate(request, provider, cache, example_text), cached, None
        except (ProviderError, ValidationError) as exc:
            return ex, None, cached, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        for ex, rationale, cached, error in pool.map(run_job, jobs):
            if error is not None:
                report["failed"] += 1
                report["failures"].append(
                    {"file": str(path), "session_id": ex.session_id, "step": ex.step, "error": error}
                )
                continue
            ex.rationale = rationale
            rationales[(ex.session_id, ex.step)] = rationale
            report["cached" if cached else "fetched"] += 1
    return examples


def cmd_annotate(args, config) -> int:
    annotate_cfg = config["annotate"]
    provider = get_provider(provider_config_from(annotate_cfg))
    cache = AnnotationCache(annotate_cfg["cache_dir"])
    data_dir = Path(args.data)
    files = [data_dir / name for name in ("train.jsonl", "test.jsonl") if (data_dir / name).exists()]
    if not files:
        log.error("no train.jsonl/test.jsonl found in %s", data_dir)
        return 1

    report = {"cached": 0, "fetched": 0, "failed": 0, "preserved": 0, "failures": []}
    rationales: dict = {}
    per_file = {}
    for path in files:
        per_file[path] = _annotate_examples_file(
            path,
            provider,
            cache,
            annotate_cfg["example_text"],
            annotate_cfg["concurrency"],
            rationales,
            report,
        )

    for path, examples in per_file.items():
        for ex in examples:
            for item in ex.history:
                if item.rationale is None:
                    item.rationale = rationales.get((ex.session_id, item.step))
        emit_jsonl(examples, path)

    if report["failures"]:
        manifest = data_dir / "annotate_failures.jsonl"
        with open(manifest, "w", encoding="utf-8", newline="\n") as handle:
            for failure in report["failures"]:
                handle.write(json.dumps(failure, ensure_ascii=False) + "\n")
        log.warning("%d annotation failures listed in %s", report["failed"], manifest)

    print(
        f"annotated: cached={report['cached']} fetched={report['fetched']} "
        f"failed={report['failed']} preserved={report['preserved']}"
    )
    return 0


def _load_ground_truth(path) -> dict:
    table = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            if "target" in data:
                action = parse_action(data["target"]["action"])
            else:
                action = parse_action(data["action"])
            table[(data["session_id"], data["step"])] = action
    return table


def _distribution_from_dict(data) -> TokenDistribution | None:
    if data is None:
        return None
    rows = []
    for row in data["rows"]:
        if isinstance(row, dict):
            rows.append(
                SparseRow(
                    entries=tuple((int(i), float(p)) for i, p in row["top"]),
                    tail_mass=float(row["tail_mass"]),
                )
            )
        else:
            rows.append([float(p) for p in row])
    return TokenDistribution(vocab_size=int(data["vocab_size"]), rows=rows)


def cmd_score(args, config) -> int:
    reward_config = reward_config_from(config["reward"])
    ground_truth = _load_ground_truth(args.ground_truth)

    written = 0
    with open(args.predictions, encoding="utf-8") as handle, open(
        args.out, "w", encoding="utf-8", newline="\n"
    ) as out:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            key = (data["session_id"], data["step"])
            if key not in ground_truth:
                log.error("no ground truth for session=%s step=%s", *key)
                return 1
            span = data.get("rationale_span")
            try:
                breakdown, diagnostics = score_response(
                    data["raw_output"],
                    _distribution_from_dict(data.get("token_distribution")),
                    ground_truth[key],
                    reward_config,
                    rationale_span=tuple(span) if span else None,
                )
            except InvalidDistribution as exc:
                out.write(
                    json.dumps(
                        {"session_id": key[0], "step": key[1], "error": str(exc)},
                        ensure_ascii=False,
                    )
                    + "\n"
                )
                continue
            out.write(
                json.dumps(
                    {
                        "session_id": key[0],
                        "step": key[1],
                        "breakdown": {
                            "r_format": breakdown.r_format,
                            "self_certainty": breakdown.self_certainty,
                            "self_certainty_available": breakdown.self_certainty_available,
                            "r_type": breakdown.r_type,
                            "r_subaction": breakdown.r_subaction,
                            "dars": breakdown.dars,
                            "total": breakdown.total,
                        },
                        "diagnostics": {
                            "parse_bucket": diagnostics.parse_bucket,
                            "type_matched": diagnostics.type_matched,
                            "matched_components": list(diagnostics.matched_components),
                        },
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
            written += 1
    log.info("scored %d predictions into %s", written, args.out)
    return 0


def cmd_eval(args, config) -> int:
    records = load_predictions(args.predictions)
    report = compute_metrics(records, matcher_config_from(config["eval"]))
    rendered = render_report(report, fmt=args.format)
    with open(args.out, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(rendered)
    print(
        f"exact={report.exact_match_acc:.4f} type_acc={report.type_acc:.4f} "
        f"macro_f1={report.macro_f1:.4f} records={report.record_count}"
    )

    failed = []
    if args.min_exact is not None and report.exact_match_acc < args.min_exact:
        failed.append(f"exact-match {report.exact_match_acc:.4f} < {args.min_exact}")
    if args.min_type_acc is not None and report.type_acc < args.min_type_acc:
        failed.append(f"type accuracy {report.type_acc:.4f} < {args.min_type_acc}")
    if args.min_f1 is not None and report.macro_f1 < args.min_f1:
        failed.append(f"macro F1 {report.macro_f1:.4f} < {args.min_f1}")
    for reason in failed:
        log.error("threshold violated: %s", reason)
    return 1 if failed else 0


def cmd_serve(args, config) -> int:
    service_cfg = config["service"]
    workers = int(service_cfg["workers"])
    if workers > 1:
        # Worker subprocesses rebuild their config from the environment.
        for section in ("service", "reward"):
            for key, value in config[section].items():
                if not isinstance(value, dict):
                    os.environ[f"SHOPSIM_{section.upper()}_{key.upper()}"] = str(value)
    serve(
        ServiceConfig(
            host=service_cfg["host"],
            port=int(service_cfg["port"]),
            max_batch=int(service_cfg["max_batch"]),
            max_body_bytes=int(service_cfg["max_body_bytes"]),
            workers=workers,
            reward=reward_config_from(config["reward"]),
        )
    )
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "annotate": cmd_annotate,
    "score": cmd_score,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = effective_config(
        path=getattr(args, "config", None),
        flag_overrides=_flag_overrides(args),
        environ=os.environ,
    )
    setup_logging(config["log"]["level"])

    if getattr(args, "dump_config", False):
        print(json.dumps(config, indent=2, ensure_ascii=False, sort_keys=True))
        return 0

    try:
        return COMMANDS[args.command](args, config)
    except (OSError, ValueError, FormatError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())

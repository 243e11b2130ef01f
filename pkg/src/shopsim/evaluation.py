"""Evaluation of predicted actions against ground truth.

Scores a log of raw model outputs with an exact-match criterion (every
relevant action component must align), coarse action-type accuracy, macro-F1
over the three grammar classes, and the distribution of predicted action
types including out-of-grammar and incorrectly formatted outputs.
"""

from __future__ import annotations

import difflib
import json
from dataclasses import dataclass

from .actions import (
    Action,
    ModelResponse,
    classify_raw_type,
    parse_action,
    parse_response,
)

GRAMMAR_CLASSES = ("input", "click", "scroll")
DISTRIBUTION_BUCKETS = ("input", "click", "scroll", "others", "incorrect_format")

_TERMINAL_PUNCTUATION = ".,!?;:"


class EmptyEvaluation(ValueError):
    """Raised when metrics are requested over zero records."""


@dataclass(frozen=True)
class MatcherConfig:
    """How input texts (and click names) are compared.

    ``normalized`` requires equality after normalization; ``similarity``
    accepts a difflib ratio over normalized texts at or above ``threshold``.
    """

    mode: str = "normalized"
    threshold: float = 0.9


def normalize_text(value: str) -> str:
    """Casefold, trim, collapse internal whitespace, strip terminal punctuation."""
    collapsed = " ".join(value.casefold().split())
    return collapsed.rstrip(_TERMINAL_PUNCTUATION).rstrip()


def text_match(pred: str, gt: str, config: MatcherConfig = MatcherConfig()) -> bool:
    left, right = normalize_text(pred), normalize_text(gt)
    if config.mode == "similarity":
        return difflib.SequenceMatcher(None, left, right).ratio() >= config.threshold
    return left == right


def exact_match(pred: Action | None, gt: Action, matcher: MatcherConfig = MatcherConfig()) -> bool:
    """True when all relevant components align.

    Scrolls need only the type; clicks need the click subtype and the
    normalized target name; inputs need a text match per the matcher.
    Absent predictions never match.
    """
    if pred is None or pred.type != gt.type:
        return False
    if gt.type == "scroll":
        return True
    if gt.type == "click":
        return pred.click_type == gt.click_type and normalize_text(pred.name) == normalize_text(gt.name)
    return text_match(pred.text, gt.text, matcher)


@dataclass
class PredictionRecord:
    """One raw model output paired with its ground-truth action."""

    session_id: str
    step: int
    raw_output: str
    ground_truth: Action
    bucket: str = ""
    parsed: ModelResponse | None = None

    @classmethod
    def from_raw(cls, session_id, step, raw_output: str, ground_truth: Action):
        bucket = classify_raw_type(raw_output)
        parsed = None
        if bucket in GRAMMAR_CLASSES:
            parsed = parse_response(raw_output, mode="lenient")
        return cls(
            session_id=session_id,
            step=step,
            raw_output=raw_output,
            ground_truth=ground_truth,
            bucket=bucket,
            parsed=parsed,
        )


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    exact_match_acc: float
    type_acc: float
    macro_f1: float
    per_class: dict
    distribution: dict
    record_count: int


def distribution_table(records) -> dict:
    """Percentage of records per classification bucket (exact, unrounded)."""
    if not records:
        raise EmptyEvaluation("no records to evaluate")
    counts = {bucket: 0 for bucket in DISTRIBUTION_BUCKETS}
    for record in records:
        counts[record.bucket] += 1
    return {bucket: 100.0 * count / len(records) for bucket, count in counts.items()}


def compute_metrics(records, matcher: MatcherConfig = MatcherConfig()) -> EvalReport:
    """Aggregate metrics over a prediction log.

    Incorrectly formatted and out-of-grammar outputs count in every
    denominator: they are non-matches that still carry their true class's
    support. Macro-F1 averages over grammar classes that have support.
    """
    if not records:
        raise EmptyEvaluation("no records to evaluate")

    matches = 0
    type_correct = 0
    tp = {c: 0 for c in GRAMMAR_CLASSES}
    fp = {c: 0 for c in GRAMMAR_CLASSES}
    fn = {c: 0 for c in GRAMMAR_CLASSES}

    for record in records:
        pred_action = record.parsed.action if record.parsed is not None else None
        pred_class = record.bucket if record.bucket in GRAMMAR_CLASSES else None
        gt_class = record.ground_truth.type

        if exact_match(pred_action, record.ground_truth, matcher):
            matches += 1
        if pred_class == gt_class:
            type_correct += 1
            tp[gt_class] += 1
        else:
            fn[gt_class] += 1
            if pred_class is not None:
                fp[pred_class] += 1

    per_class = {}
    f1_values = []
    for cls_name in GRAMMAR_CLASSES:
        support = tp[cls_name] + fn[cls_name]
        precision = tp[cls_name] / (tp[cls_name] + fp[cls_name]) if tp[cls_name] + fp[cls_name] else 0.0
        recall = tp[cls_name] / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[cls_name] = ClassMetrics(precision, recall, f1, support)
        if support:
            f1_values.append(f1)

    return EvalReport(
        exact_match_acc=matches / len(records),
        type_acc=type_correct / len(records),
        macro_f1=sum(f1_values) / len(f1_values) if f1_values else 0.0,
        per_class=per_class,
        distribution=distribution_table(records),
        record_count=len(records),
    )


def _pct(value: float) -> str:
    return f"{100.0 * value:.2f}%"


def render_report(report: EvalReport, fmt: str = "markdown") -> str:
    """Render a report as markdown tables or a flat CSV.

    Column order is fixed: the summary columns first, then the distribution
    columns Input | Click | Scroll | Others | Incorrect Format.
    """
    dist = report.distribution
    if fmt == "csv":
        header = [
            "Next Action Pred. Acc.",
            "Action Type Acc.",
            "Action Type F1",
            "Input",
            "Click",
            "Scroll",
            "Others",
            "Incorrect Format",
            "Records",
        ]
        row = [
            _pct(report.exact_match_acc),
            _pct(report.type_acc),
            _pct(report.macro_f1),
            *(f"{dist[b]:.2f}%" for b in DISTRIBUTION_BUCKETS),
            str(report.record_count),
        ]
        return ",".join(header) + "\n" + ",".join(row) + "\n"

    if fmt != "markdown":
        raise ValueError(f"unknown report format: {fmt!r}")

    lines = [
        "# Evaluation report",
        "",
        "| Next Action Pred. Acc. | Action Type Acc. | Action Type F1 |",
        "| --- | --- | --- |",
        f"| {_pct(report.exact_match_acc)} | {_pct(report.type_acc)} | {_pct(report.macro_f1)} |",
        "",
        "## Predicted action type distribution",
        "",
        "| Input | Click | Scroll | Others | Incorrect Format |",
        "| --- | --- | --- | --- | --- |",
        "| " + " | ".join(f"{dist[b]:.2f}%" for b in DISTRIBUTION_BUCKETS) + " |",
        "",
        "## Per-class metrics",
        "",
        "| Class | Precision | Recall | F1 | Support |",
        "| --- | --- | --- | --- | --- |",
    ]
    for cls_name in GRAMMAR_CLASSES:
        m = report.per_class[cls_name]
        lines.append(
            f"| {cls_name} | {_pct(m.precision)} | {_pct(m.recall)} | {_pct(m.f1)} | {m.support} |"
        )
    lines += [
        "",
        f"Records: {report.record_count}. Incorrectly formatted predictions count",
        "in every denominator, mirroring their distribution column above.",
        "",
    ]
    return "\n".join(lines)


def load_predictions(path) -> list:
    """Read a predictions JSONL log: {session_id, step, raw_output, ground_truth}."""
    records = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                records.append(
                    PredictionRecord.from_raw(
                        session_id=data.get("session_id", ""),
                        step=data.get("step", line_no),
                        raw_output=data["raw_output"],
                        ground_truth=parse_action(data["ground_truth"]),
                    )
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{line_no}: bad prediction record: {exc}") from exc
    return records

"""Reward engine for reinforcement-learning on shopper behavior.

Four components compose the scalar reward for one model response:

- a binary format reward for emitting a strictly schema-valid envelope,
- a self-certainty score for the generated rationale (mean scaled KL
  divergence of per-token predictive distributions from uniform),
- a base reward for matching the ground-truth action type,
- a fine-grained subaction reward unlocked only when the type matches,
  scaled by a difficulty-aware factor (DARS).

total = r_format + self_certainty + r_type + dars * r_subaction
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .actions import Action, FormatError, classify_raw_type, parse_response
from .evaluation import MatcherConfig, normalize_text, text_match


class InvalidDistribution(ValueError):
    """Raised when a token distribution violates its row-sum invariants."""


SUM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SparseRow:
    """Top-k (index, probability) pairs plus the uncovered tail mass.

    The tail is interpreted as spread uniformly over the vocabulary entries
    not covered by the top-k, which keeps wire payloads small for large
    vocabularies.
    """

    entries: tuple
    tail_mass: float


@dataclass
class TokenDistribution:
    """Per-position probability rows over a vocabulary.

    Each row is either dense (a probability per vocabulary entry) or a
    SparseRow. Every row must sum to 1 within tolerance.
    """

    vocab_size: int
    rows: list

    def validate(self) -> None:
        if self.vocab_size < 1:
            raise InvalidDistribution("vocab_size must be >= 1")
        if not self.rows:
            raise InvalidDistribution("distribution has no rows")
        for pos, row in enumerate(self.rows):
            if isinstance(row, SparseRow):
                if len(row.entries) >= self.vocab_size:
                    raise InvalidDistribution(
                        f"row {pos}: sparse row must cover fewer than vocab_size entries"
                    )
                seen = set()
                total = 0.0
                for index, prob in row.entries:
                    if not 0 <= index < self.vocab_size:
                        raise InvalidDistribution(f"row {pos}: index {index} out of range")
                    if index in seen:
                        raise InvalidDistribution(f"row {pos}: duplicate index {index}")
                    seen.add(index)
                    if not 0.0 <= prob <= 1.0:
                        raise InvalidDistribution(f"row {pos}: probability {prob} out of [0,1]")
                    total += prob
                if not 0.0 <= row.tail_mass <= 1.0:
                    raise InvalidDistribution(f"row {pos}: tail_mass {row.tail_mass} out of [0,1]")
                if abs(total + row.tail_mass - 1.0) > SUM_TOLERANCE:
                    raise InvalidDistribution(
                        f"row {pos}: top-k mass + tail_mass = {total + row.tail_mass}, expected 1"
                    )
            else:
                if len(row) != self.vocab_size:
                    raise InvalidDistribution(
                        f"row {pos}: dense row length {len(row)} != vocab_size {self.vocab_size}"
                    )
                total = 0.0
                for prob in row:
                    if not 0.0 <= prob <= 1.0:
                        raise InvalidDistribution(f"row {pos}: probability {prob} out of [0,1]")
                    total += prob
                if abs(total - 1.0) > SUM_TOLERANCE:
                    raise InvalidDistribution(f"row {pos}: row sums to {total}, expected 1")


@dataclass(frozen=True)
class RewardConfig:
    """Weights and scales for reward composition. All weights must be >= 0
    and the DARS factor >= 1. ``dars_per_type`` optionally overrides the
    factor for individual ground-truth action types."""

    r_format_value: float = 1.0
    r_type_value: float = 1.0
    w_click_type: float = 0.5
    w_name: float = 0.5
    w_text: float = 1.0
    dars: float = 10_000.0
    dars_per_type: dict = field(default_factory=dict)
    rationale_span_only: bool = True
    matcher: MatcherConfig = MatcherConfig()

    def __post_init__(self):
        for name in ("r_format_value", "r_type_value", "w_click_type", "w_name", "w_text"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.dars < 1:
            raise ValueError("dars must be >= 1")
        for atype, value in self.dars_per_type.items():
            if value < 1:
                raise ValueError(f"dars override for {atype} must be >= 1")

    def dars_for(self, action_type: str) -> float:
        return float(self.dars_per_type.get(action_type, self.dars))


@dataclass(frozen=True)
class RewardBreakdown:
    """Components of one scored response. ``self_certainty_available`` is
    False when no token distribution accompanied the response (the term then
    contributes 0)."""

    r_format: float
    self_certainty: float
    self_certainty_available: bool
    r_type: float
    r_subaction: float
    dars: float
    total: float


@dataclass(frozen=True)
class ScoreDiagnostics:
    """Side-channel facts about how a response was scored."""

    parse_bucket: str
    type_matched: bool
    matched_components: tuple


def format_reward(raw: str, config: RewardConfig = RewardConfig()) -> float:
    """r_format_value when the raw text strict-parses as a valid envelope, else 0."""
    try:
        parse_response(raw, mode="strict")
    except FormatError:
        return 0.0
    return config.r_format_value


def _row_certainty(row, vocab_size: int) -> float:
    """Sum of p * ln(p / (1/|V|)) over one row, with 0*log0 = 0."""
    if isinstance(row, SparseRow):
        total = 0.0
        for _, prob in row.entries:
            if prob > 0.0:
                total += prob * math.log(prob * vocab_size)
        uncovered = vocab_size - len(row.entries)
        if uncovered > 0 and row.tail_mass > 0.0:
            per_entry = row.tail_mass / uncovered
            total += uncovered * per_entry * math.log(per_entry * vocab_size)
        return total
    total = 0.0
    for prob in row:
        if prob > 0.0:
            total += prob * math.log(prob * vocab_size)
    return total


def self_certainty(distribution: TokenDistribution) -> float:
    """Mean scaled KL divergence from uniform: (1/(N*|V|)) * sum of row KLs.

    Natural logarithm; sparse rows spread their tail mass uniformly over the
    uncovered vocabulary entries. Always >= 0; exactly 0 when every row is
    uniform.
    """
    distribution.validate()
    vocab = distribution.vocab_size
    total = sum(_row_certainty(row, vocab) for row in distribution.rows)
    value = total / (len(distribution.rows) * vocab)
    # Row KL is mathematically >= 0; clamp float dust so callers can rely on it.
    return max(0.0, value)


def type_reward(pred: Action | None, gt: Action, config: RewardConfig = RewardConfig()) -> float:
    """Base reward for matching the high-level action type."""
    if pred is not None and pred.type == gt.type:
        return config.r_type_value
    return 0.0


def _matched_components(pred: Action | None, gt: Action, config: RewardConfig) -> tuple:
    if pred is None or pred.type != gt.type:
        return ()
    matched = []
    if gt.type == "click":
        if pred.click_type == gt.click_type:
            matched.append("click_type")
        if normalize_text(pred.name) == normalize_text(gt.name):
            matched.append("name")
    elif gt.type == "input":
        if text_match(pred.text, gt.text, config.matcher):
            matched.append("text")
    return tuple(matched)


def subaction_reward(pred: Action | None, gt: Action, config: RewardConfig = RewardConfig()) -> float:
    """Fine-grained reward, unlocked only when the action types match.

    Clicks split into two weighted components (click subtype, target name);
    inputs have one (text, judged by the configured matcher); scrolls have no
    subaction components.
    """
    matched = _matched_components(pred, gt, config)
    reward = 0.0
    if "click_type" in matched:
        reward += config.w_click_type
    if "name" in matched:
        reward += config.w_name
    if "text" in matched:
        reward += config.w_text
    return reward


def _slice_span(distribution: TokenDistribution, span) -> TokenDistribution:
    start, end = span
    if not 0 <= start < end <= len(distribution.rows):
        raise InvalidDistribution(
            f"rationale span [{start}, {end}) out of range for {len(distribution.rows)} rows"
        )
    return TokenDistribution(distribution.vocab_size, distribution.rows[start:end])


def predicted_action(raw: str) -> Action | None:
    """The action a response predicts, or None when it has none in-grammar.

    Matches the evaluator's view: the envelope must classify into the grammar
    (prose-wrapped JSON does not count), parsing leniently once it does.
    """
    if classify_raw_type(raw) not in ("input", "click", "scroll"):
        return None
    return parse_response(raw, mode="lenient").action


def total_reward(
    raw: str,
    distribution: TokenDistribution | None,
    gt: Action,
    config: RewardConfig = RewardConfig(),
    rationale_span=None,
) -> RewardBreakdown:
    """Compose the four reward terms for one response.

    ``rationale_span`` restricts self-certainty to [start, end) row offsets
    when the config asks for rationale-only scoring; without a distribution
    the self-certainty term contributes 0 and is flagged unavailable.
    """
    r_format = format_reward(raw, config)

    certainty = 0.0
    available = distribution is not None
    if available:
        if rationale_span is not None and config.rationale_span_only:
            distribution = _slice_span(distribution, rationale_span)
        certainty = self_certainty(distribution)

    pred = predicted_action(raw)
    r_type = type_reward(pred, gt, config)
    r_subaction = subaction_reward(pred, gt, config)
    dars = config.dars_for(gt.type)
    return RewardBreakdown(
        r_format=r_format,
        self_certainty=certainty,
        self_certainty_available=available,
        r_type=r_type,
        r_subaction=r_subaction,
        dars=dars,
        total=r_format + certainty + r_type + dars * r_subaction,
    )


def score_response(
    raw: str,
    distribution: TokenDistribution | None,
    gt: Action,
    config: RewardConfig = RewardConfig(),
    rationale_span=None,
):
    """total_reward plus diagnostics (parse bucket, matched subaction components)."""
    breakdown = total_reward(raw, distribution, gt, config, rationale_span)
    pred = predicted_action(raw)
    return breakdown, ScoreDiagnostics(
        parse_bucket=classify_raw_type(raw),
        type_matched=pred is not None and pred.type == gt.type,
        matched_components=_matched_components(pred, gt, config),
    )

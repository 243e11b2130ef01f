"""shopsim: web-shopper behavior simulation toolkit.

Turns raw recorded shopping sessions into model-ready examples, synthesizes
rationale annotations, scores model outputs with a hierarchical reward, and
evaluates prediction logs. The reward engine is also exposed as an HTTP
batch-scoring service for RL training loops (see shopsim.service).
"""

__version__ = "0.1.0"

from .actions import (
    ACTION_TYPES,
    CLICK_TYPES,
    Action,
    FormatError,
    ModelResponse,
    classify_raw_type,
    parse_action,
    parse_response,
    serialize_action,
)
from .evaluation import EvalReport, MatcherConfig, compute_metrics, exact_match
from .rewards import (
    RewardBreakdown,
    RewardConfig,
    SparseRow,
    TokenDistribution,
    format_reward,
    self_certainty,
    subaction_reward,
    total_reward,
    type_reward,
)

__all__ = [
    "ACTION_TYPES",
    "CLICK_TYPES",
    "Action",
    "EvalReport",
    "FormatError",
    "MatcherConfig",
    "ModelResponse",
    "RewardBreakdown",
    "RewardConfig",
    "SparseRow",
    "TokenDistribution",
    "classify_raw_type",
    "compute_metrics",
    "exact_match",
    "format_reward",
    "parse_action",
    "parse_response",
    "self_certainty",
    "serialize_action",
    "subaction_reward",
    "total_reward",
    "type_reward",
    "__version__",
]

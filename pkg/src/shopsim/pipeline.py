"""Session preprocessing: raw recorded sessions to model-ready examples.

A raw session is one user's ordered sequence of observations (DOM snapshot +
viewport + screenshot reference) with the low-level browser events recorded
on each. The pipeline simplifies and viewport-prunes the HTML, distills
events into the three-action grammar (merging scroll runs and keyinput
bursts), windows history into per-step training examples, and splits the
result at session granularity.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field

from .actions import CLICK_TYPES, Action, action_dict, parse_action, serialize_action
from .dom import (
    KEPT_ATTRS,
    DomNode,
    Viewport,
    node_from_dict,
    node_index,
    prune_to_viewport,
    render_html,
    simplify_html,
)

EVENT_KINDS = ("click", "keyinput", "scroll", "other")

# Default history window: three past steps alongside the current observation.
DEFAULT_HISTORY_WINDOW = 3

# Character budget for one query. Calibrated for roughly a 25k-token context
# at ~4 characters per token.
DEFAULT_CHAR_BUDGET = 100_000


class DistillError(Exception):
    """Raised when a recorded event cannot be distilled into the grammar."""


@dataclass
class RawEvent:
    """One recorded browser event. ``payload`` holds the field text for
    keyinput events and the scroll delta for scroll events. ``target`` is the
    resolved DOM node when the recording carries a target id."""

    timestamp: float
    kind: str
    target_id: str | None = None
    payload: str | float | None = None
    click_label: str | None = None
    target: DomNode | None = None


@dataclass
class SessionStep:
    """One ⟨observation, action, rationale⟩ tuple after distillation."""

    step: int
    pruned_html: str
    screenshot_ref: str
    action: Action
    rationale: str | None = None


@dataclass
class Session:
    session_id: str
    steps: list = field(default_factory=list)


@dataclass
class HistoryItem:
    step: int
    html: str
    action: Action
    rationale: str | None


@dataclass
class TrainingExample:
    """Windowed query (history + current observation) with its target."""

    session_id: str
    step: int
    history: list
    current_html: str
    screenshot_ref: str
    rationale: str | None
    action: Action


@dataclass(frozen=True)
class ClickRule:
    """One row of the click-subtype fallback table. A rule matches when the
    target's tag equals ``tag`` (if set) and each (attribute, substring) pair
    matches case-insensitively. The pseudo-attribute ``text`` matches the
    node's text content."""

    click_type: str
    tag: str | None = None
    attr_contains: tuple = ()

    def matches(self, node: DomNode) -> bool:
        if self.tag is not None and node.tag.lower() != self.tag:
            return False
        for attr, needle in self.attr_contains:
            haystack = node.text if attr == "text" else str(node.attrs.get(attr, ""))
            if needle.lower() not in haystack.lower():
                return False
        return True


# Applied in order, first match wins; used only when the recording carries no
# subtype label. Coverage of recorded labels varies, so this is a best-effort
# fallback ending in "other".
DEFAULT_CLICK_RULES = (
    ClickRule("purchase", attr_contains=(("text", "add to cart"),)),
    ClickRule("purchase", attr_contains=(("text", "buy now"),)),
    ClickRule("purchase", attr_contains=(("text", "checkout"),)),
    ClickRule("purchase", attr_contains=(("id", "buy"),)),
    ClickRule("search", tag="input", attr_contains=(("type", "search"),)),
    ClickRule("search", attr_contains=(("id", "search"),)),
    ClickRule("search", attr_contains=(("class", "search"),)),
    ClickRule("review", attr_contains=(("class", "review"),)),
    ClickRule("review", attr_contains=(("text", "review"),)),
    ClickRule("filter", attr_contains=(("class", "filter"),)),
    ClickRule("quantity", attr_contains=(("class", "quantity"),)),
    ClickRule("quantity", attr_contains=(("class", "qty"),)),
    ClickRule("product_option", attr_contains=(("class", "option"),)),
    ClickRule("product_option", attr_contains=(("class", "swatch"),)),
    ClickRule("cart_side_bar", attr_contains=(("class", "cart-sidebar"),)),
    ClickRule("suggested_term", attr_contains=(("class", "suggestion"),)),
    ClickRule("nav_bar", tag="nav"),
    ClickRule("nav_bar", attr_contains=(("class", "nav"),)),
    ClickRule("page_related", attr_contains=(("class", "pagination"),)),
    ClickRule("page_related", attr_contains=(("class", "carousel"),)),
    ClickRule("cart_page_select", tag="input", attr_contains=(("type", "checkbox"), ("class", "cart"))),
    ClickRule("product_link", tag="a", attr_contains=(("href", "/product"),)),
    ClickRule("product_link", tag="a", attr_contains=(("href", "/dp/"),)),
    ClickRule("product_link", attr_contains=(("class", "product"),)),
)


def resolve_target_name(node: DomNode | None) -> str | None:
    """Human-facing name for a click target, or None when nothing usable exists."""
    if node is None:
        return None
    for attr in ("aria-label", "name", "alt", "value"):
        value = node.attrs.get(attr)
        if value:
            return str(value)
    text = " ".join(node.text.split())
    if text:
        return text
    if node.attrs.get("id"):
        return str(node.attrs["id"])
    return None


def resolve_click_type(node: DomNode | None, rules=DEFAULT_CLICK_RULES) -> str:
    if node is not None:
        for rule in rules:
            if rule.matches(node):
                return rule.click_type
    return "other"


def _distill_click(event: RawEvent, rules) -> Action:
    name = resolve_target_name(event.target)
    if name is None:
        raise DistillError(
            f"click event at t={event.timestamp:g} has no resolvable target name"
        )
    label = event.click_label if event.click_label in CLICK_TYPES else None
    click_type = label or resolve_click_type(event.target, rules)
    return Action.click(click_type, name)


def distill_actions(events, rules=DEFAULT_CLICK_RULES) -> list:
    """Distill a time-ordered event stream into grammar actions.

    Keyinput bursts on one target (no intervening non-keyinput event) collapse
    into a single input whose text is the final recorded field text. Maximal
    runs of consecutive scroll events collapse into exactly one scroll. Events
    of kind ``other`` are dropped. The output never contains two adjacent
    scroll actions.
    """
    stream = [e for e in events if e.kind in ("click", "keyinput", "scroll")]
    actions: list[Action] = []
    i = 0
    while i < len(stream):
        event = stream[i]
        if event.kind == "scroll":
            while i < len(stream) and stream[i].kind == "scroll":
                i += 1
            actions.append(Action.scroll())
        elif event.kind == "keyinput":
            j = i
            while (
                j + 1 < len(stream)
                and stream[j + 1].kind == "keyinput"
                and stream[j + 1].target_id == event.target_id
            ):
                j += 1
            text = stream[j].payload if isinstance(stream[j].payload, str) else ""
            if text:
                actions.append(Action.input(text))
            i = j + 1
        else:
            actions.append(_distill_click(event, rules))
            i += 1

    # A dropped empty-text burst can leave two scroll runs touching.
    merged: list[Action] = []
    for action in actions:
        if action.type == "scroll" and merged and merged[-1].type == "scroll":
            continue
        merged.append(action)
    return merged


def _event_from_dict(data: dict, nodes: dict) -> RawEvent:
    kind = data.get("kind", "other")
    payload = data.get("text") if kind == "keyinput" else data.get("delta")
    target_id = data.get("target_id")
    return RawEvent(
        timestamp=float(data.get("t", 0)),
        kind=kind if kind in EVENT_KINDS else "other",
        target_id=target_id,
        payload=payload,
        click_label=data.get("click_label"),
        target=nodes.get(target_id) if target_id else None,
    )


def process_raw_session(raw: dict, kept_attrs=KEPT_ATTRS, rules=DEFAULT_CLICK_RULES) -> Session:
    """Turn one raw recorded session into distilled, viewport-pruned steps.

    Each raw observation may distill into several actions; every action gets
    its own step sharing that observation. Scroll merging never crosses an
    observation boundary. A recorded rationale on an observation attaches to
    its last distilled action (the one causing the transition) and is never
    overwritten later.
    """
    session = Session(session_id=str(raw["session_id"]))
    step = 1
    for obs in raw["steps"]:
        dom = node_from_dict(obs["dom"])
        viewport = Viewport(**obs["viewport"])
        pruned = prune_to_viewport(simplify_html(dom, kept_attrs), viewport)
        html = render_html(pruned, attr_order=kept_attrs)
        nodes = node_index(dom)
        events = [_event_from_dict(e, nodes) for e in obs.get("events", [])]
        events.sort(key=lambda e: e.timestamp)
        actions = distill_actions(events, rules)
        rationale = obs.get("rationale")
        for pos, action in enumerate(actions):
            last = pos == len(actions) - 1
            session.steps.append(
                SessionStep(
                    step=step,
                    pruned_html=html,
                    screenshot_ref=str(obs.get("screenshot_ref", "")),
                    action=action,
                    rationale=rationale if last else None,
                )
            )
            step += 1
    return session


def load_raw_sessions(path) -> list:
    """Read raw-session JSONL: one session object per line."""
    sessions = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                sessions.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: invalid JSON: {exc.msg}") from exc
    return sessions


def _query_chars(history, current_html) -> int:
    total = len(current_html)
    for item in history:
        total += len(item.html) + len(serialize_action(item.action))
        if item.rationale:
            total += len(item.rationale)
    return total


def _fit_to_budget(history, current_html, budget):
    """Drop the oldest history triple first; when none remain, truncate the
    remaining HTML from the top."""
    history = list(history)
    while history and _query_chars(history, current_html) > budget:
        history.pop(0)
    overflow = _query_chars(history, current_html) - budget
    if overflow > 0:
        current_html = current_html[overflow:]
    return history, current_html


def build_examples(
    session: Session,
    history_window: int | None = DEFAULT_HISTORY_WINDOW,
    char_budget: int | None = DEFAULT_CHAR_BUDGET,
) -> list:
    """One example per step; history holds up to ``history_window`` strictly
    preceding steps of the same session (None means full history)."""
    steps = sorted(session.steps, key=lambda s: s.step)
    examples = []
    for idx, current in enumerate(steps):
        lo = 0 if history_window is None else max(0, idx - history_window)
        history = [
            HistoryItem(past.step, past.pruned_html, past.action, past.rationale)
            for past in steps[lo:idx]
        ]
        current_html = current.pruned_html
        if char_budget is not None:
            history, current_html = _fit_to_budget(history, current_html, char_budget)
        examples.append(
            TrainingExample(
                session_id=session.session_id,
                step=current.step,
                history=history,
                current_html=current_html,
                screenshot_ref=current.screenshot_ref,
                rationale=current.rationale,
                action=current.action,
            )
        )
    return examples


def split_dataset(examples, seed: int, ratio: float):
    """Split examples into (train, test) at session granularity.

    No session appears on both sides, and the same seed always produces the
    same split. ``ratio`` is the fraction of sessions assigned to train.
    """
    session_ids = sorted({ex.session_id for ex in examples})
    rng = random.Random(seed)
    rng.shuffle(session_ids)
    n_train = int(round(ratio * len(session_ids)))
    train_ids = set(session_ids[:n_train])
    train = [ex for ex in examples if ex.session_id in train_ids]
    test = [ex for ex in examples if ex.session_id not in train_ids]
    return train, test


def action_type_counts(examples) -> dict:
    counts = {"input": 0, "click": 0, "scroll": 0}
    for ex in examples:
        counts[ex.action.type] += 1
    return counts


def example_to_dict(ex: TrainingExample) -> dict:
    return {
        "session_id": ex.session_id,
        "step": ex.step,
        "query": {
            "history": [
                {
                    "step": item.step,
                    "html": item.html,
                    "action": action_dict(item.action),
                    "rationale": item.rationale,
                }
                for item in ex.history
            ],
            "current_html": ex.current_html,
            "screenshot_ref": ex.screenshot_ref,
        },
        "target": {"rationale": ex.rationale, "action": action_dict(ex.action)},
    }


def example_from_dict(data: dict) -> TrainingExample:
    query = data["query"]
    return TrainingExample(
        session_id=data["session_id"],
        step=data["step"],
        history=[
            HistoryItem(
                step=item["step"],
                html=item["html"],
                action=parse_action(item["action"]),
                rationale=item.get("rationale"),
            )
            for item in query.get("history", [])
        ],
        current_html=query["current_html"],
        screenshot_ref=query["screenshot_ref"],
        rationale=data["target"].get("rationale"),
        action=parse_action(data["target"]["action"]),
    )


def emit_jsonl(examples, path) -> None:
    """Write examples as JSONL (UTF-8, LF line endings, canonical action encoding)."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for ex in examples:
                handle.write(json.dumps(example_to_dict(ex), ensure_ascii=False))
                handle.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing examples to {path}: {exc}") from exc


def load_examples(path) -> list:
    examples = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                examples.append(example_from_dict(json.loads(line)))
    return examples


def write_distribution_csv(train, test, path) -> None:
    """Action type × split counts, one row per split."""
    train_counts = action_type_counts(train)
    test_counts = action_type_counts(test)
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["split", "input", "click", "scroll"])
            writer.writerow(["train", train_counts["input"], train_counts["click"], train_counts["scroll"]])
            writer.writerow(["test", test_counts["input"], test_counts["click"], test_counts["scroll"]])
    except OSError as exc:
        raise OSError(f"failed writing distribution to {path}: {exc}") from exc


def format_distribution_table(train, test) -> str:
    """Plain-text action-type count table for terminal output."""
    train_counts = action_type_counts(train)
    test_counts = action_type_counts(test)
    lines = [
        f"{'split':<8}{'input':>8}{'click':>8}{'scroll':>8}",
        f"{'train':<8}{train_counts['input']:>8}{train_counts['click']:>8}{train_counts['scroll']:>8}",
        f"{'test':<8}{test_counts['input']:>8}{test_counts['click']:>8}{test_counts['scroll']:>8}",
    ]
    return "\n".join(lines)

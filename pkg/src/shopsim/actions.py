"""Action grammar for web-shopper behavior simulation.

Three action types cover a shopping session: typing text into an input
field, clicking a named element (with a semantic click subtype), and
scrolling. Model responses wrap an action together with a one-sentence
first-person rationale in a JSON envelope with exactly two keys,
``rationale`` and ``action``. This encoding is the wire format shared by
the dataset JSONL, the reward service, and evaluation logs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

ACTION_TYPES = ("input", "click", "scroll")

CLICK_TYPES = (
    "purchase",
    "search",
    "review",
    "filter",
    "quantity",
    "product_option",
    "cart_side_bar",
    "suggested_term",
    "nav_bar",
    "page_related",
    "cart_page_select",
    "product_link",
    "other",
)

# Buckets used when sorting arbitrary model output, including junk.
CLASSIFY_BUCKETS = ("input", "click", "scroll", "others", "incorrect_format")


class FormatError(ValueError):
    """Raised when text does not parse into a valid rationale+action envelope."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class Action:
    """One action in the grammar. Fields outside the variant stay None.

    - input: carries ``text`` only.
    - click: carries ``click_type`` and ``name``.
    - scroll: carries nothing.
    """

    type: str
    text: str | None = None
    click_type: str | None = None
    name: str | None = None

    def __post_init__(self):
        if self.type == "input":
            if not self.text:
                raise ValueError("input action requires nonempty text")
            if self.click_type is not None or self.name is not None:
                raise ValueError("input action carries text only")
        elif self.type == "click":
            if self.click_type not in CLICK_TYPES:
                raise ValueError(f"unknown click_type: {self.click_type!r}")
            if not self.name:
                raise ValueError("click action requires nonempty name")
            if self.text is not None:
                raise ValueError("click action carries no text")
        elif self.type == "scroll":
            if self.text is not None or self.click_type is not None or self.name is not None:
                raise ValueError("scroll action carries no fields")
        else:
            raise ValueError(f"unknown action type: {self.type!r}")

    @classmethod
    def input(cls, text: str) -> "Action":
        return cls(type="input", text=text)

    @classmethod
    def click(cls, click_type: str, name: str) -> "Action":
        return cls(type="click", click_type=click_type, name=name)

    @classmethod
    def scroll(cls) -> "Action":
        return cls(type="scroll")


@dataclass(frozen=True)
class ModelResponse:
    """Parsed rationale+action envelope."""

    rationale: str
    action: Action


def action_dict(action: Action) -> dict:
    """Action as a plain dict in canonical key order (type first)."""
    if action.type == "input":
        return {"type": "input", "text": action.text}
    if action.type == "click":
        return {"type": "click", "click_type": action.click_type, "name": action.name}
    return {"type": "scroll"}


def serialize_action(action: Action) -> str:
    """Canonical JSON text for an action: fixed key order, compact spacing.

    ``parse_action(serialize_action(a))`` returns an equal action for every
    valid action.
    """
    return json.dumps(action_dict(action), ensure_ascii=False, separators=(",", ":"))


def serialize_response(response: ModelResponse) -> str:
    """Canonical JSON text for a full rationale+action envelope."""
    payload = {"rationale": response.rationale, "action": action_dict(response.action)}
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":"))


def _parse_action_object(obj, strict: bool) -> Action:
    if not isinstance(obj, dict):
        raise FormatError(f"action must be a JSON object, got {type(obj).__name__}")
    atype = obj.get("type")
    if not isinstance(atype, str):
        raise FormatError("action has no string 'type' field")
    if atype not in ACTION_TYPES:
        raise FormatError(f"unknown action type: {atype!r}")

    if atype == "input":
        allowed = {"type", "text"}
        text = obj.get("text")
        if not isinstance(text, str) or text == "":
            raise FormatError("input action requires nonempty string 'text'")
        if strict and set(obj) - allowed:
            raise FormatError(f"unexpected action keys: {sorted(set(obj) - allowed)}")
        return Action.input(text)

    if atype == "click":
        allowed = {"type", "click_type", "name"}
        click_type = obj.get("click_type")
        if not isinstance(click_type, str) or click_type not in CLICK_TYPES:
            raise FormatError(f"unknown click_type: {click_type!r}")
        name = obj.get("name")
        if not isinstance(name, str) or name == "":
            raise FormatError("click action requires nonempty string 'name'")
        if strict and set(obj) - allowed:
            raise FormatError(f"unexpected action keys: {sorted(set(obj) - allowed)}")
        return Action.click(click_type, name)

    if strict and set(obj) - {"type"}:
        raise FormatError(f"unexpected action keys: {sorted(set(obj) - {'type'})}")
    return Action.scroll()


def parse_action(value: str | dict, mode: str = "strict") -> Action:
    """Parse a bare action from canonical JSON text or an already-decoded dict."""
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown parse mode: {mode!r}")
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError as exc:
            raise FormatError(f"action is not valid JSON: {exc.msg}") from exc
    return _parse_action_object(value, strict=mode == "strict")


def _extract_embedded_object(raw: str) -> dict:
    """Return the first balanced JSON object embedded anywhere in raw text."""
    start = raw.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for pos in range(start, len(raw)):
            ch = raw[pos]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
            elif ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        obj = json.loads(raw[start : pos + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(obj, dict):
                        return obj
                    break
        start = raw.find("{", start + 1)
    raise FormatError("no JSON object found in text")


def parse_response(raw: str, mode: str = "strict") -> ModelResponse:
    """Parse raw model output into a rationale+action envelope.

    Strict mode requires a single top-level JSON object with exactly the keys
    ``rationale`` and ``action``, a nonempty rationale, and a schema-valid
    action with no extra keys. Lenient mode tolerates extra keys and an empty
    rationale, and additionally extracts the first balanced JSON object when
    the raw text is prose-wrapped.

    Raises FormatError with a reason for any malformation.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown parse mode: {mode!r}")
    strict = mode == "strict"

    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        if strict:
            raise FormatError(f"not valid JSON: {exc.msg}") from exc
        data = _extract_embedded_object(raw)

    if not isinstance(data, dict):
        raise FormatError(f"top-level JSON must be an object, got {type(data).__name__}")
    if "rationale" not in data or "action" not in data:
        missing = {"rationale", "action"} - set(data)
        raise FormatError(f"missing envelope keys: {sorted(missing)}")
    if strict and set(data) != {"rationale", "action"}:
        raise FormatError(f"unexpected envelope keys: {sorted(set(data) - {'rationale', 'action'})}")

    rationale = data["rationale"]
    if not isinstance(rationale, str):
        raise FormatError("rationale must be a string")
    if strict and rationale == "":
        raise FormatError("rationale is empty")

    action = _parse_action_object(data["action"], strict=strict)
    return ModelResponse(rationale=rationale, action=action)


def classify_raw_type(raw: str) -> str:
    """Sort arbitrary model output into one of five buckets.

    ``incorrect_format`` covers structural failures of the envelope (not JSON,
    wrong envelope shape). ``others`` covers envelopes whose action falls
    outside the grammar (unknown type, or an in-grammar type with invalid
    fields). Otherwise the parsed action type is returned. Never raises.
    """
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, TypeError):
        return "incorrect_format"
    if not isinstance(data, dict):
        return "incorrect_format"
    if "rationale" not in data or "action" not in data:
        return "incorrect_format"
    if not isinstance(data["rationale"], str) or not isinstance(data["action"], dict):
        return "incorrect_format"
    atype = data["action"].get("type")
    if not isinstance(atype, str):
        return "incorrect_format"
    if atype not in ACTION_TYPES:
        return "others"
    try:
        _parse_action_object(data["action"], strict=False)
    except FormatError:
        return "others"
    return atype

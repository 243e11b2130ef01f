"""Shared generators and independent oracles used across the test suite.

Oracles here deliberately re-derive expected values by a different route
than the library (direct summation, brute-force filtering, groupby merges)
so tests never compare an implementation against itself.
"""

from __future__ import annotations

import json
import math
import random

from shopsim.actions import CLICK_TYPES, Action, action_dict
from shopsim.rewards import SparseRow, TokenDistribution

_WORDS = (
    "wireless", "keyboard", "price", "reviews", "cart", "quiet", "ergonomic",
    "compare", "options", "deliver", "tomorrow", "café", "☕", "niño", "groß",
)


def random_text(rng: random.Random, lo=1, hi=5) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(rng.randint(lo, hi)))


def random_action(rng: random.Random) -> Action:
    kind = rng.choice(("input", "click", "scroll"))
    if kind == "input":
        return Action.input(random_text(rng))
    if kind == "click":
        return Action.click(rng.choice(CLICK_TYPES), random_text(rng))
    return Action.scroll()


def envelope_text(rng: random.Random, action: Action | None = None, rationale: str | None = None) -> str:
    """A strictly valid envelope with randomized (legal) JSON formatting."""
    action = action or random_action(rng)
    rationale = rationale if rationale is not None else "I " + random_text(rng) + "."
    payload = {"rationale": rationale, "action": action_dict(action)}
    if rng.random() < 0.3:
        payload = {"action": action_dict(action), "rationale": rationale}
    style = rng.random()
    if style < 0.4:
        return json.dumps(payload, ensure_ascii=False, separators=(",", ":"))
    if style < 0.7:
        return json.dumps(payload, ensure_ascii=False)
    return json.dumps(payload, ensure_ascii=False, indent=2)


def _set_in_action(text: str, key: str, value) -> str:
    data = json.loads(text)
    data["action"][key] = value
    return json.dumps(data, ensure_ascii=False)


_MALFORMATION_KINDS = 14


def malformed_text(rng: random.Random, index: int | None = None) -> str:
    """One guaranteed strict-mode-invalid sample, mutated from a valid one."""
    kind = rng.randrange(_MALFORMATION_KINDS) if index is None else index % _MALFORMATION_KINDS
    base = envelope_text(rng, Action.click(rng.choice(CLICK_TYPES), random_text(rng)))
    data = json.loads(base)

    if kind == 0:
        return base[:-1]
    if kind == 1:
        del data["action"]
    elif kind == 2:
        del data["rationale"]
    elif kind == 3:
        data["rational"] = data.pop("rationale")
    elif kind == 4:
        data["action"]["type"] = rng.choice(("hover", "drag", "Click", "swipe"))
    elif kind == 5:
        data["action"]["click_type"] = rng.choice(("CLICK", "navbar", "Purchase", ""))
    elif kind == 6:
        data["action"]["name"] = rng.choice((7, None, ["x"]))
    elif kind == 7:
        return "Sure! Here is the action: " + base
    elif kind == 8:
        data["confidence"] = 0.9
    elif kind == 9:
        data["action"]["extra_field"] = 1
    elif kind == 10:
        data["rationale"] = ""
    elif kind == 11:
        return base.replace('"', "'")
    elif kind == 12:
        return base + " trailing words"
    elif kind == 13:
        del data["action"]["name"]
    return json.dumps(data, ensure_ascii=False)


def self_certainty_oracle(vocab_size: int, dense_rows) -> float:
    """Direct summation of (1/(N|V|)) sum p*ln(p/U) with 0*log0 = 0."""
    uniform = 1.0 / vocab_size
    total = 0.0
    for row in dense_rows:
        for p in row:
            if p > 0.0:
                total += p * math.log(p / uniform)
    return total / (len(dense_rows) * vocab_size)


def densify(distribution: TokenDistribution):
    """Expand sparse rows (tail spread uniformly over uncovered entries)."""
    dense_rows = []
    for row in distribution.rows:
        if isinstance(row, SparseRow):
            dense = [0.0] * distribution.vocab_size
            for index, prob in row.entries:
                dense[index] = prob
            uncovered = distribution.vocab_size - len(row.entries)
            if uncovered:
                share = row.tail_mass / uncovered
                for i in range(distribution.vocab_size):
                    if dense[i] == 0.0 and not any(e[0] == i for e in row.entries):
                        dense[i] = share
            dense_rows.append(dense)
        else:
            dense_rows.append(list(row))
    return dense_rows


def random_dense_row(rng: random.Random, vocab_size: int):
    shape = rng.random()
    if shape < 0.15:
        return [1.0 / vocab_size] * vocab_size
    if shape < 0.3:
        row = [0.0] * vocab_size
        row[rng.randrange(vocab_size)] = 1.0
        return row
    weights = [rng.random() for _ in range(vocab_size)]
    total = sum(weights)
    return [w / total for w in weights]


def random_sparse_row(rng: random.Random, vocab_size: int) -> SparseRow:
    k = rng.randint(1, vocab_size - 1)
    indices = rng.sample(range(vocab_size), k)
    weights = [rng.random() for _ in range(k + 1)]
    total = sum(weights)
    probs = [w / total for w in weights]
    entries = tuple(zip(indices, probs[:k]))
    return SparseRow(entries=entries, tail_mass=probs[k])


def random_distribution(rng: random.Random, max_positions=8, max_vocab=64) -> TokenDistribution:
    vocab_size = rng.randint(2, max_vocab)
    positions = rng.randint(1, max_positions)
    rows = [
        random_sparse_row(rng, vocab_size) if rng.random() < 0.5 else random_dense_row(rng, vocab_size)
        for _ in range(positions)
    ]
    return TokenDistribution(vocab_size=vocab_size, rows=rows)


def rects_intersect_oracle(a, b) -> bool:
    """Independent positive-area overlap check over (x, y, w, h) tuples."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    left, right = max(ax, bx), min(ax + aw, bx + bw)
    top, bottom = max(ay, by), min(ay + ah, by + bh)
    return right - left > 0 and bottom - top > 0


def merged_kinds_oracle(kinds) -> list:
    """Expected distilled action-kind sequence via an independent groupby pass.

    Mirrors the distillation contract: drop "other", collapse scroll runs,
    and treat each (keyinput, target) burst as one input. Input bursts with
    empty final text disappear, which may rejoin two scroll runs.
    """
    kept = [k for k in kinds if k[0] != "other"]
    out = []
    i = 0
    while i < len(kept):
        kind = kept[i][0]
        if kind == "scroll":
            while i < len(kept) and kept[i][0] == "scroll":
                i += 1
            out.append("scroll")
        elif kind == "keyinput":
            target = kept[i][1]
            last = kept[i]
            while i + 1 < len(kept) and kept[i + 1][0] == "keyinput" and kept[i + 1][1] == target:
                i += 1
                last = kept[i]
            if last[2]:
                out.append("input")
            i += 1
        else:
            out.append("click")
            i += 1
    collapsed = []
    for kind in out:
        if kind == "scroll" and collapsed and collapsed[-1] == "scroll":
            continue
        collapsed.append(kind)
    return collapsed

"""DOM snapshot handling: simplification, viewport pruning, and rendering.

Snapshots arrive as node trees with page-coordinate bounding rects. The
pipeline strips non-content machinery (scripts, styling metadata), drops
everything outside the visible viewport while keeping ancestors so the tree
stays well formed, and renders the result as compact HTML text.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Tags that carry no page content worth showing to a model.
DROPPED_TAGS = frozenset({"script", "style", "meta", "link", "noscript", "template"})
COMMENT_TAG = "#comment"

# Attribute allowlist applied during simplification; everything else
# (inline styles, event handlers, tracking attributes) is removed.
KEPT_ATTRS = ("id", "class", "href", "alt", "aria-label", "name", "type", "value")

VOID_TAGS = frozenset(
    {"area", "base", "br", "col", "embed", "hr", "img", "input", "source", "track", "wbr"}
)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned box in CSS pixels, page coordinates. May be zero-area."""

    x: float
    y: float
    width: float
    height: float

    def intersects(self, other: "Rect") -> bool:
        """True when the overlap has positive area (edge contact is not enough)."""
        overlap_w = min(self.x + self.width, other.x + other.width) - max(self.x, other.x)
        overlap_h = min(self.y + self.height, other.y + other.height) - max(self.y, other.y)
        return overlap_w > 0 and overlap_h > 0


@dataclass(frozen=True)
class Viewport:
    """Visible page rectangle: scroll offset plus window dimensions."""

    scroll_x: float
    scroll_y: float
    width: float
    height: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("viewport width and height must be positive")

    def rect(self) -> Rect:
        return Rect(self.scroll_x, self.scroll_y, self.width, self.height)


@dataclass
class DomNode:
    node_id: str
    tag: str
    attrs: dict = field(default_factory=dict)
    text: str = ""
    rect: Rect = Rect(0.0, 0.0, 0.0, 0.0)
    children: list = field(default_factory=list)

    def iter_nodes(self):
        yield self
        for child in self.children:
            yield from child.iter_nodes()


def node_from_dict(data: dict) -> DomNode:
    """Build a node tree from its JSON form ({id, tag, attrs, text, rect, children})."""
    rect = data.get("rect") or [0, 0, 0, 0]
    return DomNode(
        node_id=str(data.get("id", "")),
        tag=data.get("tag", "div"),
        attrs=dict(data.get("attrs") or {}),
        text=data.get("text", ""),
        rect=Rect(float(rect[0]), float(rect[1]), float(rect[2]), float(rect[3])),
        children=[node_from_dict(c) for c in data.get("children") or []],
    )


def node_index(root: DomNode) -> dict:
    """Map node_id -> node over the whole tree."""
    return {node.node_id: node for node in root.iter_nodes() if node.node_id}


def _removable(node: DomNode) -> bool:
    return node.tag.lower() in DROPPED_TAGS or node.tag == COMMENT_TAG


def simplify_html(root: DomNode, kept_attrs=KEPT_ATTRS) -> DomNode:
    """Strip script/style/meta/link/noscript/template subtrees and comments,
    and keep only allowlisted attributes. Tag hierarchy and text survive.

    The root itself is always retained: it is the document container.
    """
    kept = set(kept_attrs)

    def walk(node: DomNode) -> DomNode:
        children = [walk(c) for c in node.children if not _removable(c)]
        attrs = {k: v for k, v in node.attrs.items() if k in kept}
        return DomNode(node.node_id, node.tag, attrs, node.text, node.rect, children)

    return walk(root)


def prune_to_viewport(root: DomNode, viewport: Viewport) -> DomNode:
    """Keep nodes whose rect intersects the viewport with positive area, plus
    their ancestor chain; drop every other subtree.

    Partially visible elements count as visible. The root is always retained
    so the result is a valid tree.
    """
    vp_rect = viewport.rect()

    def walk(node: DomNode) -> DomNode | None:
        children = [kept for c in node.children if (kept := walk(c)) is not None]
        if children or node.rect.intersects(vp_rect):
            return DomNode(node.node_id, node.tag, dict(node.attrs), node.text, node.rect, children)
        return None

    pruned = walk(root)
    if pruned is None:
        # Nothing visible at all: degenerate but valid single-node tree.
        pruned = DomNode(root.node_id, root.tag, dict(root.attrs), root.text, root.rect, [])
    return pruned


def every_leaf_intersects(root: DomNode, viewport: Viewport) -> bool:
    """Check the pruning invariant: every leaf of the tree is (partially) visible."""
    vp_rect = viewport.rect()
    return all(
        node.rect.intersects(vp_rect) for node in root.iter_nodes() if not node.children
    )


def _escape_text(value: str) -> str:
    return value.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _escape_attr(value: str) -> str:
    return _escape_text(value).replace('"', "&quot;")


def render_html(root: DomNode, attr_order=KEPT_ATTRS) -> str:
    """Serialize a node tree to compact deterministic HTML.

    Attributes are emitted in ``attr_order`` first, then any remaining ones
    sorted by name, so identical trees always produce identical bytes.
    """
    out: list[str] = []

    def emit_attrs(node: DomNode) -> str:
        parts = []
        for key in attr_order:
            if key in node.attrs:
                parts.append(f' {key}="{_escape_attr(str(node.attrs[key]))}"')
        for key in sorted(set(node.attrs) - set(attr_order)):
            parts.append(f' {key}="{_escape_attr(str(node.attrs[key]))}"')
        return "".join(parts)

    def walk(node: DomNode):
        tag = node.tag.lower()
        if tag in VOID_TAGS and not node.children and not node.text:
            out.append(f"<{tag}{emit_attrs(node)}>")
            return
        out.append(f"<{tag}{emit_attrs(node)}>")
        if node.text:
            out.append(_escape_text(node.text))
        for child in node.children:
            walk(child)
        out.append(f"</{tag}>")

    walk(root)
    return "".join(out)

"""Binary split grammar: actions, parse trees and the recursive tree return."""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import NOPAINT, PAINT, LabelGrid, PredictionGrid, Region, leaf_correlation, split_region


class RuleKind(enum.IntEnum):
    SPLIT_X = 0
    SPLIT_Y = 1
    ASSIGN_PAINT = 2
    ASSIGN_NOPAINT = 3

    @property
    def is_split(self) -> bool:
        return self in (RuleKind.SPLIT_X, RuleKind.SPLIT_Y)

    @property
    def axis(self) -> str:
        if not self.is_split:
            raise ValueError(f"{self.name} has no split axis")
        return "x" if self is RuleKind.SPLIT_X else "y"

    @property
    def label(self) -> int:
        if self.is_split:
            raise ValueError(f"{self.name} assigns no label")
        return PAINT if self is RuleKind.ASSIGN_PAINT else NOPAINT

    @property
    def token(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def from_token(cls, token: str) -> "RuleKind":
        return cls[token.upper().replace("-", "_")]


N_RULES = len(RuleKind)


class IllegalActionError(ValueError):
    pass


class NodeStateError(RuntimeError):
    pass


class IncompleteTreeError(RuntimeError):
    pass


@dataclass(frozen=True)
class Action:
    kind: RuleKind
    l: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        if self.kind.is_split:
            if self.l is None or not 0.0 < self.l < 1.0:
                raise ValueError(f"split fraction must lie in (0, 1), got {self.l}")
            object.__setattr__(self, "l", float(self.l))
        elif self.l is not None:
            raise ValueError("assignment actions carry no split fraction")

    @classmethod
    def split(cls, axis: str, l: float) -> "Action":
        return cls(RuleKind.SPLIT_X if axis == "x" else RuleKind.SPLIT_Y, l)

    @classmethod
    def assign(cls, label: int) -> "Action":
        return cls(RuleKind.ASSIGN_PAINT if label == PAINT else RuleKind.ASSIGN_NOPAINT)


def split_offset(l: float, extent: int) -> int:
    """Map a fraction in (0, 1) to a pixel offset in [1, extent - 1]."""
    return int(min(max(round(l * extent), 1), extent - 1))


def legal_rules(region: Region, depth: int, max_depth: int) -> np.ndarray:
    """Boolean mask over RuleKind; splits need extent >= 2 and depth < max_depth."""
    mask = np.ones(N_RULES, dtype=bool)
    mask[RuleKind.SPLIT_X] = depth < max_depth and region.w >= 2
    mask[RuleKind.SPLIT_Y] = depth < max_depth and region.h >= 2
    return mask


@dataclass
class ParseNode:
    id: int
    region: Region
    depth: int
    parent: int | None = None
    action: Action | None = None
    children: tuple[int, ...] = ()

    @property
    def pending(self) -> bool:
        return self.action is None

    @property
    def terminal(self) -> bool:
        return self.action is not None and not self.action.kind.is_split

    @property
    def state(self) -> str:
        if self.action is None:
            return "pending"
        return "split" if self.action.kind.is_split else "terminal"

    @property
    def b(self) -> int | None:
        return self.action.kind.label if self.terminal else None


@dataclass
class ParseTree:
    """Append-only parse tree over a ``width x height`` grid; node 0 is the root."""

    width: int
    height: int
    max_depth: int = 7
    nodes: list[ParseNode] = field(default_factory=list)
    order: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max depth must be >= 1")
        if not self.nodes:
            self.nodes.append(ParseNode(0, Region(0, 0, self.width, self.height), 0))

    @classmethod
    def for_grid(cls, grid: LabelGrid, max_depth: int = 7) -> "ParseTree":
        return cls(grid.width, grid.height, max_depth)

    root = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def copy(self) -> "ParseTree":
        # regions and actions are immutable, so per-node shallow copies suffice
        nodes = [dataclasses.replace(n) for n in self.nodes]
        return ParseTree(self.width, self.height, self.max_depth, nodes, list(self.order))

    def legal_rules(self, node: int) -> np.ndarray:
        n = self.nodes[node]
        return legal_rules(n.region, n.depth, self.max_depth)

    def leaves(self) -> list[ParseNode]:
        return [n for n in self.nodes if not n.children]

    @property
    def complete(self) -> bool:
        return all(not n.pending for n in self.nodes)

    def __eq__(self, other):
        if not isinstance(other, ParseTree):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    # serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            a = None if n.action is None else {"kind": n.action.kind.token, "l": n.action.l}
            nodes.append({
                "id": n.id,
                "region": n.region.as_list(),
                "depth": n.depth,
                "state": n.state,
                "action": a,
                "children": list(n.children),
                "b": n.b,
            })
        return {"width": self.width, "height": self.height, "max_depth": self.max_depth,
                "order": list(self.order), "nodes": nodes}

    @classmethod
    def from_dict(cls, d: dict) -> "ParseTree":
        nodes = []
        parents = {}
        for nd in d["nodes"]:
            a = nd.get("action")
            action = None if a is None else Action(RuleKind.from_token(a["kind"]), a["l"])
            node = ParseNode(nd["id"], Region(*nd["region"]), nd["depth"], None, action,
                             tuple(nd["children"]))
            nodes.append(node)
            for c in node.children:
                parents[c] = node.id
        for n in nodes:
            n.parent = parents.get(n.id)
        return cls(d["width"], d["height"], d["max_depth"], nodes, list(d["order"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ParseTree":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ParseTree":
        return cls.from_json(Path(path).read_text())


def apply_action(tree: ParseTree, node: int, action: Action) -> ParseTree:
    """Expand a pending node in place and return the tree."""
    n = tree.nodes[node]
    if not n.pending:
        raise NodeStateError(f"node {node} is already {n.state}")
    if action.kind.is_split:
        axis = action.kind.axis
        extent = n.region.extent(axis)
        if n.depth >= tree.max_depth:
            raise IllegalActionError(f"node {node} is at the depth cap {tree.max_depth}")
        if extent < 2:
            raise IllegalActionError(f"node {node} has a 1-px extent along {axis}")
        first, second = split_region(n.region, axis, split_offset(action.l, extent))
        ids = []
        for r in (first, second):
            ids.append(len(tree.nodes))
            tree.nodes.append(ParseNode(ids[-1], r, n.depth + 1, node))
        n.children = tuple(ids)
    n.action = action
    tree.order.append(node)
    return tree


def next_unexpanded(tree: ParseTree) -> int | None:
    """Deepest-leftmost pending node in depth-first order, or None when done."""
    stack = [tree.root]
    while stack:
        n = tree.nodes[stack.pop()]
        if n.pending:
            return n.id
        stack.extend(reversed(n.children))
    return None


def subtree_return(tree: ParseTree, node: int, grid: LabelGrid, gamma: float = 1.0):
    """Leaf correlation at terminals, (discounted) sum over children otherwise."""
    n = tree.nodes[node]
    if n.pending:
        raise IncompleteTreeError(f"node {node} is pending")
    if n.terminal:
        return leaf_correlation(grid, n.region, n.b)
    total = sum(subtree_return(tree, c, grid, gamma) for c in n.children)
    return total if gamma == 1.0 else gamma * total


def tree_to_prediction(tree: ParseTree) -> PredictionGrid:
    pred = np.zeros((tree.height, tree.width), dtype=np.int8)
    for n in tree.leaves():
        if n.pending:
            raise IncompleteTreeError(f"node {n.id} is pending")
        pred[n.region.slices()] = n.b
    return PredictionGrid(pred)

"""Information-gain-maximising expert parser.

The expert scores every interior pixel boundary of a region on both axes by
binary Shannon information gain and splits at the best one, assigning the
majority label once the region is pure or the depth cap is reached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grammar import Action, ParseTree, apply_action, next_unexpanded, split_offset, subtree_return
from .raster import NOPAINT, PAINT, InvalidSplitError, LabelGrid, Region, split_region

# gains closer than this count as ties
GAIN_TIE_TOL = 1e-12


class EmptyRegionError(ValueError):
    pass


@dataclass(frozen=True)
class SplitEvaluation:
    axis: str
    loc: int
    gain: float


def entropy(pos, total):
    """Binary entropy in bits of a region with ``pos`` positives out of ``total``.

    Accepts scalars or equal-shape arrays.
    """
    pos = np.asarray(pos, dtype=np.float64)
    total = np.asarray(total, dtype=np.float64)
    if np.any(total <= 0):
        raise EmptyRegionError("entropy of an empty region")
    if np.any(pos < 0) or np.any(pos > total):
        raise ValueError("positive count must lie in [0, total]")
    p = pos / total
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log2(p), 0.0) - np.where(q > 0, q * np.log2(q), 0.0)
    return float(h) if h.ndim == 0 else h


def _axis_counts(grid: LabelGrid, region: Region, axis: str) -> tuple[np.ndarray, np.ndarray]:
    """Positive and total pixel counts of the first child for loc = 1..extent-1."""
    t = grid._pos_table
    x0, y0, x1, y1 = region.x, region.y, region.x + region.w, region.y + region.h
    if axis == "x":
        cut = np.arange(x0 + 1, x1)
        pos = t[y1, cut] - t[y0, cut] - t[y1, x0] + t[y0, x0]
        tot = (cut - x0) * region.h
    else:
        cut = np.arange(y0 + 1, y1)
        pos = t[cut, x1] - t[cut, x0] - t[y0, x1] + t[y0, x0]
        tot = (cut - y0) * region.w
    return pos.astype(np.int64), tot.astype(np.int64)


def split_gains(grid: LabelGrid, region: Region, axis: str) -> np.ndarray:
    """Information gain for every candidate offset 1..extent-1 along ``axis``."""
    grid.check(region)
    n = region.area
    n_pos = grid.positive_count(region)
    left_pos, left_n = _axis_counts(grid, region, axis)
    if left_n.size == 0:
        return np.zeros(0)
    right_pos, right_n = n_pos - left_pos, n - left_n
    return (entropy(n_pos, n)
            - (left_n / n) * entropy(left_pos, left_n)
            - (right_n / n) * entropy(right_pos, right_n))


def information_gain(grid: LabelGrid, region: Region, axis: str, loc: int) -> float:
    if not 1 <= loc <= region.extent(axis) - 1:
        raise InvalidSplitError(f"cannot split extent {region.extent(axis)} at {loc}")
    return float(split_gains(grid, region, axis)[loc - 1])


def best_split(grid: LabelGrid, region: Region) -> SplitEvaluation | None:
    """Maximal-gain split; ties go to the smaller offset, then axis x."""
    gx = split_gains(grid, region, "x")
    gy = split_gains(grid, region, "y")
    if gx.size + gy.size == 0:
        return None
    top = max(gx.max(initial=-np.inf), gy.max(initial=-np.inf))
    tied_x = np.flatnonzero(gx >= top - GAIN_TIE_TOL)
    tied_y = np.flatnonzero(gy >= top - GAIN_TIE_TOL)
    if tied_x.size and (not tied_y.size or tied_x[0] <= tied_y[0]):
        return SplitEvaluation("x", int(tied_x[0]) + 1, float(gx[tied_x[0]]))
    return SplitEvaluation("y", int(tied_y[0]) + 1, float(gy[tied_y[0]]))


def majority_label(grid: LabelGrid, region: Region) -> int:
    pos = grid.positive_count(region)
    return PAINT if 2 * pos > region.area else NOPAINT


def best_action(grid: LabelGrid, region: Region, depth: int, max_depth: int) -> Action:
    pos = grid.positive_count(region)
    if pos == 0 or pos == region.area or depth >= max_depth or region.area < 2:
        return Action.assign(majority_label(grid, region))
    # impure regions below the cap are always split, even at zero gain, so that
    # XOR-like layouts (where every single cut has zero gain) are still resolved
    split = best_split(grid, region)
    return Action.split(split.axis, split.loc / region.extent(split.axis))


class Oracle:
    """Queryable expert with a call counter (used to audit pure-RL learners)."""

    def __init__(self, max_depth: int = 7):
        self.max_depth = max_depth
        self.calls = 0

    def __call__(self, grid: LabelGrid, region: Region, depth: int) -> Action:
        self.calls += 1
        return best_action(grid, region, depth, self.max_depth)


def complete_with_expert(tree: ParseTree, grid: LabelGrid, oracle: Oracle | None = None,
                         stop_at: int | None = None) -> ParseTree:
    """Expand pending nodes with the expert until done.

    With ``stop_at`` only the subtree under that node is completed.
    """
    expert = oracle or Oracle(tree.max_depth)
    stack = [tree.root if stop_at is None else stop_at]
    # depth-first, first child first, matching next_unexpanded
    while stack:
        node = tree.nodes[stack.pop()]
        if node.pending:
            apply_action(tree, node.id, expert(grid, node.region, node.depth))
        stack.extend(reversed(node.children))
    return tree


def oracle_parse(grid: LabelGrid, max_depth: int = 7, oracle: Oracle | None = None) -> ParseTree:
    tree = ParseTree.for_grid(grid, max_depth)
    expert = oracle or Oracle(max_depth)
    node = next_unexpanded(tree)
    while node is not None:
        n = tree.nodes[node]
        apply_action(tree, node, expert(grid, n.region, n.depth))
        node = next_unexpanded(tree)
    return tree


def expert_rollout_return(tree: ParseTree, node: int, action: Action, grid: LabelGrid,
                          oracle: Oracle | None = None) -> int:
    """Return of the node's subtree after taking ``action`` then following the expert.

    Works on a private copy; ``tree`` is left untouched.
    """
    scratch = tree.copy()
    apply_action(scratch, node, action)
    complete_with_expert(scratch, grid, oracle, stop_at=node)
    return subtree_return(scratch, node, grid)


def expert_region_return(grid: LabelGrid, region: Region, depth: int, max_depth: int) -> int:
    """Return of the expert's own subtree rooted at a free-standing region."""
    action = best_action(grid, region, depth, max_depth)
    if not action.kind.is_split:
        pos = grid.positive_count(region)
        return action.kind.label * (2 * pos - region.area)
    axis = action.kind.axis
    a, b = split_region(region, axis, split_offset(action.l, region.extent(axis)))
    return (expert_region_return(grid, a, depth + 1, max_depth)
            + expert_region_return(grid, b, depth + 1, max_depth))


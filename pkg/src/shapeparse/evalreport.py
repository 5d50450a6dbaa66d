"""Greedy evaluation, pixel accuracy, comparison reports and parse rendering."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grammar import IncompleteTreeError, ParseTree, tree_to_prediction
from .raster import LabelGrid, PredictionGrid

# report row order
ALGORITHM_ORDER = ["Oracle", "MCPG", "DPG", "BC", "DAgger", "AggreVaTeD", "AC-AggreVaTeD",
                   "Off-MCPG", "Off-ACPG", "DRAG"]


def pixel_accuracy(pred: PredictionGrid, truth: LabelGrid) -> float:
    if pred.predicted.shape != truth.labels.shape:
        raise ValueError(f"extent mismatch: {pred.predicted.shape} vs {truth.labels.shape}")
    return float(np.mean(pred.predicted == truth.labels))


def tree_accuracy(tree: ParseTree, grid: LabelGrid) -> float:
    return pixel_accuracy(tree_to_prediction(tree), grid)


def majority_accuracy(grid: LabelGrid) -> float:
    """Accuracy of labelling every pixel with the item's majority class."""
    pos = float(np.mean(grid.labels == 1))
    return max(pos, 1.0 - pos)


@dataclass
class EvalResult:
    accuracies: list[float]
    algorithm: str = ""
    fold: int = 0
    trees: list[ParseTree] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")


def evaluate(policy, dataset, max_depth: int, algorithm: str = "", fold: int = 0) -> EvalResult:
    """Parse every item greedily and score the resulting labelling.

    ``policy`` is a LearnerPolicy (argmax rule, mean split) or any callable
    ``policy(grid, max_depth) -> ParseTree``.
    """
    from .env import LearnerPolicy, greedy_parse

    grids = [item[0] if isinstance(item, tuple) else item for item in dataset]
    accs, trees = [], []
    for grid in grids:
        if isinstance(policy, LearnerPolicy):
            tree = greedy_parse(grid, policy, max_depth)
        else:
            tree = policy(grid, max_depth)
        trees.append(tree)
        accs.append(tree_accuracy(tree, grid))
    return EvalResult(accs, algorithm, fold, trees)


# reports ------------------------------------------------------------------


def _order_key(row):
    alg = row["algorithm"]
    rank = ALGORITHM_ORDER.index(alg) if alg in ALGORITHM_ORDER else len(ALGORITHM_ORDER)
    return rank, alg, int(row["fold"])


def write_report_csv(rows: list[dict], path: str | Path) -> None:
    """Rows of (algorithm, fold, train_acc, test_acc) in report order."""
    rows = sorted(rows, key=_order_key)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "fold", "train_acc", "test_acc"])
        for r in rows:
            w.writerow([r["algorithm"], r["fold"], _fmt(r.get("train_acc")), _fmt(r.get("test_acc"))])


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.6f}"


def format_table(rows: list[dict]) -> str:
    """Plain-text table of fold-averaged train/test accuracy (percent)."""
    by_alg: dict[str, list[dict]] = {}
    for r in sorted(rows, key=_order_key):
        by_alg.setdefault(r["algorithm"], []).append(r)
    lines = [f"{'Model':<16}{'Train':>10}{'Test':>10}{'Folds':>7}"]
    for alg, rs in by_alg.items():
        tr = [r["train_acc"] for r in rs if r.get("train_acc") is not None]
        te = [r["test_acc"] for r in rs if r.get("test_acc") is not None]
        f = lambda xs: f"{100 * np.mean(xs):9.2f}%" if xs else f"{'---':>10}"
        lines.append(f"{alg:<16}{f(tr)}{f(te)}{len(rs):>7}")
    return "\n".join(lines) + "\n"


# rendering ----------------------------------------------------------------

PAINT_RGB = np.array([220.0, 30.0, 30.0])
NOPAINT_RGB = np.array([30.0, 60.0, 220.0])


def render_array(tree: ParseTree, grid: LabelGrid, scale: int = 4, alpha: float = 0.6):
    """RGB overlay and the number of leaf outlines drawn."""
    if not tree.complete:
        raise IncompleteTreeError("cannot render an incomplete tree")
    gray = grid.channels.mean(axis=2) * 255.0
    gray = np.repeat(np.repeat(gray, scale, axis=0), scale, axis=1)
    img = np.repeat(gray[:, :, None], 3, axis=2)
    outlines = []
    for leaf in tree.leaves():
        r = leaf.region
        ys = slice(r.y * scale, (r.y + r.h) * scale)
        xs = slice(r.x * scale, (r.x + r.w) * scale)
        color = PAINT_RGB if leaf.b == 1 else NOPAINT_RGB
        img[ys, xs] = alpha * color + (1 - alpha) * img[ys, xs]
        outlines.append((ys, xs))
    for ys, xs in outlines:
        img[ys.start, xs] = 0
        img[ys.stop - 1, xs] = 0
        img[ys, xs.start] = 0
        img[ys, xs.stop - 1] = 0
    return np.rint(img).astype(np.uint8), len(outlines)


def render(tree: ParseTree, grid: LabelGrid, out_path: str | Path, scale: int = 4,
           alpha: float = 0.6) -> int:
    """Write the overlay PNG; returns the number of leaf outlines drawn."""
    from PIL import Image

    img, n = render_array(tree, grid, scale, alpha)
    Image.fromarray(img).save(out_path)
    return n

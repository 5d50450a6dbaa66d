"""Synthetic rectilinear objects, dataset IO and cross-validation splits."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .raster import NOPAINT, PAINT, LabelGrid, Region, load_pair, save_pair, split_region


@dataclass
class GenConfig:
    n: int = 60
    side: int = 64
    rect_range: tuple[int, int] = (1, 4)
    guillotine: bool = False
    noise: float = 0.1
    max_depth: int = 7
    seed: int = 0
    # smallest extent of a generated piece, in pixels
    min_piece: int = 4
    # rectangle extents as fractions of the grid side (overlap mode)
    rect_frac: tuple[float, float] = (0.125, 0.5)
    frame_prob: float = 0.3

    def __post_init__(self):
        self.rect_range = tuple(self.rect_range)
        self.rect_frac = tuple(self.rect_frac)
        if self.side < 8:
            raise ValueError("grid side must be >= 8")
        if self.rect_range[0] < 1 or self.rect_range[1] < self.rect_range[0]:
            raise ValueError("rectangle count range must satisfy 1 <= lo <= hi")


@dataclass
class Dataset:
    items: list[tuple[LabelGrid, str]]
    provenance: str = "generated"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {g.labels.shape for g, _ in self.items}
        if len(shapes) > 1:
            raise ValueError(f"dataset mixes grid extents {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]

    @property
    def grids(self) -> list[LabelGrid]:
        return [g for g, _ in self.items]

    @property
    def ids(self) -> list[str]:
        return [i for _, i in self.items]

    def subset(self, indices) -> "Dataset":
        return Dataset([self.items[i] for i in indices], self.provenance, self.config)

    def full_coverage(self) -> list[str]:
        """Ids of items holding a single class only."""
        return [i for g, i in self.items if np.all(g.labels == g.labels.flat[0])]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.ids == other.ids and all(a == b for a, b in zip(self.grids, other.grids))


# generation ---------------------------------------------------------------


def _guillotine_labels(cfg: GenConfig, rng) -> np.ndarray:
    """Random recursive partition of the grid with some leaves painted."""
    side, lo = cfg.side, cfg.min_piece
    leaves: list[Region] = []

    def grow(region: Region, depth: int):
        p_split = 1.0 if depth < 2 else 0.6 ** (depth - 1)
        axes = [a for a in "xy" if region.extent(a) >= 2 * lo]
        if depth >= 5 or not axes or rng.random() > p_split:
            leaves.append(region)
            return
        axis = axes[rng.integers(len(axes))]
        loc = int(rng.integers(lo, region.extent(axis) - lo + 1))
        for child in split_region(region, axis, loc):
            grow(child, depth + 1)

    grow(Region(0, 0, side, side), 0)
    k = int(rng.integers(cfg.rect_range[0], cfg.rect_range[1] + 1))
    k = min(k, max(1, len(leaves) - 1)) if len(leaves) > 1 else 1
    painted = rng.choice(len(leaves), size=k, replace=False)
    labels = np.full((side, side), NOPAINT, dtype=np.int8)
    for i in painted:
        labels[leaves[i].slices()] = PAINT
    return labels


def _rect(rng, side: int, frac: tuple[float, float]) -> Region:
    lo, hi = max(1, int(round(frac[0] * side))), max(1, int(round(frac[1] * side)))
    w = int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    return Region(int(rng.integers(0, side - w + 1)), int(rng.integers(0, side - h + 1)), w, h)


def _overlap_labels(cfg: GenConfig, rng) -> np.ndarray:
    """Union of overlapping solid rectangles and frames (hollow rectangles)."""
    side = cfg.side
    labels = np.full((side, side), NOPAINT, dtype=np.int8)
    k = int(rng.integers(cfg.rect_range[0], cfg.rect_range[1] + 1))
    for _ in range(k):
        r = _rect(rng, side, cfg.rect_frac)
        labels[r.slices()] = PAINT
        if rng.random() < cfg.frame_prob and min(r.w, r.h) >= 4 * cfg.min_piece // 2 + 4:
            t = int(rng.integers(2, max(3, min(r.w, r.h) // 4) + 1))
            labels[r.y + t:r.y + r.h - t, r.x + t:r.x + r.w - t] = NOPAINT
    return labels


def _intensity(labels: np.ndarray, cfg: GenConfig, rng) -> np.ndarray:
    fg = rng.uniform(0.6, 0.85)
    bg = rng.uniform(0.15, 0.4)
    base = np.where(labels == PAINT, fg, bg)
    noisy = base + rng.uniform(-cfg.noise, cfg.noise, size=labels.shape)
    # quantized to 8 bits so PNG round trips are exact
    return np.rint(np.clip(noisy, 0.0, 1.0) * 255.0) / 255.0


def generate(config: GenConfig | None = None) -> Dataset:
    """Deterministic synthetic dataset.

    Guillotine items are rejection-sampled until the depth-limited expert labels
    them perfectly, so they double as exact oracle targets.  The number of
    rejected draws is kept in ``config["rejected"]``.
    """
    from .oracle import oracle_parse
    from .evalreport import tree_accuracy

    cfg = config or GenConfig()
    rng = np.random.default_rng(cfg.seed)
    items = []
    rejected = 0
    for i in range(cfg.n):
        for _ in range(1000):
            if cfg.guillotine:
                labels = _guillotine_labels(cfg, rng)
                if np.all(labels == labels.flat[0]):
                    continue
                grid = LabelGrid(labels)
                if tree_accuracy(oracle_parse(grid, cfg.max_depth), grid) == 1.0:
                    break
                rejected += 1
            else:
                labels = _overlap_labels(cfg, rng)
                break
        else:
            raise RuntimeError("could not draw an oracle-separable guillotine item")
        grid = LabelGrid(labels, _intensity(labels, cfg, rng))
        items.append((grid, f"item_{i:04d}"))
    config = _config_dict(cfg)
    config["rejected"] = rejected
    return Dataset(items, "generated", config)


def _config_dict(cfg: GenConfig) -> dict:
    d = asdict(cfg)
    d["rect_range"] = list(cfg.rect_range)
    d["rect_frac"] = list(cfg.rect_frac)
    return d


# splits -------------------------------------------------------------------


def kfold(n_items: int, k: int, seed: int = 0, test_size: int | None = None):
    """k (train, test) index splits with pairwise-disjoint test sets.

    By default the test sets partition all items.  With ``test_size`` each
    test set has exactly that many items (e.g. 62 of 362 for a 300/62 split)
    and the train set is its complement.
    """
    if isinstance(n_items, Dataset):
        n_items = len(n_items)
    if k < 2:
        raise ValueError("k must be >= 2")
    if n_items < k:
        raise ValueError(f"cannot make {k} folds from {n_items} items")
    perm = np.random.default_rng(seed).permutation(n_items)
    if test_size is None:
        tests = np.array_split(perm, k)
    else:
        if test_size * k > n_items:
            raise ValueError("test folds would overlap")
        tests = [perm[i * test_size:(i + 1) * test_size] for i in range(k)]
    out = []
    for test in tests:
        test = np.sort(test)
        train = np.setdiff1d(np.arange(n_items), test)
        out.append((train, test))
    return out


# IO -----------------------------------------------------------------------


def save(dataset: Dataset, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for grid, ident in dataset.items:
        save_pair(grid, d / f"{ident}.png", d / f"{ident}.mask.png")
    manifest = {"provenance": dataset.provenance, "config": dataset.config,
                "ids": dataset.ids}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load(directory: str | Path) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d}: no such dataset directory")
    images = sorted(p for p in d.glob("*.png") if not p.name.endswith(".mask.png"))
    if not images:
        raise ValueError(f"{d}: empty dataset directory")
    items = []
    for img in images:
        ident = img.name[:-len(".png")]
        mask = d / f"{ident}.mask.png"
        if not mask.exists():
            raise FileNotFoundError(f"{d}: missing mask for {ident}")
        items.append((load_pair(img, mask), ident))
    config = {}
    manifest = d / "manifest.json"
    if manifest.exists():
        config = json.loads(manifest.read_text()).get("config", {})
    return Dataset(items, "loaded", config)

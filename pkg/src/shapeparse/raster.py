"""Label grids, rectangular regions and fixed-size region features.

Arrays are indexed ``[row, col]`` i.e. ``[y, x]``; a region ``(x, y, w, h)``
covers columns ``x .. x+w-1`` and rows ``y .. y+h-1``.
"""

from __future__ import annotations

import functools

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAINT = 1
NOPAINT = -1


class InvalidSplitError(ValueError):
    pass


class BoundsError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"region extents must be positive, got {self}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"region offset must be non-negative, got {self}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def extent(self, axis: str) -> int:
        return self.w if axis == "x" else self.h

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)


@dataclass(frozen=True, eq=False)
class LabelGrid:
    """Ground-truth paint labels plus intensity channels of shape (h, w, c)."""

    labels: np.ndarray
    channels: np.ndarray = field(default=None)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8)
        if labels.ndim != 2:
            raise ValueError("labels must be a 2-D array")
        if not np.all((labels == 1) | (labels == -1)):
            raise ValueError("labels must be exactly +1 or -1")
        if self.channels is None:
            channels = ((labels.astype(np.float64) + 1.0) / 2.0)[:, :, None]
        else:
            channels = np.asarray(self.channels, dtype=np.float64)
            if channels.ndim == 2:
                channels = channels[:, :, None]
            if channels.shape[:2] != labels.shape or channels.shape[2] < 1:
                raise ValueError("channels must share the label extents")
            if channels.min() < 0.0 or channels.max() > 1.0:
                raise ValueError("channel intensities must lie in [0, 1]")
        labels.setflags(write=False)
        channels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "channels", channels)
        # summed-area table of (label == +1), padded with a leading zero row/col
        pos = np.zeros((labels.shape[0] + 1, labels.shape[1] + 1), dtype=np.int64)
        pos[1:, 1:] = np.cumsum(np.cumsum(labels == 1, axis=0), axis=1)
        pos.setflags(write=False)
        object.__setattr__(self, "_pos_table", pos)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def area(self) -> int:
        return self.labels.size

    def full_region(self) -> Region:
        return Region(0, 0, self.width, self.height)

    def contains(self, region: Region) -> bool:
        return region.x + region.w <= self.width and region.y + region.h <= self.height

    def check(self, region: Region) -> None:
        if not self.contains(region):
            raise BoundsError(f"{region} lies outside a {self.width}x{self.height} grid")

    def positive_count(self, region: Region) -> int:
        """Number of +1 pixels inside ``region`` (O(1) via the summed-area table)."""
        self.check(region)
        t = self._pos_table
        x0, y0, x1, y1 = region.x, region.y, region.x + region.w, region.y + region.h
        return int(t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0])

    def __eq__(self, other):
        if not isinstance(other, LabelGrid):
            return NotImplemented
        return (np.array_equal(self.labels, other.labels)
                and np.array_equal(self.channels, other.channels))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PredictionGrid:
    predicted: np.ndarray

    def __post_init__(self):
        pred = np.asarray(self.predicted, dtype=np.int8)
        if pred.ndim != 2 or not np.all((pred == 1) | (pred == -1)):
            raise ValueError("predictions must be a 2-D array of +1/-1")
        pred.setflags(write=False)
        object.__setattr__(self, "predicted", pred)

    @property
    def height(self) -> int:
        return self.predicted.shape[0]

    @property
    def width(self) -> int:
        return self.predicted.shape[1]


def split_region(region: Region, axis: str, loc: int) -> tuple[Region, Region]:
    """Cut ``region`` at pixel offset ``loc`` along ``axis`` ('x' or 'y')."""
    if axis not in ("x", "y"):
        raise ValueError(f"unknown axis {axis!r}")
    extent = region.extent(axis)
    if not 1 <= loc <= extent - 1:
        raise InvalidSplitError(f"cannot split extent {extent} at {loc}")
    x, y, w, h = region.x, region.y, region.w, region.h
    if axis == "x":
        return Region(x, y, loc, h), Region(x + loc, y, w - loc, h)
    return Region(x, y, w, loc), Region(x, y + loc, w, h - loc)


def leaf_correlation(grid: LabelGrid, region: Region, assigned: int) -> int:
    """Sum of label * assigned over the region, in [-area, +area]."""
    if assigned not in (PAINT, NOPAINT):
        raise ValueError("assigned label must be +1 or -1")
    pos = grid.positive_count(region)
    return assigned * (2 * pos - region.area)


@functools.lru_cache(maxsize=1024)
def _pool_matrix(extent: int, side: int) -> np.ndarray:
    # row i holds the fraction of output cell i covered by each input pixel
    edges = np.arange(side + 1) * (extent / side)
    lo = np.maximum(edges[:-1, None], np.arange(extent)[None, :])
    hi = np.minimum(edges[1:, None], np.arange(extent)[None, :] + 1)
    overlap = np.clip(hi - lo, 0.0, None)
    m = overlap / overlap.sum(axis=1, keepdims=True)
    m.flags.writeable = False
    return m


def featurize(grid: LabelGrid, region: Region, side: int = 32) -> np.ndarray:
    """Resample the region's channels to ``side x side`` and append a size channel.

    Returns an array of shape ``(side, side, C + 1)``; the last channel is the
    constant ``w*h / grid area``.
    """
    if side < 1:
        raise ValueError("feature side must be >= 1")
    grid.check(region)
    patch = grid.channels[region.slices()]
    rows = _pool_matrix(region.h, side)
    cols = _pool_matrix(region.w, side)
    # (i, x, c) then contract x: (j, x) @ (i, x, c) -> (i, j, c)
    pooled = cols @ np.tensordot(rows, patch, axes=(1, 0))
    np.clip(pooled, 0.0, 1.0, out=pooled)
    size = np.full((side, side, 1), region.area / grid.area)
    return np.concatenate([pooled, size], axis=2)


def load_pair(image_path: str | Path, mask_path: str | Path) -> LabelGrid:
    """Read an 8-bit grayscale intensity PNG and a 0/255 mask PNG."""
    from PIL import Image

    with Image.open(mask_path) as im:
        mask = np.asarray(im.convert("L"))
    if not np.all((mask == 0) | (mask == 255)):
        bad = sorted(set(np.unique(mask).tolist()) - {0, 255})
        raise ValueError(f"{mask_path}: mask values must be 0 or 255, found {bad[:5]}")
    with Image.open(image_path) as im:
        gray = np.asarray(im.convert("L"))
    if gray.shape != mask.shape:
        raise ValueError(f"{image_path}: image and mask extents differ")
    labels = np.where(mask == 255, PAINT, NOPAINT)
    return LabelGrid(labels, gray.astype(np.float64) / 255.0)


def save_pair(grid: LabelGrid, image_path: str | Path, mask_path: str | Path) -> None:
    from PIL import Image

    gray = np.rint(grid.channels.mean(axis=2) * 255.0).astype(np.uint8)
    Image.fromarray(gray).save(image_path)
    mask = np.where(grid.labels == PAINT, 255, 0).astype(np.uint8)
    Image.fromarray(mask).save(mask_path)

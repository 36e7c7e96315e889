"""Id-labelled pixel masks and the exact set algebra built on them.

A :class:`Mask` is a boolean bitmap with a positive track id.  A
:class:`MaskSet` is a collection of pairwise-disjoint masks over one frame,
keyed by id.  Correspondence across frames (and across tracking directions)
is id equality; nothing in this module ever renumbers an id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

import numpy as np


class MaskError(ValueError):
    """Raised when a mask or mask set would violate its invariants."""


def _frozen_bool(pixels) -> np.ndarray:
    arr = np.array(pixels, dtype=bool, copy=True)
    if arr.ndim != 2:
        raise MaskError(f"mask bitmap must be 2-D, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class Mask:
    """A non-empty binary mask carrying a track id."""

    __slots__ = ("id", "pixels", "_area")

    def __init__(self, id: int, pixels) -> None:
        if int(id) != id or id < 1:
            raise MaskError(f"mask id must be a positive integer, got {id!r}")
        arr = _frozen_bool(pixels)
        area = int(np.count_nonzero(arr))
        if area == 0:
            raise MaskError(f"mask {id} has no set pixels")
        self.id = int(id)
        self.pixels = arr
        self._area = area

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def area(self) -> int:
        return self._area

    def with_id(self, new_id: int) -> "Mask":
        return Mask(new_id, self.pixels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mask):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.pixels, other.pixels)

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Mask(id={self.id}, area={self.area}, shape={self.shape})"


def area(m: Mask) -> int:
    return m.area


def _check_same_shape(a: Mask, b: Mask) -> None:
    if a.shape != b.shape:
        raise MaskError(f"dimension mismatch: {a.shape} vs {b.shape}")


def intersect_area(a: Mask, b: Mask) -> int:
    _check_same_shape(a, b)
    return int(np.count_nonzero(a.pixels & b.pixels))


def union_pixels(masks: Iterable[Mask], shape: tuple[int, int] | None = None) -> np.ndarray:
    """Bitmap of pixels set in any of ``masks``.

    ``shape`` is only needed when ``masks`` may be empty.
    """
    masks = list(masks)
    if not masks:
        if shape is None:
            raise MaskError("shape is required to take the union of no masks")
        return np.zeros(shape, dtype=bool)
    if shape is None:
        shape = masks[0].shape
    out = np.zeros(shape, dtype=bool)
    for m in masks:
        if m.shape != tuple(shape):
            raise MaskError(f"dimension mismatch: {m.shape} vs {tuple(shape)}")
        out |= m.pixels
    return out


def iou(a: Mask, b: Mask) -> float:
    inter = intersect_area(a, b)
    return inter / (a.area + b.area - inter)


class MaskSet(Mapping[int, Mask]):
    """Pairwise-disjoint masks over one ``height x width`` frame, keyed by id."""

    def __init__(self, masks: Iterable[Mask], shape: tuple[int, int]) -> None:
        h, w = (int(shape[0]), int(shape[1]))
        if h < 1 or w < 1:
            raise MaskError(f"frame shape must be positive, got {shape}")
        by_id: dict[int, Mask] = {}
        occupied = np.zeros((h, w), dtype=bool)
        for m in masks:
            if m.shape != (h, w):
                raise MaskError(f"mask {m.id} has shape {m.shape}, set has {(h, w)}")
            if m.id in by_id:
                raise MaskError(f"duplicate mask id {m.id}")
            if np.any(occupied & m.pixels):
                raise MaskError(f"mask {m.id} overlaps another mask in the set")
            occupied |= m.pixels
            by_id[m.id] = m
        self._masks = dict(sorted(by_id.items()))
        self.shape = (h, w)

    @classmethod
    def empty(cls, shape: tuple[int, int]) -> "MaskSet":
        return cls((), shape)

    @property
    def height(self) -> int:
        return self.shape[0]

    @property
    def width(self) -> int:
        return self.shape[1]

    @property
    def ids(self) -> list[int]:
        return list(self._masks)

    def __getitem__(self, key: int) -> Mask:
        return self._masks[key]

    def __iter__(self) -> Iterator[int]:
        return iter(self._masks)

    def __len__(self) -> int:
        return len(self._masks)

    def masks(self) -> list[Mask]:
        return list(self._masks.values())

    def areas(self) -> dict[int, int]:
        return {i: m.area for i, m in self._masks.items()}

    def subset(self, ids: Iterable[int]) -> "MaskSet":
        return MaskSet((self._masks[i] for i in ids), self.shape)

    def union(self) -> np.ndarray:
        return union_pixels(self._masks.values(), self.shape)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaskSet):
            return NotImplemented
        return self.shape == other.shape and self._masks == other._masks

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"MaskSet(shape={self.shape}, areas={self.areas()})"


@dataclass(frozen=True, eq=False)
class LabelRaster:
    """Per-pixel mask ids; 0 is background."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise MaskError(f"label raster must be 2-D, got shape {arr.shape}")
        if arr.dtype.kind not in "ui":
            raise MaskError(f"label raster must hold integers, got {arr.dtype}")
        if arr.dtype.kind == "i" and arr.size and arr.min() < 0:
            raise MaskError("label raster holds negative labels")
        arr = arr.astype(np.uint32, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelRaster):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    __hash__ = None  # type: ignore[assignment]


def from_label_raster(raster: LabelRaster) -> MaskSet:
    labels = raster.labels
    ids = np.unique(labels)
    masks = [Mask(int(i), labels == i) for i in ids if i != 0]
    return MaskSet(masks, labels.shape)


def to_label_raster(s: MaskSet) -> LabelRaster:
    # MaskSet enforces disjointness at construction, so painting cannot collide.
    out = np.zeros(s.shape, dtype=np.uint32)
    for m in s.values():
        out[m.pixels] = m.id
    return LabelRaster(out)


def label_areas(labels: np.ndarray) -> dict[int, int]:
    """Pixel count per nonzero label of an integer raster."""
    counts = np.bincount(labels.ravel())
    return {int(i): int(c) for i, c in enumerate(counts) if i and c}


def overlap_counts(a: MaskSet, b: MaskSet) -> dict[tuple[int, int], int]:
    """Nonzero pairwise intersection areas ``{(id_a, id_b): pixels}``."""
    if a.shape != b.shape:
        raise MaskError(f"dimension mismatch: {a.shape} vs {b.shape}")
    la = to_label_raster(a).labels.astype(np.int64).ravel()
    lb = to_label_raster(b).labels.astype(np.int64).ravel()
    both = (la > 0) & (lb > 0)
    if not both.any():
        return {}
    pairs, counts = np.unique(np.stack([la[both], lb[both]]), axis=1, return_counts=True)
    return {(int(i), int(j)): int(c) for (i, j), c in zip(pairs.T, counts)}

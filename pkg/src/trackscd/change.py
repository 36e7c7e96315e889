"""Pair-level change detection from tracked mask sets.

The central operator is :func:`tau_difference`: a mask of ``A`` counts as
gone from ``B`` when the same id in ``B`` keeps less than ``tau`` of its
area.  Missing objects are reference masks that fail to survive tracking into
the query; new objects are the mirror image.  Pixels claimed by both are
``replaced``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .formats import ChangeClass
from .masks import MaskError, MaskSet

AreaSource = Union[MaskSet, Mapping[int, int]]


def adaptive_tau(length: int) -> float:
    """Content threshold for a clip of ``length`` frames.

    Rises with clip length, from 0.05 for a single image pair towards (never
    reaching) 0.5.
    """
    if isinstance(length, bool) or int(length) != length or length < 1:
        raise ValueError(f"length must be an integer >= 1, got {length!r}")
    # same as 0.5 - 0.9 / (s + 1), rearranged so a single pair gives exactly 1/20
    s = math.sqrt(length)
    return (5 * s - 4) / (10 * (s + 1))


@dataclass(frozen=True)
class ContentThreshold:
    """Either a fixed ratio or the length-adaptive rule."""

    value: float | None = None

    @classmethod
    def adaptive(cls) -> "ContentThreshold":
        return cls(None)

    @classmethod
    def parse(cls, text) -> "ContentThreshold":
        if isinstance(text, ContentThreshold):
            return text
        if text is None or (isinstance(text, str) and text.strip().lower() == "adaptive"):
            return cls(None)
        return cls(float(text))

    @property
    def is_adaptive(self) -> bool:
        return self.value is None

    def for_length(self, length: int) -> float:
        return adaptive_tau(length) if self.value is None else self.value

    def __str__(self) -> str:
        return "adaptive" if self.value is None else repr(self.value)


def _areas(b: AreaSource) -> Mapping[int, int]:
    return b.areas() if isinstance(b, MaskSet) else b


def tau_difference(a: MaskSet, b: AreaSource, tau: float) -> list[int]:
    """Ids of masks in ``a`` whose same-id area in ``b`` is below ``tau`` of theirs.

    ``b`` may be a MaskSet or a plain ``{id: area}`` mapping.  Ids missing
    from ``b`` have area 0 there; ids only in ``b`` are ignored.
    """
    b_areas = _areas(b)
    return [i for i, m in a.items() if b_areas.get(i, 0) / m.area < tau]


@dataclass
class ChangeMap:
    codes: np.ndarray
    missing_ids: list[int] = field(default_factory=list)
    new_ids: list[int] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    def pixels(self, cls: ChangeClass) -> np.ndarray:
        return self.codes == cls


def classify_pixels(p_missing: np.ndarray, p_new: np.ndarray) -> np.ndarray:
    p_missing = np.asarray(p_missing, dtype=bool)
    p_new = np.asarray(p_new, dtype=bool)
    if p_missing.shape != p_new.shape:
        raise MaskError(f"dimension mismatch: {p_missing.shape} vs {p_new.shape}")
    # codes are laid out so that missing contributes 2 and new contributes 1
    return (p_missing.astype(np.uint8) << 1) | p_new.astype(np.uint8)


def _check_tracked(src: MaskSet, tracked: MaskSet, name: str) -> None:
    if tracked.shape != src.shape:
        raise MaskError(f"{name}: dimension mismatch {tracked.shape} vs {src.shape}")
    extra = set(tracked) - set(src)
    if extra:
        raise MaskError(f"{name}: tracked ids {sorted(extra)} not present in the source set")


def change_map_from_ids(
    missing_src: MaskSet, missing_ids: list[int], new_src: MaskSet, new_ids: list[int]
) -> ChangeMap:
    p_missing = missing_src.subset(missing_ids).union()
    p_new = new_src.subset(new_ids).union()
    return ChangeMap(classify_pixels(p_missing, p_new), list(missing_ids), list(new_ids))


def detect_pair(mr: MaskSet, mr_to_q: MaskSet, mq: MaskSet, mq_to_r: MaskSet, tau: float) -> ChangeMap:
    if mq.shape != mr.shape:
        raise MaskError(f"dimension mismatch: {mr.shape} vs {mq.shape}")
    _check_tracked(mr, mr_to_q, "reference->query")
    _check_tracked(mq, mq_to_r, "query->reference")
    missing = tau_difference(mr, mr_to_q, tau)
    new = tau_difference(mq, mq_to_r, tau)
    return change_map_from_ids(mr, missing, mq, new)

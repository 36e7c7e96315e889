"""Turn overlapping segmenter proposals into one disjoint, object-level MaskSet.

Proposals are painted smallest-first so that a contested pixel ends up with
the largest proposal covering it.  A proposal that lost more than
``merge_thresh`` of its pixels to that painting is folded into the largest
proposal that covered it.  Masks lying wholly inside an invalid (no-data)
region are dropped, and finally anything smaller than ``min_area``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .masks import Mask, MaskError, MaskSet


@dataclass
class ProposalSet:
    proposals: list[Mask]
    shape: tuple[int, int]
    invalid_region: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        self.shape = (int(self.shape[0]), int(self.shape[1]))
        for p in self.proposals:
            if p.shape != self.shape:
                raise MaskError(f"proposal {p.id} has shape {p.shape}, frame is {self.shape}")
        if len({p.id for p in self.proposals}) != len(self.proposals):
            raise MaskError("proposal ids must be unique")
        if self.invalid_region is not None:
            inv = np.asarray(self.invalid_region, dtype=bool)
            if inv.shape != self.shape:
                raise MaskError(f"invalid region has shape {inv.shape}, frame is {self.shape}")
            self.invalid_region = inv

    def __len__(self) -> int:
        return len(self.proposals)


def postprocess(p: ProposalSet, merge_thresh: float = 0.5, min_area: int = 100) -> MaskSet:
    order: Sequence[Mask] = sorted(p.proposals, key=lambda m: (m.area, m.id))
    # canvas holds 1-based positions into ``order``; 0 = unpainted
    canvas = np.zeros(p.shape, dtype=np.int64)
    for rank, m in enumerate(order, start=1):
        canvas[m.pixels] = rank

    counts = np.bincount(canvas.ravel(), minlength=len(order) + 1)
    target = np.arange(len(order) + 1)
    for rank, m in enumerate(order, start=1):
        lost = m.area - int(counts[rank])
        if lost / m.area <= merge_thresh or counts[rank] == 0:
            continue
        covering = canvas[m.pixels]
        covering = covering[covering != rank]
        # later rank == larger original area (ties broken by id)
        target[rank] = int(covering.max())

    # decisions were all taken on the painted canvas, so relabelling is one
    # simultaneous lookup and never chains A -> B -> C
    merged = target[canvas]

    ids = np.array([0] + [m.id for m in order])
    out = []
    for rank in np.unique(merged):
        if rank == 0:
            continue
        pixels = merged == rank
        if p.invalid_region is not None and not np.any(pixels & ~p.invalid_region):
            continue
        if np.count_nonzero(pixels) < min_area:
            continue
        out.append(Mask(int(ids[rank]), pixels))
    return MaskSet(out, p.shape)

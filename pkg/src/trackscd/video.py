"""Sequence-level change detection.

Each chunk of at most ``t_max`` frames is processed twice: once with the
reference sequence as the *spine* (tracked frame to frame with memory
updates) and the query sequence as the *branch* (a frozen one-hop track
from each spine frame into the query frame at the same index), which yields
missing objects; and once with the roles swapped, which yields new objects.
An object is missing at frame ``t`` only if it fails the content threshold
against the branch output of every frame in the chunk.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from .change import (
    ChangeMap,
    ContentThreshold,
    change_map_from_ids,
    detect_pair,
    tau_difference,
)
from .masks import Mask, MaskSet, iou
from .postproc import postprocess
from .sim import Segmenter, Tracker

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, message: str, frame: int | None = None) -> None:
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


@dataclass
class SequenceConfig:
    t_max: int = 60
    detect_every: int = 5
    tau: ContentThreshold = field(default_factory=ContentThreshold.adaptive)
    # accepted for interface compatibility with DEVA-style trackers; the
    # simplified spawning rule below does not vote
    voting_frames: int = 3
    max_missed_detection_count: int = 5
    merge_thresh: float = 0.5
    min_area: int = 100
    spawn_iou: float = 0.5

    def __post_init__(self) -> None:
        self.tau = ContentThreshold.parse(self.tau)
        if self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")
        if self.detect_every < 1:
            raise ValueError(f"detect_every must be >= 1, got {self.detect_every}")


@dataclass(frozen=True)
class PropagationState:
    masks: MaskSet
    memory: Hashable
    t: int
    next_id: int


@dataclass
class DirectionTrace:
    spine: list[MaskSet] = field(default_factory=list)
    branch: list[MaskSet] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.branch)


def chunk_sequence(total: int, t_max: int) -> list[int]:
    if total < 1:
        raise ValueError(f"sequence length must be >= 1, got {total}")
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    full, rest = divmod(total, t_max)
    return [t_max] * full + ([rest] if rest else [])


def segment_frame(image: np.ndarray, segmenter: Segmenter, config: SequenceConfig) -> MaskSet:
    return postprocess(segmenter.segment(image), merge_thresh=config.merge_thresh, min_area=config.min_area)


def is_detection_frame(t: int, detect_every: int) -> bool:
    return t == 1 or t % detect_every == 0


def merge_detections(spine: MaskSet, detections: MaskSet, next_id: int, config: SequenceConfig) -> tuple[MaskSet, int]:
    """Add detections that match no spine mask as new ids.

    A detection matches when its IoU with some spine mask exceeds
    ``config.spawn_iou``.  Unmatched detections only keep pixels not already
    owned by the spine, and must still reach ``config.min_area``.
    """
    masks = spine.masks()
    occupied = spine.union()
    for det in detections.values():
        if any(iou(det, m) > config.spawn_iou for m in spine.values()):
            continue
        free = det.pixels & ~occupied
        if np.count_nonzero(free) < max(config.min_area, 1):
            continue
        masks.append(Mask(next_id, free))
        occupied |= free
        next_id += 1
    return MaskSet(masks, spine.shape), next_id


def start(image: np.ndarray, segmenter: Segmenter, tracker: Tracker, config: SequenceConfig) -> PropagationState:
    masks = segment_frame(image, segmenter, config)
    return PropagationState(masks, tracker.memory, 1, max(masks.ids, default=0) + 1)


def advance(
    state: PropagationState,
    prev_image: np.ndarray,
    image: np.ndarray,
    segmenter: Segmenter,
    tracker: Tracker,
    config: SequenceConfig,
) -> PropagationState:
    """Spine step: track onto the next primary frame with every function enabled."""
    tracker.restore(state.memory)
    masks = tracker.step(prev_image, image, state.masks, update_memory=True, detect_new=True)
    t = state.t + 1
    next_id = max(state.next_id, max(masks.ids, default=0) + 1)
    if is_detection_frame(t, config.detect_every):
        masks, next_id = merge_detections(masks, segment_frame(image, segmenter, config), next_id, config)
    return PropagationState(masks, tracker.memory, t, next_id)


def branch(state: PropagationState, image: np.ndarray, other: np.ndarray, tracker: Tracker) -> MaskSet:
    """Branch step: one hop into the other sequence with memory and detection frozen."""
    tracker.restore(state.memory)
    return tracker.step(image, other, state.masks, update_memory=False, detect_new=False)


def run_direction(
    primary: Sequence[np.ndarray],
    other: Sequence[np.ndarray],
    segmenter: Segmenter,
    tracker: Tracker,
    config: SequenceConfig,
) -> DirectionTrace:
    if len(primary) != len(other) or not primary:
        raise PipelineError(f"sequences must be non-empty and equal length, got {len(primary)} and {len(other)}")
    trace = DirectionTrace()
    state = None
    for t in range(1, len(primary) + 1):
        try:
            if state is None:
                state = start(primary[0], segmenter, tracker, config)
            else:
                state = advance(state, primary[t - 2], primary[t - 1], segmenter, tracker, config)
            out = branch(state, primary[t - 1], other[t - 1], tracker)
        except PipelineError:
            raise
        except Exception as e:
            raise PipelineError(f"{type(e).__name__}: {e}", frame=t) from e
        trace.spine.append(state.masks)
        trace.branch.append(out)
    return trace


def missing_masks_at(mr_t: MaskSet, branch_outputs: Sequence[MaskSet | Mapping[int, int]], tau: float) -> list[int]:
    """Ids of ``mr_t`` that fail the content threshold against every branch output."""
    if not branch_outputs:
        raise ValueError("branch_outputs must not be empty")
    keep: set[int] | None = None
    for b in branch_outputs:
        gone = set(tau_difference(mr_t, b, tau))
        keep = gone if keep is None else keep & gone
    return [i for i in mr_t if i in keep]


def combine_traces(missing: DirectionTrace, new: DirectionTrace, tau: float) -> list[ChangeMap]:
    """Per-frame change maps for one chunk from its two direction traces."""
    if len(missing) != len(new):
        raise PipelineError(f"trace lengths differ: {len(missing)} vs {len(new)}")
    missing_areas = [b.areas() for b in missing.branch]
    new_areas = [b.areas() for b in new.branch]
    maps = []
    for mr_t, mq_t in zip(missing.spine, new.spine):
        maps.append(
            change_map_from_ids(
                mr_t, missing_masks_at(mr_t, missing_areas, tau), mq_t, missing_masks_at(mq_t, new_areas, tau)
            )
        )
    return maps


def run_sequence(
    ref: Sequence[np.ndarray],
    query: Sequence[np.ndarray],
    segmenter: Segmenter,
    tracker: Tracker,
    config: SequenceConfig | None = None,
) -> list[ChangeMap]:
    """One change map per frame.

    ``tracker`` serves as a prototype: each stream of each chunk runs on its
    own deep copy, so the caller's instance is never mutated.
    """
    config = config or SequenceConfig()
    if len(ref) != len(query):
        raise PipelineError(f"length mismatch: {len(ref)} ref frames vs {len(query)} query frames")
    maps: list[ChangeMap] = []
    offset = 0
    for length in chunk_sequence(len(ref), config.t_max):
        r = ref[offset : offset + length]
        q = query[offset : offset + length]
        tau = config.tau.for_length(length)
        log.debug("chunk at frame %d: %d frames, tau=%.5f", offset + 1, length, tau)
        try:
            missing = run_direction(r, q, segmenter, copy.deepcopy(tracker), config)
            new = run_direction(q, r, segmenter, copy.deepcopy(tracker), config)
        except PipelineError as e:
            if e.frame is None:
                raise
            raise PipelineError(str(e.__cause__ or e), frame=offset + e.frame) from e
        maps.extend(combine_traces(missing, new, tau))
        offset += length
    return maps


def run_tracks(
    missing_traces: Sequence[DirectionTrace] | DirectionTrace,
    new_traces: Sequence[DirectionTrace] | DirectionTrace,
    config: SequenceConfig | None = None,
) -> list[ChangeMap]:
    """Change maps from pre-computed tracks covering the whole sequence.

    The traces are split into chunks of ``config.t_max`` frames exactly as
    :func:`run_sequence` would.
    """
    config = config or SequenceConfig()
    if isinstance(missing_traces, DirectionTrace):
        missing_traces = [missing_traces]
    if isinstance(new_traces, DirectionTrace):
        new_traces = [new_traces]
    missing = DirectionTrace([s for tr in missing_traces for s in tr.spine], [b for tr in missing_traces for b in tr.branch])
    new = DirectionTrace([s for tr in new_traces for s in tr.spine], [b for tr in new_traces for b in tr.branch])
    if not (len(missing.spine) == len(missing.branch) == len(new.spine) == len(new.branch)):
        raise PipelineError("external tracks must provide spine and branch sets for every frame in both directions")
    maps: list[ChangeMap] = []
    offset = 0
    for length in chunk_sequence(len(missing), config.t_max):
        sl = slice(offset, offset + length)
        tau = config.tau.for_length(length)
        maps.extend(
            combine_traces(
                DirectionTrace(missing.spine[sl], missing.branch[sl]),
                DirectionTrace(new.spine[sl], new.branch[sl]),
                tau,
            )
        )
        offset += length
    return maps


def detect_images(
    ref: np.ndarray,
    query: np.ndarray,
    segmenter: Segmenter,
    tracker: Tracker,
    config: SequenceConfig | None = None,
) -> ChangeMap:
    """Image-pair change detection."""
    config = config or SequenceConfig()
    mr = segment_frame(ref, segmenter, config)
    mq = segment_frame(query, segmenter, config)
    fwd, bwd = copy.deepcopy(tracker), copy.deepcopy(tracker)
    mr_to_q = fwd.step(ref, query, mr, update_memory=False, detect_new=False)
    mq_to_r = bwd.step(query, ref, mq, update_memory=False, detect_new=False)
    return detect_pair(mr, mr_to_q, mq, mq_to_r, config.tau.for_length(1))

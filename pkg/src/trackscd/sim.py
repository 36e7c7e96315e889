"""Desk-scale stand-ins for the segmenter and tracker, and a synthetic scene
generator with exact ground truth.

Synthetic frames are single-channel ``uint8`` images.  Every object has its
own intensity, so a same-intensity connected region is exactly one object;
the query sequence additionally goes through an affine intensity transform to
emulate a change of appearance (lighting, weather) between captures.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Hashable, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .change import classify_pixels
from .masks import Mask, MaskSet, overlap_counts
from .postproc import ProposalSet, postprocess

# 4-connectivity
_STRUCTURE = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class SimulationError(ValueError):
    pass


class UnknownIdError(SimulationError):
    pass


class Segmenter(Protocol):
    def segment(self, image: np.ndarray) -> ProposalSet: ...


class Tracker(Protocol):
    """Propagates a mask set from ``prev_image`` onto ``cur_image``.

    ``memory`` is a hashable snapshot of everything the tracker carries
    between calls; ``restore`` puts a snapshot back.  A call with
    ``update_memory=False`` must leave ``memory`` unchanged.
    """

    @property
    def memory(self) -> Hashable: ...

    def restore(self, memory: Hashable) -> None: ...

    def step(
        self,
        prev_image: np.ndarray,
        cur_image: np.ndarray,
        prev_masks: MaskSet,
        *,
        update_memory: bool,
        detect_new: bool,
    ) -> MaskSet: ...


def background_value(image: np.ndarray) -> int:
    """Most frequent intensity; ties go to the lowest value."""
    return int(np.argmax(np.bincount(image.ravel())))


@dataclass
class CCSegmenter:
    """One proposal per maximal same-intensity 4-connected region.

    With ``noise > 0`` each region is, with probability ``noise / 2``, split
    into left/right halves, or otherwise with probability ``noise / 2``
    accompanied by an extra proposal covering it together with the next
    region.  Noise draws are seeded from ``seed`` and the image bytes, so a
    given image always segments the same way.
    """

    noise: float = 0.0
    seed: int = 0
    background: int | None = None

    def regions(self, image: np.ndarray) -> list[np.ndarray]:
        image = np.asarray(image)
        bg = background_value(image) if self.background is None else self.background
        found: list[tuple[int, np.ndarray]] = []
        for v in np.unique(image):
            if v == bg:
                continue
            labels, n = ndimage.label(image == v, structure=_STRUCTURE)
            for k in range(1, n + 1):
                region = labels == k
                found.append((int(np.argmax(region.ravel())), region))
        found.sort(key=lambda item: item[0])
        return [r for _, r in found]

    def segment(self, image: np.ndarray) -> ProposalSet:
        image = np.asarray(image)
        regions = self.regions(image)
        if self.noise <= 0:
            props = [Mask(i, r) for i, r in enumerate(regions, start=1)]
            return ProposalSet(props, image.shape)

        rng = np.random.default_rng([self.seed, zlib.crc32(np.ascontiguousarray(image).tobytes())])
        pixels: list[np.ndarray] = []
        for k, region in enumerate(regions):
            u = rng.random()
            cols = np.nonzero(region.any(axis=0))[0]
            if u < self.noise / 2 and cols.size >= 2:
                cut = int(cols[cols.size // 2])
                left = region.copy()
                left[:, cut:] = False
                pixels.extend([left, region & ~left])
            elif u < self.noise and k + 1 < len(regions):
                pixels.extend([region, region | regions[k + 1]])
            else:
                pixels.append(region)
        return ProposalSet([Mask(i, p) for i, p in enumerate(pixels, start=1)], image.shape)

    __call__ = segment


def cc_segmenter(image: np.ndarray, noise: float = 0.0, seed: int = 0) -> ProposalSet:
    return CCSegmenter(noise=noise, seed=seed).segment(image)


# ---------------------------------------------------------------------------
# synthetic worlds


def _parse_presence(spec) -> tuple[tuple[int, int], ...] | bool:
    if isinstance(spec, bool):
        return spec
    ranges = []
    for item in spec:
        if isinstance(item, int):
            ranges.append((item, item))
        else:
            start, end = item
            ranges.append((int(start), int(end)))
    return tuple(ranges)


@dataclass
class SceneObject:
    id: int
    intensity: int
    x: int
    y: int
    w: int
    h: int
    shape: str = "rect"
    velocity: tuple[int, int] = (0, 0)
    # True/False, or inclusive 1-based frame ranges
    ref: bool | tuple[tuple[int, int], ...] = True
    query: bool | tuple[tuple[int, int], ...] = True

    def present(self, seq: str, t: int) -> bool:
        spec = self.ref if seq == "ref" else self.query
        if isinstance(spec, bool):
            return spec
        return any(a <= t <= b for a, b in spec)

    def footprint(self, shape: tuple[int, int], offset: tuple[int, int]) -> np.ndarray:
        hgt, wid = shape
        x = min(max(self.x + offset[0], 0), wid - self.w)
        y = min(max(self.y + offset[1], 0), hgt - self.h)
        out = np.zeros(shape, dtype=bool)
        if self.shape == "rect":
            out[y : y + self.h, x : x + self.w] = True
        else:
            yy, xx = np.mgrid[0 : self.h, 0 : self.w]
            cy, cx = (self.h - 1) / 2, (self.w - 1) / 2
            inside = ((yy - cy) / (self.h / 2)) ** 2 + ((xx - cx) / (self.w / 2)) ** 2 <= 1.0
            out[y : y + self.h, x : x + self.w] = inside
        return out


@dataclass
class SyntheticWorld:
    width: int
    height: int
    objects: list[SceneObject]
    background: int = 0
    style: tuple[float, float] = (1.0, 0.0)
    pan: list[tuple[int, int]] | None = None
    pan_jitter: int = 0

    def __post_init__(self) -> None:
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids) or any(i < 1 for i in ids):
            raise SimulationError("object ids must be unique positive integers")
        for o in self.objects:
            if not 0 <= o.intensity <= 255 or o.intensity == self.background:
                raise SimulationError(f"object {o.id}: intensity must be in 0..255 and differ from background")
            if o.shape not in ("rect", "ellipse"):
                raise SimulationError(f"object {o.id}: unknown shape {o.shape!r}")
            if not (1 <= o.w <= self.width and 1 <= o.h <= self.height):
                raise SimulationError(f"object {o.id}: size {o.w}x{o.h} does not fit in the frame")
        self.intensity_lut()

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def styled(self, values) -> np.ndarray:
        a, b = self.style
        return np.clip(np.rint(a * np.asarray(values, dtype=np.float64) + b), 0, 255).astype(np.uint8)

    def intensity_lut(self) -> np.ndarray:
        """Map every intensity either style can produce to its object (0 = background, -1 = unused)."""
        lut = np.full(256, -1, dtype=np.int64)
        entries = [(self.background, 0)] + [(o.intensity, o.id) for o in self.objects]
        for v, owner in entries:
            for sv in (v, int(self.styled(v))):
                if lut[sv] not in (-1, owner):
                    raise SimulationError(f"intensity {sv} is ambiguous between objects {lut[sv]} and {owner}")
                lut[sv] = owner
        return lut

    def offsets(self, frames: int, seed: int) -> list[tuple[int, int]]:
        if self.pan is not None:
            return [tuple(self.pan[(t - 1) % len(self.pan)]) for t in range(1, frames + 1)]
        if self.pan_jitter <= 0:
            return [(0, 0)] * frames
        rng = np.random.default_rng(seed)
        j = self.pan_jitter
        draws = rng.integers(-j, j + 1, size=(frames, 2))
        draws[0] = 0
        return [(int(dx), int(dy)) for dx, dy in draws]

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticWorld":
        objects = []
        for o in doc["objects"]:
            objects.append(
                SceneObject(
                    id=int(o["id"]),
                    intensity=int(o["intensity"]),
                    x=int(o["x"]),
                    y=int(o["y"]),
                    w=int(o["w"]),
                    h=int(o["h"]),
                    shape=o.get("shape", "rect"),
                    velocity=tuple(o.get("velocity", (0, 0))),
                    ref=_parse_presence(o.get("ref", True)),
                    query=_parse_presence(o.get("query", True)),
                )
            )
        pan = doc.get("pan")
        jitter = 0
        if isinstance(pan, dict):
            jitter = int(pan.get("jitter", 0))
            pan = None
        elif pan is not None:
            pan = [tuple(p) for p in pan]
        style = doc.get("style", {})
        return cls(
            width=int(doc["width"]),
            height=int(doc["height"]),
            objects=objects,
            background=int(doc.get("background", 0)),
            style=(float(style.get("a", 1.0)), float(style.get("b", 0.0))),
            pan=pan,
            pan_jitter=jitter,
        )

    def to_dict(self) -> dict:
        """Inverse of :meth:`from_dict`."""

        def presence(p):
            return p if isinstance(p, bool) else [list(r) for r in p]

        doc = {
            "width": self.width,
            "height": self.height,
            "background": self.background,
            "style": {"a": self.style[0], "b": self.style[1]},
        }
        if self.pan is not None:
            doc["pan"] = [list(p) for p in self.pan]
        elif self.pan_jitter:
            doc["pan"] = {"jitter": self.pan_jitter}
        doc["objects"] = [
            {
                "id": o.id, "intensity": o.intensity, "x": o.x, "y": o.y, "w": o.w, "h": o.h,
                "shape": o.shape, "velocity": list(o.velocity),
                "ref": presence(o.ref), "query": presence(o.query),
            }
            for o in self.objects
        ]
        return doc

    @classmethod
    def load(cls, path) -> "SyntheticWorld":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, SimulationError):
                raise
            raise SimulationError(f"{path}: invalid world description: {e}") from None


@dataclass
class SyntheticSequences:
    ref: list[np.ndarray]
    query: list[np.ndarray]
    gt: list[np.ndarray]
    ref_truth: list[np.ndarray] = field(repr=False)
    query_truth: list[np.ndarray] = field(repr=False)

    def __iter__(self):
        return iter((self.ref, self.query, self.gt))


def _render_truth(world: SyntheticWorld, seq: str, t: int, offset) -> np.ndarray:
    truth = np.zeros(world.shape, dtype=np.int64)
    for o in world.objects:
        if not o.present(seq, t):
            continue
        vx, vy = o.velocity
        fp = o.footprint(world.shape, (offset[0] + vx * (t - 1), offset[1] + vy * (t - 1)))
        if np.any(truth[fp]):
            raise SimulationError(f"{seq} frame {t}: object {o.id} overlaps another object")
        truth[fp] = o.id
    return truth


def generate(world: SyntheticWorld, frames: int, seed: int = 0) -> SyntheticSequences:
    """Render reference and query sequences and their per-frame change labels.

    A pixel is labelled missing when it belongs to an object seen somewhere in
    the reference sequence but nowhere in the query sequence, new for the
    converse, and replaced where the two kinds overlap.
    """
    if frames < 1:
        raise SimulationError(f"frames must be >= 1, got {frames}")
    offsets = world.offsets(frames, seed)
    ref_truth = [_render_truth(world, "ref", t, offsets[t - 1]) for t in range(1, frames + 1)]
    query_truth = [_render_truth(world, "query", t, offsets[t - 1]) for t in range(1, frames + 1)]

    in_ref = set().union(*(np.unique(x).tolist() for x in ref_truth)) - {0}
    in_query = set().union(*(np.unique(x).tolist() for x in query_truth)) - {0}
    ref_only = sorted(in_ref - in_query)
    query_only = sorted(in_query - in_ref)

    values = np.zeros(max([o.id for o in world.objects], default=0) + 1, dtype=np.uint8)
    values[0] = world.background
    for o in world.objects:
        values[o.id] = o.intensity

    ref = [values[x] for x in ref_truth]
    query = [world.styled(values[x]) for x in query_truth]
    gt = [
        classify_pixels(np.isin(rt, ref_only), np.isin(qt, query_only))
        for rt, qt in zip(ref_truth, query_truth)
    ]
    return SyntheticSequences(ref, query, gt, ref_truth, query_truth)


def random_world(
    seed: int,
    shape: tuple[int, int] = (54, 72),
    cell: int = 18,
    jitter: int = 2,
) -> SyntheticWorld:
    """A random world on a grid of ``cell``-sized slots, one slot per object.

    Each slot holds an object present in both sequences, only in the
    reference, only in the query, or a reference object swapped for a
    different query object at the same spot.  Presence is constant over
    the whole sequence.
    """
    rng = np.random.default_rng(seed)
    height, width = shape
    margin = jitter + 1
    objects: list[SceneObject] = []
    intensities = iter(rng.permutation(np.arange(20, 99, 3)).tolist())
    next_id = 1
    for gy in range(height // cell):
        for gx in range(width // cell):
            kind = rng.choice(["both", "both", "ref", "query", "swap", "empty"])
            if kind == "empty":
                continue
            size = int(cell - 2 * margin)
            kinds = [("ref", "query")] if kind == "swap" else [(kind,)]
            for group in kinds:
                for which in group:
                    shape_kind = "ellipse" if rng.random() < 0.3 else "rect"
                    objects.append(
                        SceneObject(
                            id=next_id,
                            intensity=next(intensities),
                            x=gx * cell + margin,
                            y=gy * cell + margin,
                            w=size,
                            h=size,
                            shape=shape_kind,
                            ref=which in ("both", "ref"),
                            query=which in ("both", "query"),
                        )
                    )
                    next_id += 1
    a = float(rng.uniform(0.9, 1.3))
    b = float(rng.integers(100, 121))
    return SyntheticWorld(width, height, objects, background=0, style=(a, b), pan_jitter=jitter)


# ---------------------------------------------------------------------------
# trackers


def _fresh_ids(high_water: int, prev: MaskSet):
    start = max([high_water, *prev.ids]) + 1
    while True:
        yield start
        start += 1


class OracleTracker:
    """Tracker with access to the world's ground truth.

    Surviving objects are propagated with their exact footprint in the
    current frame.  An object that is absent there leaves a residual
    fragment of ``ceil(rho * area)`` pixels (the first ones in raster order
    of its previous mask, avoiding occupied pixels), emulating a real
    tracker clinging to a vanished object; with ``rho == 0`` the id simply
    disappears.
    """

    def __init__(self, world: SyntheticWorld, rho: float = 0.0) -> None:
        if not 0 <= rho < 1:
            raise ValueError(f"rho must be in [0, 1), got {rho}")
        self.world = world
        self.rho = rho
        self._rho_exact = Fraction(str(rho))
        self._lut = world.intensity_lut()
        self._owner: dict[int, int] = {}
        self._high_water = 0

    @property
    def memory(self) -> Hashable:
        return (tuple(sorted(self._owner.items())), self._high_water)

    def restore(self, memory: Hashable) -> None:
        owners, hw = memory  # type: ignore[misc]
        self._owner = dict(owners)
        self._high_water = hw

    def truth(self, image: np.ndarray) -> np.ndarray:
        t = self._lut[np.asarray(image)]
        if np.any(t < 0):
            bad = int(np.asarray(image)[t < 0][0])
            raise SimulationError(f"intensity {bad} does not belong to this world")
        return t

    def residual_size(self, area: int) -> int:
        return math.ceil(self._rho_exact * area)

    def step(self, prev_image, cur_image, prev_masks: MaskSet, *, update_memory: bool, detect_new: bool) -> MaskSet:
        prev_truth = self.truth(prev_image)
        cur_truth = self.truth(cur_image)

        resolved: dict[int, int] = {}
        for i, m in prev_masks.items():
            obj = self._owner.get(i)
            if obj is None:
                under = prev_truth[m.pixels]
                under = under[under > 0]
                if under.size == 0:
                    raise UnknownIdError(f"mask id {i} does not cover any world object")
                obj = int(np.argmax(np.bincount(under)))
            resolved[i] = obj

        # one id per object: the lowest id claiming it wins, the rest are dropped
        claimed: dict[int, int] = {}
        for i in sorted(resolved):
            claimed.setdefault(resolved[i], i)

        out: dict[int, np.ndarray] = {}
        owner: dict[int, int] = {}
        occupied = np.zeros(prev_masks.shape, dtype=bool)
        vanished: list[int] = []
        for obj, i in sorted(claimed.items(), key=lambda kv: kv[1]):
            fp = cur_truth == obj
            if fp.any():
                out[i] = fp
                owner[i] = obj
                occupied |= fp
            else:
                vanished.append(i)

        new_hw = max([self._high_water, *prev_masks.ids])
        if detect_new:
            fresh = _fresh_ids(self._high_water, prev_masks)
            for obj in np.unique(cur_truth).tolist():
                if obj == 0 or obj in owner.values():
                    continue
                i = next(fresh)
                out[i] = cur_truth == obj
                owner[i] = obj
                occupied |= out[i]
                new_hw = max(new_hw, i)

        if self.rho > 0:
            for i in vanished:
                k = self.residual_size(prev_masks[i].area)
                avail = np.flatnonzero(prev_masks[i].pixels & ~occupied)[:k]
                if avail.size == 0:
                    continue
                frag = np.zeros(prev_masks.shape, dtype=bool)
                frag.flat[avail] = True
                out[i] = frag
                owner[i] = resolved[i]
                occupied |= frag

        if update_memory:
            self._owner = owner
            self._high_water = new_hw
        return MaskSet((Mask(i, p) for i, p in out.items()), prev_masks.shape)


def oracle_tracker(world: SyntheticWorld, rho: float = 0.0) -> OracleTracker:
    return OracleTracker(world, rho)


class GreedyOverlapTracker:
    """Re-segments each frame and matches previous ids by best IoU.

    Candidate pairs with IoU >= ``iou_thresh`` are taken greedily in order of
    decreasing IoU, ties going to the lower proposal id.
    """

    def __init__(self, segmenter: Segmenter | None = None, iou_thresh: float = 0.5) -> None:
        self.segmenter = segmenter or CCSegmenter()
        self.iou_thresh = iou_thresh
        self._high_water = 0

    @property
    def memory(self) -> Hashable:
        return self._high_water

    def restore(self, memory: Hashable) -> None:
        self._high_water = int(memory)  # type: ignore[arg-type]

    def step(self, prev_image, cur_image, prev_masks: MaskSet, *, update_memory: bool, detect_new: bool) -> MaskSet:
        props = postprocess(self.segmenter.segment(cur_image), merge_thresh=0.5, min_area=1)
        inter = overlap_counts(prev_masks, props)
        prev_areas, prop_areas = prev_masks.areas(), props.areas()
        candidates = []
        for (i, j), n in inter.items():
            score = n / (prev_areas[i] + prop_areas[j] - n)
            if score >= self.iou_thresh:
                candidates.append((-score, j, i))
        candidates.sort()
        used_prev: set[int] = set()
        used_prop: set[int] = set()
        out: dict[int, Mask] = {}
        for _, j, i in candidates:
            if i in used_prev or j in used_prop:
                continue
            used_prev.add(i)
            used_prop.add(j)
            out[i] = props[j].with_id(i)

        new_hw = max([self._high_water, *prev_masks.ids])
        if detect_new:
            fresh = _fresh_ids(self._high_water, prev_masks)
            for j in props:
                if j not in used_prop:
                    i = next(fresh)
                    out[i] = props[j].with_id(i)
                    new_hw = max(new_hw, i)
        if update_memory:
            self._high_water = new_hw
        return MaskSet(out.values(), prev_masks.shape)


def greedy_overlap_tracker(segmenter: Segmenter | None = None) -> GreedyOverlapTracker:
    return GreedyOverlapTracker(segmenter)

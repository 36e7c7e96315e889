"""On-disk formats: binary PGM (P5) rasters and JSON sequence manifests.

Label rasters are written as 16-bit PGM (maxval 65535, big-endian samples);
change maps and synthetic images as 8-bit PGM (maxval 255).  All writers are
deterministic so identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .masks import LabelRaster

MAX_LABEL = 65535
# Guard against absurd headers before allocating.
MAX_PIXELS = 1 << 30


class ChangeClass(IntEnum):
    """Wire codes for change maps.  Values are a stable contract."""

    STATIC = 0
    NEW = 1
    MISSING = 2
    REPLACED = 3


class FormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError(f"truncated PGM header at byte offset {start}")
    return data[start:pos], pos


def decode_pgm(data: bytes) -> tuple[np.ndarray, int]:
    """Parse a P5 file image; returns ``(array, maxval)``."""
    magic, pos = _next_token(data, 0)
    if magic != b"P5":
        raise FormatError(f"not a binary PGM (magic {magic[:8]!r} at byte offset 0)")
    fields = []
    for name in ("width", "height", "maxval"):
        tok_start = pos
        tok, pos = _next_token(data, pos)
        try:
            value = int(tok)
        except ValueError:
            raise FormatError(f"malformed {name} {tok[:16]!r} near byte offset {tok_start}") from None
        fields.append(value)
    width, height, maxval = fields
    if width < 1 or height < 1 or width * height > MAX_PIXELS:
        raise FormatError(f"unsupported dimensions {width}x{height}")
    if not 0 < maxval <= MAX_LABEL:
        raise FormatError(f"maxval {maxval} outside 1..{MAX_LABEL}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError(f"missing whitespace after maxval at byte offset {pos}")
    pos += 1
    sample = 1 if maxval < 256 else 2
    need = width * height * sample
    have = len(data) - pos
    if have < need:
        raise FormatError(
            f"truncated PGM payload at byte offset {len(data)}: expected {need} bytes from offset {pos}, got {have}"
        )
    dtype = np.dtype(">u2") if sample == 2 else np.dtype("u1")
    arr = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    if arr.size and int(arr.max()) > maxval:
        raise FormatError(f"sample exceeds maxval {maxval}")
    return arr.astype(np.uint16 if sample == 2 else np.uint8), maxval


def encode_pgm(arr: np.ndarray, maxval: int) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise FormatError(f"PGM needs a 2-D array, got shape {arr.shape}")
    if not 0 < maxval <= MAX_LABEL:
        raise FormatError(f"maxval {maxval} outside 1..{MAX_LABEL}")
    if arr.size and (arr.min() < 0 or arr.max() > maxval):
        raise FormatError(f"sample values outside 0..{maxval}")
    height, width = arr.shape
    header = b"P5\n%d %d\n%d\n" % (width, height, maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    return header + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def read_pgm(path) -> np.ndarray:
    try:
        return decode_pgm(Path(path).read_bytes())[0]
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from None


def write_pgm(path, arr: np.ndarray, maxval: int = 255) -> None:
    Path(path).write_bytes(encode_pgm(arr, maxval))


def read_label_raster(path) -> LabelRaster:
    return LabelRaster(read_pgm(path))


def write_label_raster(raster: LabelRaster, path) -> None:
    labels = raster.labels
    if labels.size and int(labels.max()) > MAX_LABEL:
        raise FormatError(f"label {int(labels.max())} exceeds {MAX_LABEL}")
    write_pgm(path, labels, maxval=MAX_LABEL)


def read_change_map(path) -> np.ndarray:
    codes = read_pgm(path).astype(np.uint8)
    if codes.size and int(codes.max()) > max(ChangeClass):
        raise FormatError(f"{path}: change code {int(codes.max())} is not a valid class")
    return codes


def write_change_map(codes: np.ndarray, path) -> None:
    write_pgm(path, np.asarray(codes, dtype=np.uint8), maxval=255)


@dataclass
class SequenceManifest:
    """Aligned reference/query frame lists, optionally with ground truth.

    Paths are kept exactly as written in the document; :meth:`resolve` turns
    them into filesystem paths relative to ``base_dir``.
    """

    ref_frames: list[str]
    query_frames: list[str]
    gt_frames: list[str] | None = None
    width: int | None = None
    height: int | None = None
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        self.validate()

    def __len__(self) -> int:
        return len(self.ref_frames)

    def validate(self) -> None:
        if not self.ref_frames:
            raise ManifestError("manifest has no frames")
        if len(self.ref_frames) != len(self.query_frames):
            raise ManifestError(
                f"length mismatch: {len(self.ref_frames)} ref frames vs {len(self.query_frames)} query frames"
            )
        if self.gt_frames is not None and len(self.gt_frames) != len(self.ref_frames):
            raise ManifestError(
                f"length mismatch: {len(self.gt_frames)} gt frames vs {len(self.ref_frames)} ref frames"
            )

    def resolve(self, p: str) -> Path:
        return (Path(self.base_dir) / p) if not os.path.isabs(p) else Path(p)

    @property
    def ref_paths(self) -> list[Path]:
        return [self.resolve(p) for p in self.ref_frames]

    @property
    def query_paths(self) -> list[Path]:
        return [self.resolve(p) for p in self.query_frames]

    @property
    def gt_paths(self) -> list[Path] | None:
        return None if self.gt_frames is None else [self.resolve(p) for p in self.gt_frames]

    def to_json(self) -> str:
        doc: dict = {"ref": list(self.ref_frames), "query": list(self.query_frames)}
        if self.gt_frames is not None:
            doc["gt"] = list(self.gt_frames)
        if self.width is not None:
            doc["width"] = self.width
        if self.height is not None:
            doc["height"] = self.height
        return json.dumps(doc, indent=2) + "\n"


def read_manifest(path, check_files: bool = True) -> SequenceManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(doc, dict) or "ref" not in doc or "query" not in doc:
        raise ManifestError(f"{path}: manifest needs 'ref' and 'query' lists")
    for key in ("ref", "query", "gt"):
        if key in doc and not (isinstance(doc[key], list) and all(isinstance(p, str) for p in doc[key])):
            raise ManifestError(f"{path}: '{key}' must be a list of paths")
    m = SequenceManifest(
        ref_frames=doc["ref"],
        query_frames=doc["query"],
        gt_frames=doc.get("gt"),
        width=doc.get("width"),
        height=doc.get("height"),
        base_dir=path.parent,
    )
    if check_files:
        for p in m.ref_paths + m.query_paths + (m.gt_paths or []):
            if not p.is_file():
                raise ManifestError(f"{path}: missing file {p}")
    return m


def write_manifest(manifest: SequenceManifest, path) -> None:
    Path(path).write_text(manifest.to_json())

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trackscd.formats import (
    ChangeClass,
    FormatError,
    ManifestError,
    SequenceManifest,
    decode_pgm,
    encode_pgm,
    read_change_map,
    read_label_raster,
    read_manifest,
    write_change_map,
    write_label_raster,
    write_manifest,
)
from trackscd.masks import LabelRaster

DATA = Path(__file__).parent / "data"


def test_change_codes_are_stable():
    assert [(c.name, c.value) for c in ChangeClass] == [("STATIC", 0), ("NEW", 1), ("MISSING", 2), ("REPLACED", 3)]


def test_label_raster_payload_bytes(tmp_path):
    raster = LabelRaster(np.array([[0, 1], [1, 2]], dtype=np.uint16))
    out = tmp_path / "r.pgm"
    write_label_raster(raster, out)
    data = out.read_bytes()
    assert data == b"P5\n2 2\n65535\n" + bytes([0x00, 0x00, 0x00, 0x01, 0x00, 0x01, 0x00, 0x02])
    assert data == (DATA / "labels_2x2.pgm").read_bytes()


def test_golden_label_raster_reads():
    r = read_label_raster(DATA / "labels_2x2.pgm")
    np.testing.assert_array_equal(r.labels, [[0, 1], [1, 2]])


def test_golden_change_map(tmp_path):
    codes = read_change_map(DATA / "change_3x1.pgm")
    np.testing.assert_array_equal(codes, [[0, 2, 3]])
    write_change_map(codes, tmp_path / "c.pgm")
    assert (tmp_path / "c.pgm").read_bytes() == (DATA / "change_3x1.pgm").read_bytes()


def test_truncated_file_names_offset(tmp_path):
    data = (DATA / "labels_2x2.pgm").read_bytes()[:-3]
    p = tmp_path / "t.pgm"
    p.write_bytes(data)
    with pytest.raises(FormatError, match="byte offset"):
        read_label_raster(p)
    with pytest.raises(FormatError, match="byte offset"):
        decode_pgm(b"P5\n2 ")


def test_malformed_headers():
    with pytest.raises(FormatError):
        decode_pgm(b"P2\n1 1\n255\n\x00")
    with pytest.raises(FormatError):
        decode_pgm(b"P5\nx 1\n255\n\x00")
    with pytest.raises(FormatError):
        decode_pgm(b"P5\n1 1\n70000\n\x00\x00")
    with pytest.raises(FormatError, match="dimensions"):
        decode_pgm(b"P5\n100000 100000\n255\n")


def test_header_comments_are_skipped():
    arr, maxval = decode_pgm(b"P5\n# made by hand\n2 1\n255\n\x07\x09")
    assert maxval == 255
    np.testing.assert_array_equal(arr, [[7, 9]])


def test_label_over_limit(tmp_path):
    with pytest.raises(FormatError):
        write_label_raster(LabelRaster(np.array([[70000]], dtype=np.uint32)), tmp_path / "x.pgm")


@settings(max_examples=100, deadline=None)
@given(arrays(np.uint16, st.tuples(st.integers(1, 9), st.integers(1, 9))))
def test_label_raster_round_trip(labels):
    data = encode_pgm(labels, 65535)
    back, _ = decode_pgm(data)
    np.testing.assert_array_equal(back, labels)
    assert encode_pgm(back, 65535) == data


def test_manifest_minimal(tmp_path):
    (tmp_path / "r1.pgm").write_bytes(b"")
    (tmp_path / "q1.pgm").write_bytes(b"")
    (tmp_path / "m.json").write_text(json.dumps({"ref": ["r1.pgm"], "query": ["q1.pgm"]}))
    m = read_manifest(tmp_path / "m.json")
    assert len(m) == 1 and m.gt_frames is None
    assert m.ref_paths == [tmp_path / "r1.pgm"]


def test_manifest_length_mismatch(tmp_path):
    with pytest.raises(ManifestError):
        SequenceManifest(["a", "b"], ["c"])
    with pytest.raises(ManifestError):
        SequenceManifest(["a"], ["c"], gt_frames=["x", "y"])
    (tmp_path / "m.json").write_text(json.dumps({"ref": ["a", "b"], "query": ["c"]}))
    with pytest.raises(ManifestError, match="length mismatch"):
        read_manifest(tmp_path / "m.json", check_files=False)


def test_manifest_missing_file(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"ref": ["a.pgm"], "query": ["b.pgm"]}))
    with pytest.raises(ManifestError, match="missing file"):
        read_manifest(tmp_path / "m.json")


def test_manifest_60_frames_round_trip(tmp_path):
    golden = (DATA / "manifest_60.json").read_bytes()
    m = read_manifest(DATA / "manifest_60.json", check_files=False)
    assert len(m) == 60 and m.width == 96 and m.height == 64
    write_manifest(m, tmp_path / "m.json")
    assert (tmp_path / "m.json").read_bytes() == golden
    # and from scratch, building the same lists in a different key order
    fresh = SequenceManifest(
        gt_frames=[f"gt/{t:04d}.pgm" for t in range(1, 61)],
        query_frames=[f"query/{t:04d}.pgm" for t in range(1, 61)],
        ref_frames=[f"ref/{t:04d}.pgm" for t in range(1, 61)],
        height=64,
        width=96,
    )
    assert fresh.to_json().encode() == golden

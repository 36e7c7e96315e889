import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from trackscd.sbl import (
    EPS,
    ChannelStats,
    ToyEncoder,
    apply_stats,
    capture_stats,
    feature_distance,
    sbl_table,
    style_fixture,
    toy_encoder,
)

features = arrays(
    np.float64,
    st.tuples(st.integers(1, 4), st.integers(1, 6), st.integers(1, 6)),
    elements=st.floats(-50, 50, allow_nan=False, width=32),
)


def test_stats_of_small_channel():
    s = capture_stats(np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    assert s.mean[0] == pytest.approx(2.5, abs=1e-12)
    assert s.std[0] == pytest.approx(np.sqrt(1.25), abs=1e-12)
    assert s.std[0] == pytest.approx(1.11803, abs=1e-5)


def test_constant_channel_has_zero_std():
    s = capture_stats(np.full((1, 3, 3), 7.0))
    assert s.mean[0] == 7.0 and s.std[0] == 0.0


def test_apply_to_unit_stats():
    out = apply_stats(np.array([[[1.0, 2.0, 3.0, 4.0]]]), ChannelStats([0.0], [1.0]))
    np.testing.assert_allclose(out[0, 0], [-1.34164, -0.44721, 0.44721, 1.34164], atol=1e-5)


def test_apply_handles_constant_query():
    out = apply_stats(np.full((1, 2, 2), 3.0), ChannelStats([1.0], [2.0]))
    np.testing.assert_allclose(out, 1.0)


@settings(max_examples=200, deadline=None)
@given(features)
def test_self_style_is_identity(z):
    out = apply_stats(z, capture_stats(z))
    # identity holds wherever the channel spread is above the eps floor
    wide = capture_stats(z).std >= EPS
    np.testing.assert_allclose(out[wide], z[wide], atol=1e-6)
    np.testing.assert_allclose(out.mean(axis=(1, 2)), z.mean(axis=(1, 2)), atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(features, features)
def test_apply_is_idempotent_and_shape_preserving(z, ref):
    if ref.shape[0] != z.shape[0]:
        ref = np.resize(ref, (z.shape[0],) + ref.shape[1:])
    s = capture_stats(ref)
    once = apply_stats(z, s)
    assert once.shape == z.shape
    wide = (capture_stats(z).std >= EPS) & (s.std >= EPS)
    np.testing.assert_allclose(apply_stats(once, s)[wide], once[wide], atol=1e-6)


@settings(max_examples=200, deadline=None)
@given(features, st.floats(0.1, 10), st.floats(-5, 5))
def test_stats_round_trip(z, sigma, mu):
    s = ChannelStats(np.full(z.shape[0], mu), np.full(z.shape[0], sigma))
    out = capture_stats(apply_stats(z, s))
    np.testing.assert_allclose(out.mean, mu, atol=1e-6)
    own = capture_stats(z).std
    # channels flatter than eps keep their own shape and are scaled by sigma / eps
    expected = np.where(own >= EPS, sigma, sigma * own / EPS)
    np.testing.assert_allclose(out.std, expected, atol=1e-6, rtol=1e-6)


def test_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        apply_stats(np.zeros((2, 3, 3)), ChannelStats([0.0], [1.0]))
    with pytest.raises(ValueError):
        ChannelStats([0.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        ChannelStats([0.0], [-1.0])


def test_encoder_shapes_and_record_mode():
    image, _ = style_fixture()
    feats, stats = toy_encoder(image, layers=4)
    assert len(feats) == len(stats) == 4
    assert [f.shape for f in feats] == [(16, 32, 32), (16, 32, 32), (16, 16, 16), (16, 8, 8)]
    again = toy_encoder(image, layers=4, sbl_count=0, saved=stats)
    for a, b in zip(feats, again):
        np.testing.assert_array_equal(a, b)


def test_self_bridging_changes_nothing():
    image, _ = style_fixture()
    feats, stats = toy_encoder(image, layers=3)
    bridged = toy_encoder(image, layers=3, sbl_count=3, saved=stats)
    for a, b in zip(feats, bridged):
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_bridged_layer_takes_reference_stats():
    ref, query = style_fixture()
    enc = ToyEncoder(layers=3, in_channels=3)
    _, ref_stats = enc.forward(ref)
    _, seen = enc.forward(query, sbl_count=1, saved=ref_stats)
    # the statistics seen at layer 1 are the query's own; the substitution happens after recording
    assert not np.allclose(seen[0].mean, ref_stats[0].mean)


def test_encoder_argument_checks():
    image, _ = style_fixture()
    with pytest.raises(ValueError):
        toy_encoder(image, layers=2, sbl_count=3, saved=[])
    with pytest.raises(ValueError):
        toy_encoder(image, layers=2, sbl_count=1)
    with pytest.raises(ValueError):
        ToyEncoder(layers=0)
    with pytest.raises(ValueError):
        ToyEncoder(in_channels=1).forward(image)


def test_more_bridging_brings_query_closer():
    for layers in range(1, 7):
        finals = [row["final"] for row in sbl_table(layers)]
        assert all(a > b for a, b in zip(finals, finals[1:])), (layers, finals)


def test_feature_distance():
    a = np.ones((1, 2, 2))
    assert feature_distance(a, a) == 0.0
    assert feature_distance(a, 2 * a) == pytest.approx(1.0)

"""Style bridging: per-channel feature statistics recorded on the reference
pass and imposed on the query pass.

Features are ``(C, H, W)`` float arrays.  Statistics use the population
variance over the spatial positions of each channel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EPS = 1e-5
# weight draw used by the default encoder and the demo table
DEFAULT_SEED = 3


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise ValueError(f"mean has {mean.size} channels, std has {std.size}")
        if np.any(std < 0):
            raise ValueError("standard deviations must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def channels(self) -> int:
        return self.mean.size


def _as_feature(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 2:
        z = z[None]
    if z.ndim != 3 or min(z.shape) < 1:
        raise ValueError(f"feature must be (C, H, W) with positive sizes, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("feature holds non-finite values")
    return z


def capture_stats(z) -> ChannelStats:
    z = _as_feature(z)
    return ChannelStats(z.mean(axis=(1, 2)), z.std(axis=(1, 2)))


def apply_stats(z_q, s_ref: ChannelStats, eps: float = EPS) -> np.ndarray:
    z_q = _as_feature(z_q)
    if z_q.shape[0] != s_ref.channels:
        raise ValueError(f"feature has {z_q.shape[0]} channels, stats have {s_ref.channels}")
    own = capture_stats(z_q)
    scale = s_ref.std / np.maximum(own.std, eps)
    return (z_q - own.mean[:, None, None]) * scale[:, None, None] + s_ref.mean[:, None, None]


def _conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # reflect padding keeps border statistics free of zero-padding artefacts
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect" if min(x.shape[1:]) > 1 else "edge")
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4])) + b[:, None, None]


def _pool2(x: np.ndarray) -> np.ndarray:
    c, h, w = x.shape
    if h < 2 or w < 2:
        return x
    h2, w2 = h // 2, w // 2
    return x[:, : 2 * h2, : 2 * w2].reshape(c, h2, 2, w2, 2).mean(axis=(2, 4))


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


class ToyEncoder:
    """Fixed-weight stem plus residual blocks; ``layers`` counts the stem.

    A bridging point sits right after the stem convolution and after the
    skip addition of every residual block, so there are exactly ``layers``
    of them.  Blocks after the first halve the spatial size on entry.
    """

    def __init__(self, layers: int = 4, channels: int = 16, in_channels: int = 1, seed: int = DEFAULT_SEED) -> None:
        if layers < 1:
            raise ValueError("need at least one layer")
        rng = np.random.default_rng(seed)

        def kernel(cout, cin):
            return rng.normal(0.0, 1.0 / np.sqrt(9 * cin), size=(cout, cin, 3, 3))

        self.layers = layers
        self.in_channels = in_channels
        self.stem = (kernel(channels, in_channels), rng.normal(0.0, 0.1, size=channels))
        self.blocks = [
            (kernel(channels, channels), rng.normal(0.0, 0.1, size=channels),
             kernel(channels, channels), rng.normal(0.0, 0.1, size=channels))
            for _ in range(layers - 1)
        ]

    def forward(
        self, image, sbl_count: int = 0, saved: Sequence[ChannelStats] | None = None
    ) -> tuple[list[np.ndarray], list[ChannelStats]]:
        """Returns per-layer features and the statistics seen at each bridging point.

        The recorded statistics are those *before* any substitution, so a
        plain pass (``sbl_count=0``) yields the reference statistics.
        """
        x = _as_feature(image)
        if x.shape[0] != self.in_channels:
            raise ValueError(f"encoder expects {self.in_channels} input channels, got {x.shape[0]}")
        if not 0 <= sbl_count <= self.layers:
            raise ValueError(f"sbl_count must be in 0..{self.layers}, got {sbl_count}")
        if sbl_count and (saved is None or len(saved) < sbl_count):
            raise ValueError(f"{sbl_count} bridging layers need as many saved statistics")

        feats: list[np.ndarray] = []
        stats: list[ChannelStats] = []

        def bridge(z, layer):
            stats.append(capture_stats(z))
            return apply_stats(z, saved[layer]) if layer < sbl_count else z

        z = _conv3x3(x, *self.stem)
        z = _relu(bridge(z, 0))
        feats.append(z)
        for k, (w1, b1, w2, b2) in enumerate(self.blocks, start=1):
            if k > 1:
                z = _pool2(z)
            y = _conv3x3(_relu(_conv3x3(z, w1, b1)), w2, b2)
            z = _relu(bridge(z + y, k))
            feats.append(z)
        return feats, stats


def toy_encoder(image, layers: int = 4, sbl_count: int = 0, saved: Sequence[ChannelStats] | None = None, seed: int = DEFAULT_SEED):
    """Run the default encoder.

    ``saved is None`` is record mode: features pass through untouched and
    the per-layer statistics are returned alongside them.  Otherwise the
    first ``sbl_count`` bridging points take their statistics from ``saved``.
    """
    x = _as_feature(image)
    enc = ToyEncoder(layers=layers, in_channels=x.shape[0], seed=seed)
    if saved is None:
        if sbl_count:
            raise ValueError("record mode takes no sbl_count")
        return enc.forward(x)
    return enc.forward(x, sbl_count=sbl_count, saved=saved)[0]


def feature_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Relative L2 distance ``|a - b| / |a|``."""
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-12))


def style_fixture(shape: tuple[int, int] = (32, 32), seed: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """A smooth 3-channel image and a per-channel affine restyling of it."""
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    chans = []
    for _ in range(3):
        fx, fy, ph = rng.uniform(1, 4), rng.uniform(1, 4), rng.uniform(0, 2 * np.pi)
        chans.append(0.5 + 0.3 * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph) + 0.1 * rng.normal(size=shape))
    image = np.stack(chans)
    a = np.array([0.6, 1.4, 0.8])[:, None, None]
    b = np.array([0.25, -0.3, 0.1])[:, None, None]
    return image, a * image + b


def sbl_table(layers: int = 4, fixture: tuple[np.ndarray, np.ndarray] | None = None, seed: int = DEFAULT_SEED) -> list[dict]:
    """Distance between reference and restyled query features for each SBL count."""
    ref, query = fixture if fixture is not None else style_fixture()
    ref_feats, ref_stats = toy_encoder(ref, layers=layers, seed=seed)
    rows = []
    for k in range(layers + 1):
        q_feats = toy_encoder(query, layers=layers, sbl_count=k, saved=ref_stats, seed=seed)
        row = {"sbl_count": k}
        for l, (fr, fq) in enumerate(zip(ref_feats, q_feats), start=1):
            row[f"layer{l}"] = feature_distance(fr, fq)
        row["final"] = row[f"layer{layers}"]
        rows.append(row)
    return rows

"""Scene change detection by tracking masks across a reference/query pair."""

from .change import ChangeMap, ContentThreshold, adaptive_tau, detect_pair, tau_difference
from .formats import ChangeClass, SequenceManifest, read_manifest, write_manifest
from .masks import LabelRaster, Mask, MaskSet, from_label_raster, to_label_raster
from .metrics import confusion, evaluate
from .postproc import ProposalSet, postprocess
from .sim import CCSegmenter, GreedyOverlapTracker, SyntheticWorld, generate, oracle_tracker, random_world
from .video import SequenceConfig, detect_images, run_sequence, run_tracks

__all__ = [
    "CCSegmenter",
    "ChangeClass",
    "ChangeMap",
    "ContentThreshold",
    "GreedyOverlapTracker",
    "LabelRaster",
    "Mask",
    "MaskSet",
    "ProposalSet",
    "SequenceConfig",
    "SequenceManifest",
    "SyntheticWorld",
    "adaptive_tau",
    "confusion",
    "detect_images",
    "detect_pair",
    "evaluate",
    "from_label_raster",
    "generate",
    "oracle_tracker",
    "postprocess",
    "random_world",
    "read_manifest",
    "run_sequence",
    "run_tracks",
    "tau_difference",
    "to_label_raster",
    "write_manifest",
]

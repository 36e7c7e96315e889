"""Command-line entry point: ``trackscd <subcommand> ...``.

Every subcommand also accepts ``--config FILE``: a JSON object whose keys
mirror the long flag names (``t-max`` or ``t_max``).  Flags given on the
command line win over the file.

External trackers plug in through ``--tracker external-files --tracks DIR``
where ``DIR`` holds 16-bit label rasters named::

    DIR/missing/spine/0001.pgm   reference masks tracked along the reference sequence
    DIR/missing/branch/0001.pgm  the same masks hopped into the query frame
    DIR/new/spine/0001.pgm       query masks tracked along the query sequence
    DIR/new/branch/0001.pgm      the same masks hopped into the reference frame

with one file per frame, numbered from 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .change import ContentThreshold
from .masks import Mask, from_label_raster, to_label_raster
from .metrics import evaluate
from .postproc import ProposalSet, postprocess
from .sbl import sbl_table
from .sim import CCSegmenter, GreedyOverlapTracker, SyntheticWorld, generate, oracle_tracker
from .video import DirectionTrace, SequenceConfig, detect_images, run_sequence, run_tracks

log = logging.getLogger("trackscd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse prints free text by default
        raise UsageError(message)


def frame_name(t: int) -> str:
    return f"{t:04d}.pgm"


def _tau(text: str) -> ContentThreshold:
    try:
        tau = ContentThreshold.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'adaptive', got {text!r}") from None
    if tau.value is not None and not 0 <= tau.value <= 1:
        raise argparse.ArgumentTypeError(f"tau must be in [0, 1], got {text}")
    return tau


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=_tau, default=ContentThreshold.adaptive(), help="content threshold or 'adaptive'")
    p.add_argument("--tracker", choices=["oracle", "greedy", "external-files"], default="greedy")
    p.add_argument("--world", type=Path, help="world description (oracle tracker)")
    p.add_argument("--rho", type=float, default=0.0, help="oracle residual fraction")
    p.add_argument("--tracks", type=Path, help="directory of pre-tracked masks (external-files tracker)")
    p.add_argument("--merge-thresh", type=float, default=0.5)
    p.add_argument("--min-area", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.0, help="segmenter split/merge noise rate")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> _Parser:
    parser = _Parser(prog="trackscd", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render a synthetic sequence pair with ground truth")
    p.add_argument("--world", type=Path, required=True)
    p.add_argument("--frames", type=_positive, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("detect", help="change detection on one image pair")
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--query", type=Path, required=True)
    _add_engine_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("detect-seq", help="change detection on a sequence pair")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--t-max", type=_positive, default=60)
    p.add_argument("--detect-every", type=_positive, default=5)
    _add_engine_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("postproc", help="merge overlapping proposals into one label raster")
    p.add_argument("--proposals", type=Path, required=True, help="directory with one PGM per proposal")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--merge-thresh", type=float, default=0.5)
    p.add_argument("--min-area", type=int, default=100)
    p.add_argument("--invalid-region", type=Path)

    p = sub.add_parser("eval", help="score predicted change maps against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--binary", action="store_true", help="score changed vs unchanged only")
    p.add_argument("--per-frame", action="store_true", help="average per-frame scores instead of pooling counts")
    p.add_argument("--keep-empty", action="store_true", help="score absent classes as 0 instead of skipping them")
    p.add_argument("--report", type=Path, required=True)

    p = sub.add_parser("sbl-demo", help="feature distance vs number of style bridging layers, as CSV")
    p.add_argument("--layers", type=_positive, default=4)
    p.add_argument("--out", type=Path, required=True)

    for name, sp in sub.choices.items():
        sp.add_argument("--config", type=Path, help="JSON file of flag values")
    return parser


def _config_path(argv: list[str]) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser: _Parser, argv: list[str]) -> argparse.Namespace:
    command = next((a for a in argv if a in COMMANDS), None)
    path = _config_path(argv)
    if command is None or path is None:
        return parser.parse_args(argv)
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[command]  # type: ignore[union-attr]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in doc.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} for {command}")
        action = known[dest]
        if action.type is not None and isinstance(value, (str, int, float)) and not isinstance(value, bool):
            try:
                value = action.type(str(value))
            except (argparse.ArgumentTypeError, ValueError) as e:
                raise UsageError(f"config key {key!r}: {e}") from None
        defaults[dest] = value
        # a required flag supplied by the file may be left off the command line
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------


def _load_image(path: Path) -> np.ndarray:
    return formats.read_pgm(path)


def _segmenter(args) -> CCSegmenter:
    return CCSegmenter(noise=args.noise, seed=args.seed)


def _tracker(args):
    if args.tracker == "oracle":
        if args.world is None:
            raise UsageError("--tracker oracle needs --world")
        return oracle_tracker(SyntheticWorld.load(args.world), args.rho)
    if args.tracker == "greedy":
        return GreedyOverlapTracker(_segmenter(args))
    raise AssertionError(args.tracker)


def _config(args, **extra) -> SequenceConfig:
    return SequenceConfig(tau=args.tau, merge_thresh=args.merge_thresh, min_area=args.min_area, **extra)


def load_tracks(root: Path, frames: int) -> tuple[DirectionTrace, DirectionTrace]:
    traces = []
    for direction in ("missing", "new"):
        trace = DirectionTrace()
        for t in range(1, frames + 1):
            for part in ("spine", "branch"):
                path = root / direction / part / frame_name(t)
                if not path.is_file():
                    raise FileNotFoundError(f"external tracks: missing {path}")
                getattr(trace, part).append(from_label_raster(formats.read_label_raster(path)))
        traces.append(trace)
    return traces[0], traces[1]


def cmd_synth(args) -> None:
    world = SyntheticWorld.load(args.world)
    seqs = generate(world, args.frames, args.seed)
    out: Path = args.out
    for sub in ("ref", "query", "gt"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    names = [frame_name(t) for t in range(1, args.frames + 1)]
    for name, r, q, g in zip(names, seqs.ref, seqs.query, seqs.gt):
        formats.write_pgm(out / "ref" / name, r)
        formats.write_pgm(out / "query" / name, q)
        formats.write_change_map(g, out / "gt" / name)
    manifest = formats.SequenceManifest(
        ref_frames=[f"ref/{n}" for n in names],
        query_frames=[f"query/{n}" for n in names],
        gt_frames=[f"gt/{n}" for n in names],
        width=world.width,
        height=world.height,
        base_dir=out,
    )
    formats.write_manifest(manifest, out / "manifest.json")
    log.info("wrote %d frames to %s", args.frames, out)


def cmd_detect(args) -> None:
    if args.tracker == "external-files":
        if args.tracks is None:
            raise UsageError("--tracker external-files needs --tracks")
        missing, new = load_tracks(args.tracks, 1)
        cmap = run_tracks(missing, new, _config(args, t_max=1))[0]
    else:
        ref, query = _load_image(args.ref), _load_image(args.query)
        if ref.shape != query.shape:
            raise ValueError(f"dimension mismatch: ref {ref.shape} vs query {query.shape}")
        cmap = detect_images(ref, query, _segmenter(args), _tracker(args), _config(args))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    formats.write_change_map(cmap.codes, args.out)


def cmd_detect_seq(args) -> None:
    manifest = formats.read_manifest(args.manifest)
    config = _config(args, t_max=args.t_max, detect_every=args.detect_every)
    if args.tracker == "external-files":
        if args.tracks is None:
            raise UsageError("--tracker external-files needs --tracks")
        missing, new = load_tracks(args.tracks, len(manifest))
        maps = run_tracks(missing, new, config)
    else:
        ref = [_load_image(p) for p in manifest.ref_paths]
        query = [_load_image(p) for p in manifest.query_paths]
        maps = run_sequence(ref, query, _segmenter(args), _tracker(args), config)
    args.out.mkdir(parents=True, exist_ok=True)
    for t, cmap in enumerate(maps, start=1):
        formats.write_change_map(cmap.codes, args.out / frame_name(t))


def cmd_postproc(args) -> None:
    files = sorted(args.proposals.glob("*.pgm"))
    props = []
    shape = None
    for i, f in enumerate(files, start=1):
        arr = formats.read_pgm(f)
        shape = shape or arr.shape
        if arr.shape != shape:
            raise ValueError(f"{f}: dimension mismatch {arr.shape} vs {shape}")
        if not arr.any():
            raise ValueError(f"{f}: proposal is empty")
        props.append(Mask(i, arr > 0))
    invalid = None
    if args.invalid_region is not None:
        invalid = formats.read_pgm(args.invalid_region) > 0
        shape = shape or invalid.shape
    if shape is None:
        raise ValueError(f"no proposals in {args.proposals} and no --invalid-region to size the frame")
    masks = postprocess(ProposalSet(props, shape, invalid), args.merge_thresh, args.min_area)
    formats.write_label_raster(to_label_raster(masks), args.out)


def cmd_eval(args) -> None:
    pred_files = sorted(p.name for p in args.pred.glob("*.pgm"))
    gt_files = sorted(p.name for p in args.gt.glob("*.pgm"))
    if pred_files != gt_files:
        raise ValueError(f"prediction and ground-truth frame names differ ({len(pred_files)} vs {len(gt_files)} files)")
    preds = [formats.read_change_map(args.pred / n) for n in pred_files]
    gts = [formats.read_change_map(args.gt / n) for n in gt_files]
    report = evaluate(preds, gts, binary=args.binary, per_frame=args.per_frame, exclude_empty=not args.keep_empty)
    args.report.parent.mkdir(parents=True, exist_ok=True)
    args.report.write_text(json.dumps(report, indent=2) + "\n")


def cmd_sbl_demo(args) -> None:
    rows = sbl_table(args.layers)
    fields = ["sbl_count", *[f"layer{l}" for l in range(1, args.layers + 1)]]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([row["sbl_count"], *(f"{row[f]:.6f}" for f in fields[1:])])


COMMANDS = {
    "synth": cmd_synth,
    "detect": cmd_detect,
    "detect-seq": cmd_detect_seq,
    "postproc": cmd_postproc,
    "eval": cmd_eval,
    "sbl-demo": cmd_sbl_demo,
}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as e:
        return _fail("usage", str(e), 2)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as e:
        return _fail("usage", str(e), 2)
    except (OSError, ValueError, RuntimeError) as e:
        return _fail(type(e).__name__, str(e), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""``waterlens`` command line: simulate, restore and evaluate.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .formats import (
    FormatError,
    format_float,
    read_f32r,
    read_keyvalue,
    read_ppm,
    write_f32r,
    write_keyvalue,
    write_ppm,
)
from .metrics import MetricInputError, evaluate
from .neuralfields import export_weights
from .refraction import as_frames, as_image, render_clean, render_distorted, surface
from .training import InputError, Problem, TrainConfig, TrainingDiverged, train
from .wavesim import WAVE_TYPES, WaveParams, demo_scene, simulate_sequence
from .diffcore import ContractError

log = logging.getLogger("waterlens")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST_VERSION = "1"
F32R_VERSION = "1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- simulate -------------------------------------------------------------------

# flag name -> WaveParams field
_WAVE_FLAGS = {
    "h_base": float,
    "amplitude": float,
    "wavelength": float,
    "speed": float,
    "damping": float,
    "center_x": float,
    "center_y": float,
    "components": int,
    "blobs": int,
    "drift": float,
}


def cmd_simulate(args) -> int:
    if args.image is not None:
        try:
            gt = read_ppm(args.image)
        except FormatError as exc:
            raise UsageError(f"cannot read --image: {exc}") from exc
    else:
        gt = demo_scene(args.demo)
    overrides = {k: getattr(args, k) for k in _WAVE_FLAGS if getattr(args, k) is not None}
    try:
        params = WaveParams(wave=args.wave, seed=args.seed, **overrides)
    except ContractError as exc:
        raise UsageError(str(exc)) from exc
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    seq = simulate_sequence(gt, params, args.frames, n=args.n)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ppm(out / "gt.ppm", gt)
    names = []
    for k in range(args.frames):
        names.append(f"frame_{k:03d}.ppm")
        write_ppm(out / names[-1], seq.frames[k])
        write_f32r(out / f"d_gt_{k:03d}.f32r", seq.distortions[k])
        write_f32r(out / f"h_gt_{k:03d}.f32r", seq.heights[k])
    items = [
        ("manifest_version", MANIFEST_VERSION),
        ("f32r_version", F32R_VERSION),
        ("image_format", "ppm-p6-maxval255"),
        ("color_values", "linear in [0, 1], no transfer function"),
        ("wave_model", "stand-in closed-form surface, not the reference simulator"),
        ("width", gt.shape[1]),
        ("height", gt.shape[0]),
        ("frames", args.frames),
        ("n_refraction", format_float(args.n)),
        ("h0", format_float(seq.h0)),
        ("source_image", args.image if args.image is not None else f"demo_scene({args.demo})"),
    ]
    for key, value in params.as_items():
        items.append((f"wave.{key}", format_float(value) if isinstance(value, float) else value))
    items.append(("gt", "gt.ppm"))
    items.append(("frame_files", " ".join(names)))
    items.append(("distortion_files", " ".join(f"d_gt_{k:03d}.f32r" for k in range(args.frames))))
    items.append(("height_files", " ".join(f"h_gt_{k:03d}.f32r" for k in range(args.frames))))
    write_keyvalue(out / "manifest.txt", items)
    log.info("wrote %d frames to %s (max |d| = %.4f)", args.frames, out, float(np.abs(seq.distortions).max()))
    return EXIT_OK


# --- restore --------------------------------------------------------------------


def load_frames(directory) -> list[np.ndarray]:
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"{d} is not a directory")
    files = sorted(d.glob("frame_*.ppm"))
    return [read_ppm(f) for f in files]


def load_config(path) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        return TrainConfig.from_mapping(read_keyvalue(path))
    except OSError as exc:
        raise UsageError(f"cannot read --config: {exc.strerror}") from exc
    except (KeyError, ValueError) as exc:
        raise UsageError(f"bad config {path}: {exc.args[0]}") from exc


def cmd_restore(args) -> int:
    config = load_config(args.config)
    frames = load_frames(args.frames)
    if len({f.shape for f in frames}) > 1:
        raise InputError("frames have mismatched shapes")
    frames = frames[: config.frames]
    if len(frames) < 2:
        raise InputError(f"restore needs at least 2 frames, found {len(frames)}")
    stack = np.stack(frames)

    def progress(stage, it, loss):
        if it % args.log_every == 0:
            log.info("stage %d iteration %d loss %.6f", stage, it, loss)

    hf, imf, tlog = train(stack, config, progress)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prob = Problem.from_frames(stack, config.n_refraction)
    grid = prob.grid
    surf = surface(hf, grid, prob.times, prob.constants)
    write_ppm(out / "restored.ppm", as_image(render_clean(imf, grid), grid))
    heights = as_frames(surf.heights, grid)
    dists = as_frames(surf.d, grid)
    recon = as_frames(render_distorted(imf, grid, surf.d), grid)
    for k in range(prob.T):
        write_f32r(out / f"h_pred_{k:03d}.f32r", heights[k])
        write_f32r(out / f"d_pred_{k:03d}.f32r", dists[k])
        write_ppm(out / f"recon_{k:03d}.ppm", recon[k])
    (out / "loss.log").write_text("\n".join(tlog.lines()) + "\n")
    export_weights({"height": hf, "image": imf}, out / "weights")
    write_keyvalue(out / "config.txt", config.as_items())
    log.info("restored %d frames into %s", prob.T, out)
    return EXIT_OK


# --- evaluate -------------------------------------------------------------------


def load_raster_stack(path, pattern: str) -> np.ndarray:
    """One F32R file, or every file matching ``pattern`` in a directory, stacked."""
    p = Path(path)
    files = sorted(p.glob(pattern)) if p.is_dir() else [p]
    if not files:
        raise InputError(f"no {pattern} files in {p}")
    try:
        return np.stack([read_f32r(f) for f in files])
    except ValueError as exc:
        raise InputError(f"{p}: rasters differ in shape") from exc


def cmd_evaluate(args) -> int:
    pred, gt = read_ppm(args.pred), read_ppm(args.gt)
    h_pred = h_gt = d_pred = d_gt = None
    if args.height_pred and args.height_gt:
        h_pred = load_raster_stack(args.height_pred, "h_*.f32r")[..., 0]
        h_gt = load_raster_stack(args.height_gt, "h_*.f32r")[..., 0]
    if args.d_pred and args.d_gt:
        d_pred = load_raster_stack(args.d_pred, "d_*.f32r")
        d_gt = load_raster_stack(args.d_gt, "d_*.f32r")
    report = evaluate(pred, gt, h_pred, h_gt, d_pred, d_gt)
    items = report.items()
    if args.out:
        write_keyvalue(args.out, items)
    else:
        for k, v in items:
            print(f"{k} = {v}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="waterlens", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="write a synthetic distorted sequence")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="ground-truth scene (binary PPM)")
    src.add_argument("--demo", type=int, metavar="SIZE", help="use the built-in SIZE x SIZE demo scene")
    sim.add_argument("--wave", choices=WAVE_TYPES, default="ripple")
    sim.add_argument("--frames", type=int, default=10)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--n", type=float, default=1.33, help="refraction index")
    for name, kind in _WAVE_FLAGS.items():
        sim.add_argument("--" + name.replace("_", "-"), dest=name, type=kind)
    sim.set_defaults(func=cmd_simulate)

    res = sub.add_parser("restore", help="fit height and image fields to a frame directory")
    res.add_argument("--frames", required=True, help="directory of frame_*.ppm")
    res.add_argument("--out", required=True)
    res.add_argument("--config", help="flat key = value training config")
    res.add_argument("--log-every", type=int, default=50)
    res.set_defaults(func=cmd_restore)

    ev = sub.add_parser("evaluate", help="compare a restoration with ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--height-pred")
    ev.add_argument("--height-gt")
    ev.add_argument("--d-pred")
    ev.add_argument("--d-gt")
    ev.add_argument("--out", help="report file (default: stdout)")
    ev.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"waterlens: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, FormatError, MetricInputError) as exc:
        print(f"waterlens: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"waterlens: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

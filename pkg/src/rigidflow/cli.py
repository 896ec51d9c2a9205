"""Command line entry point: ``rigidflow <command> ...``.

Commands chain into a pipeline::

    rigidflow gen --seed 0 --out run/scene
    rigidflow gt --scene run/scene/scene.json --out run/gt
    rigidflow predict --gt run/gt --source noisy --noise-sigma 0.005 --out run/pred
    rigidflow segment --pred run/pred --refine --out run/seg
    rigidflow eval --pred run/seg --gt run/gt --seg --out run/report
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import fileio, pipeline
from .fileio import ArchiveError
from .losses import LossWeights, direct_fit, noisy_init
from .metrics import format_table, metric_report
from .synth import ConfigError, SynthConfig, compute_gt_maps, generate_scene_pair

log = logging.getLogger("rigidflow")

SCENE_FILE = "scene.json"


class CliError(Exception):
    pass


def _range(text: str):
    parts = text.split("..")
    try:
        if len(parts) == 1:
            lo = hi = int(parts[0])
        elif len(parts) == 2:
            lo, hi = int(parts[0]), int(parts[1])
        else:
            raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B or N, got {text!r}") from None
    return lo, hi


def _resolution(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return h, w


def _csv_text(rows: list) -> str:
    buf = io.StringIO()
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands

def cmd_gen(args):
    h, w = args.resolution
    cfg = SynthConfig(height=h, width=w, objects=args.objects, depth_noise=args.depth_noise,
                      symmetry_prob=args.symmetry_prob)
    scene = generate_scene_pair(cfg, args.seed)
    out = Path(args.out)
    fileio.save_scene(out / SCENE_FILE, scene)
    log.info("wrote %s (%d objects)", out / SCENE_FILE, len(scene.objects))


def cmd_gt(args):
    scene_path = Path(args.scene)
    if scene_path.is_dir():
        scene_path = scene_path / SCENE_FILE
    scene = fileio.load_scene(scene_path)
    gt = compute_gt_maps(scene, D=args.centroid_pixels, default_radius=args.default_radius)
    pipeline.save_gt(args.out, gt, {"kind": "ground_truth", "seed": scene.seed,
                                    "centroid_pixels": args.centroid_pixels})


def cmd_predict(args):
    gt = pipeline.load_gt(args.gt)
    if args.source == "oracle":
        pred = pipeline.oracle_prediction(gt)
    else:
        pred = pipeline.noisy_prediction(gt, args.noise_sigma, np.random.default_rng(args.seed))
    pipeline.save_pred(args.out, pred, {"kind": "prediction", "source": args.source,
                                        "noise_sigma": args.noise_sigma, "seed": args.seed})


def cmd_fit(args):
    gt = pipeline.load_gt(args.gt)
    init = noisy_init(gt, args.noise_sigma, np.random.default_rng(args.seed))
    res = direct_fit(gt, init, steps=args.steps, step_size=args.step_size,
                     weights=LossWeights(), optimizer=args.optimizer)
    rows = [dict(step=i, **bd.row()) for i, bd in enumerate(res.trace)]
    out = Path(args.out)
    pipeline.save_pred(out, res.pred, {"kind": "prediction", "source": "fit", "steps": args.steps,
                                       "step_size": args.step_size, "optimizer": args.optimizer})
    fileio.atomic_write_text(out / "loss.csv", _csv_text(rows))
    if not args.no_plot:
        from .plots import plot_loss_trace
        plot_loss_trace(rows, out / "loss.png")
    first, last = res.trace[0].total, res.trace[-1].total
    print(f"total loss {first:.6g} -> {last:.6g} ({100 * last / first if first else 0:.2f}%)")


def cmd_segment(args):
    pred = pipeline.load_pred(args.pred)
    try:
        result, S = pipeline.segment_prediction(pred, refine=args.refine)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    pipeline.save_segmentation(args.out, result, S, {"kind": "segmentation", "refined": bool(args.refine),
                                                     "segments": result.n_segments})
    log.info("%d segments", result.n_segments)


def _eval_one(pair, with_seg):
    pred_dir, gt_dir = pair
    gt = pipeline.load_gt(gt_dir)
    maps = fileio.load_maps(pred_dir, as_float64=True)
    if "S" not in maps:
        raise CliError(f"{pred_dir}: no scene flow map 'S'")
    labels = None
    if with_seg:
        if "labels" not in maps:
            raise CliError(f"{pred_dir}: --seg needs a segmentation archive with a 'labels' map")
        labels = maps["labels"]
    try:
        return pipeline.evaluate(maps["S"], gt, labels)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_eval(args):
    if len(args.pred) != len(args.gt):
        raise CliError(f"got {len(args.pred)} --pred but {len(args.gt)} --gt directories")
    rows = pipeline.ordered_map(lambda p: _eval_one(p, args.seg), zip(args.pred, args.gt))
    report = metric_report(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        scene_rows = [dict(scene=i, pred=str(p), **r) for i, (p, r) in enumerate(zip(args.pred, rows))]
        fileio.atomic_write_text(out / "scenes.csv", _csv_text(scene_rows))
        fileio.atomic_write_text(out / "report.csv", _csv_text([report]))
        if not args.no_plot:
            from .plots import plot_scene_metrics
            plot_scene_metrics(rows, out / "metrics.png")
        print(format_table(report))
    else:
        sys.stdout.write(_csv_text([report]))


def cmd_viz(args):
    maps = fileio.load_maps(args.maps, as_float64=True)
    images = {}
    if "S" in maps:
        images["flow.ppm"] = fileio.viz_flow(maps["S"], args.vmax)
    for key in ("labels", "obj_id"):
        if key in maps:
            images["labels.ppm"] = fileio.viz_labels(maps[key])
            break
    if "I" in maps:
        images["rgb.ppm"] = fileio.ppm_bytes(np.round(np.clip(maps["I"], 0, 1) * 255))
    if not images:
        raise CliError(f"{args.maps}: nothing to visualize (needs S, labels/obj_id or I)")
    out = Path(args.out)
    for name, data in images.items():
        fileio.atomic_write_bytes(out / name, data)


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rigidflow", description="Object scene flow toolkit on synthetic rigid scenes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic scene pair")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--objects", type=_range, default=(2, 6), help="object count range A..B")
    g.add_argument("--resolution", type=_resolution, default=(60, 80), help="HxW")
    g.add_argument("--depth-noise", type=float, default=0.0, help="Gaussian depth noise sigma (m)")
    g.add_argument("--symmetry-prob", type=float, default=0.6)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    g = sub.add_parser("gt", help="render ground-truth maps for a scene file")
    g.add_argument("--scene", required=True)
    g.add_argument("--centroid-pixels", type=int, default=300)
    g.add_argument("--default-radius", type=float, default=0.05)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gt)

    g = sub.add_parser("predict", help="produce prediction maps from ground truth")
    g.add_argument("--gt", required=True)
    g.add_argument("--source", choices=("oracle", "noisy"), default="oracle")
    g.add_argument("--noise-sigma", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_predict)

    g = sub.add_parser("fit", help="fit prediction maps by descending the training loss")
    g.add_argument("--gt", required=True)
    g.add_argument("--steps", type=int, default=500)
    g.add_argument("--step-size", type=float, default=0.01)
    g.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    g.add_argument("--noise-sigma", type=float, default=0.02, help="initial trajectory noise (m)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-plot", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_fit)

    g = sub.add_parser("segment", help="motion segmentation of prediction maps")
    g.add_argument("--pred", required=True)
    g.add_argument("--refine", action="store_true", help="average motions per segment and recompute flow")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_segment)

    g = sub.add_parser("eval", help="score predictions against ground truth")
    g.add_argument("--pred", required=True, nargs="+", action="extend")
    g.add_argument("--gt", required=True, nargs="+", action="extend")
    g.add_argument("--seg", action="store_true", help="also score segmentation labels")
    g.add_argument("--no-plot", action="store_true")
    g.add_argument("--out", help="directory for CSV reports and figures (default: CSV on stdout)")
    g.set_defaults(fn=cmd_eval)

    g = sub.add_parser("viz", help="write PPM images of an archive")
    g.add_argument("--maps", required=True)
    g.add_argument("--vmax", type=float, default=0.1, help="flow magnitude mapped to full intensity (m)")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except (CliError, ArchiveError, ConfigError, ValueError, OSError) as exc:
        print(f"rigidflow {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

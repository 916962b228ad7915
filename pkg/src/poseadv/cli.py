"""Command-line entry points.

Verbs:
    attack                 run a configured attack sweep
    evaluate               RPE between two pose files
    report                 tabulate a records.csv
    gen-toy-weights        write seeded toy model weights
    gen-synthetic-sequence render a sequence with known ground-truth motion
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

from .config import load_config
from .errors import PoseAdvError
from .evaluation import align_origin, parse_kitti_poses, rpe
from .models import (calibrated_pose_weights, random_depth_weights,
                     random_pose_weights, save_weights)
from .runner import CSV_COLUMNS, run_experiment
from .sequences import generate_synthetic_sequence


def _cmd_attack(args) -> int:
    cfg = load_config(args.config)
    records = run_experiment(cfg)
    failed = sum(1 for r in records if r.status != "ok")
    for r in records:
        print(f"{r.kind} eps={r.epsilon:g}: {r.status}"
              + (f" ({r.error})" if r.error else ""))
    print(f"{len(records) - failed}/{len(records)} runs ok; "
          f"artifacts in {cfg.resolved_output_dir()}")
    if failed == len(records):
        return 2
    return 1 if failed else 0


def _cmd_evaluate(args) -> int:
    est = parse_kitti_poses(args.est)
    ref = parse_kitti_poses(args.ref)
    if args.align:
        est = align_origin(est, ref)
    report = rpe(est, ref, delta=args.delta)
    print(json.dumps({
        "rpe_m": report.rpe_translation,
        "rpe_deg": report.rpe_rotation_deg,
        "delta": report.delta,
        "frames": len(est),
    }, indent=2, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    with open(args.results, "r", newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        print("no records")
        return 0
    cols = [c for c in CSV_COLUMNS if any(r.get(c) for r in rows)]
    widths = {c: max(len(c), *(len(_fmt(r.get(c, ""))) for r in rows)) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for r in rows:
        print("  ".join(_fmt(r.get(c, "")).ljust(widths[c]) for c in cols))
    return 0


def _fmt(v: str) -> str:
    try:
        return f"{float(v):.4g}"
    except (TypeError, ValueError):
        return v or "-"


def _cmd_gen_toy_weights(args) -> int:
    if args.kind == "pose":
        if args.nominal is not None:
            vec = [float(x) for x in args.nominal.split(",")]
            if len(vec) != 6:
                raise SystemExit("--nominal needs 6 comma-separated values")
            w = calibrated_pose_weights(args.seed, vec)
        else:
            w = random_pose_weights(args.seed)
    else:
        w = random_depth_weights(args.seed)
    save_weights(w, args.out)
    print(f"wrote {args.kind} weights (seed {args.seed}, "
          f"{w.params.size} parameters) to {args.out}")
    return 0


def _cmd_gen_synthetic_sequence(args) -> int:
    traj = generate_synthetic_sequence(
        args.out, n_frames=args.frames, height=args.height, width=args.width,
        seed=args.seed, fmt=args.format, forward=args.forward, turn=args.turn,
        turn_axis=args.turn_axis,
    )
    print(f"wrote {len(traj)} frames with ground-truth poses and depth to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="poseadv",
        description="Adversarial perturbations against differentiable "
                    "pose and depth estimators, with trajectory-level evaluation.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("attack", help="run a configured attack sweep")
    a.add_argument("--config", required=True, help="JSON experiment config")
    a.set_defaults(fn=_cmd_attack)

    e = sub.add_parser("evaluate", help="RPE between two pose files")
    e.add_argument("--est", required=True, help="estimated pose file")
    e.add_argument("--ref", required=True, help="reference pose file")
    e.add_argument("--delta", type=int, default=1, help="RPE frame gap")
    e.add_argument("--align", action="store_true",
                   help="align the estimate's origin to the reference first")
    e.set_defaults(fn=_cmd_evaluate)

    r = sub.add_parser("report", help="tabulate a records.csv")
    r.add_argument("--results", required=True, help="records.csv from a run")
    r.set_defaults(fn=_cmd_report)

    g = sub.add_parser("gen-toy-weights", help="write seeded toy model weights")
    g.add_argument("--kind", choices=("pose", "depth"), required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--nominal", default=None,
                   help="pose only: 6 comma-separated values the clean "
                        "predictions should center on")
    g.set_defaults(fn=_cmd_gen_toy_weights)

    s = sub.add_parser("gen-synthetic-sequence",
                       help="render frames with known ground-truth motion")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=6)
    s.add_argument("--height", type=int, default=32)
    s.add_argument("--width", type=int, default=40)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("ppm", "imgt"), default="ppm")
    s.add_argument("--forward", type=float, default=0.25,
                   help="per-frame forward motion in scene units")
    s.add_argument("--turn", type=float, default=0.01,
                   help="per-frame turn in radians")
    s.add_argument("--turn-axis", choices=("y", "z"), default="y",
                   help="camera axis the turn rotates about")
    s.set_defaults(fn=_cmd_gen_synthetic_sequence)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PoseAdvError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

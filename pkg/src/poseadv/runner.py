"""Experiment runner: sweep attack kinds over an epsilon grid and persist
records, trajectories, and plot-ready exports.

Everything written under the output directory is a pure function of
(config, seed); wall-clock timings go to run.log only, so repeated runs
produce byte-identical CSV, JSON, and trajectory files.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attack import (
    DEPTH_KINDS,
    POSE_KINDS,
    AttackBudget,
    AttackSpec,
    attack_sequence,
    cross_task_depth_inputs,
)
from .config import ExperimentConfig, config_to_dict
from .errors import PoseAdvError
from .evaluation import (
    Trajectory,
    align_origin,
    depth_rmse,
    integrate_trajectory,
    parse_kitti_poses,
    ratio_report,
    rpe,
    write_kitti_poses,
)
from .geometry import euler_to_rotation
from .losses import Intrinsics
from .models import (
    load_weights,
    predict_depth,
    predict_pose,
    random_depth_weights,
    random_pose_weights,
    toy_depth_model,
    toy_pose_model,
)
from .sequences import DEPTH_DIRNAME, POSES_FILENAME, load_depth_maps, load_sequence

SCHEMA_VERSION = 1

CSV_COLUMNS = (
    "kind", "epsilon", "sequence_id", "rpe_m", "rpe_deg",
    "rpe_m_clean", "rpe_deg_clean", "ratio_rpe_m", "ratio_rpe_deg",
    "rmse_adv", "rmse_clean", "ratio_rmse", "status", "error",
)


@dataclass
class ResultRecord:
    """One attack evaluation; wall time is logged but never serialized."""

    kind: str
    epsilon: float
    sequence_id: str
    rpe_m: float | None = None
    rpe_deg: float | None = None
    rpe_m_clean: float | None = None
    rpe_deg_clean: float | None = None
    ratio_rpe_m: float | None = None
    ratio_rpe_deg: float | None = None
    rmse_adv: float | None = None
    rmse_clean: float | None = None
    ratio_rmse: float | None = None
    status: str = "ok"
    error: str = ""
    wall_time_s: float = 0.0

    def row(self) -> list[str]:
        out = []
        for col in CSV_COLUMNS:
            v = getattr(self, col)
            out.append("" if v is None else (repr(v) if isinstance(v, float) else str(v)))
        return out

    def to_dict(self) -> dict:
        return {col: getattr(self, col) for col in CSV_COLUMNS}


def emit_plot_data(traj: Trajectory, path) -> None:
    """Two-column ground-plane CSV (x, z), one row per frame."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "z"])
        for p in traj:
            writer.writerow([repr(float(p.t[0])), repr(float(p.t[2]))])


def _predict_trajectory(pose_model, frames) -> Trajectory:
    rels = [
        euler_to_rotation(predict_pose(pose_model, frames[i], frames[i + 1]).pose)
        for i in range(len(frames) - 1)
    ]
    return integrate_trajectory(rels)


def _pair_frames_trajectory(pose_model, pairs) -> Trajectory:
    rels = [
        euler_to_rotation(predict_pose(pose_model, p.adv_a, p.adv_b).pose)
        for p in pairs
    ]
    return integrate_trajectory(rels)


class _Runtime:
    """Shared per-run state: frames, models, reference data, clean baselines."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.frames = load_sequence(cfg.sequence)
        h, w, _ = self.frames[0].shape
        self.sequence_id = Path(cfg.sequence).name
        self.intrinsics = cfg.intrinsics or Intrinsics(
            fx=float(max(h, w)), fy=float(max(h, w)),
            cx=(w - 1) / 2.0, cy=(h - 1) / 2.0,
        )
        pose_w = (load_weights(cfg.pose_weights) if cfg.pose_weights
                  else random_pose_weights(cfg.seed))
        depth_w = (load_weights(cfg.depth_weights) if cfg.depth_weights
                   else random_depth_weights(cfg.seed + 1))
        self.pose_model = toy_pose_model(pose_w)
        self.depth_model = toy_depth_model(depth_w)

        gt_path = cfg.groundtruth or str(Path(cfg.sequence) / POSES_FILENAME)
        self.reference = (parse_kitti_poses(gt_path)
                          if Path(gt_path).is_file() else None)
        if self.reference is not None and len(self.reference) != len(self.frames):
            raise PoseAdvError(
                f"ground truth has {len(self.reference)} poses for "
                f"{len(self.frames)} frames"
            )

        gtd_path = cfg.groundtruth_depth or str(Path(cfg.sequence) / DEPTH_DIRNAME)
        self.gt_depths = (load_depth_maps(gtd_path)
                          if Path(gtd_path).is_dir() else None)
        if self.gt_depths is not None and len(self.gt_depths) != len(self.frames):
            raise PoseAdvError(
                f"found {len(self.gt_depths)} depth maps for {len(self.frames)} frames"
            )

        self.traj_clean = _predict_trajectory(self.pose_model, self.frames)
        self._clean_depths = None

    def clean_depths(self) -> list[np.ndarray]:
        if self._clean_depths is None:
            self._clean_depths = [
                predict_depth(self.depth_model, f).depth for f in self.frames
            ]
        return self._clean_depths

    def rpe_reference(self) -> Trajectory:
        return self.reference if self.reference is not None else self.traj_clean

    def clean_rpe(self):
        return rpe(align_origin(self.traj_clean, self.rpe_reference()),
                   self.rpe_reference(), self.cfg.rpe_delta)


def _evaluate_pose_side(rt: _Runtime, traj_adv: Trajectory, rec: ResultRecord):
    ref = rt.rpe_reference()
    adv = rpe(align_origin(traj_adv, ref), ref, rt.cfg.rpe_delta)
    clean = rt.clean_rpe()
    rec.rpe_m, rec.rpe_deg = adv.rpe_translation, adv.rpe_rotation_deg
    rec.rpe_m_clean = clean.rpe_translation
    rec.rpe_deg_clean = clean.rpe_rotation_deg
    if rt.reference is not None and clean.rpe_translation > 0.0:
        rec.ratio_rpe_m = ratio_report(
            "rpe_m", adv.rpe_translation, clean.rpe_translation).ratio
    if rt.reference is not None and clean.rpe_rotation_deg > 0.0:
        rec.ratio_rpe_deg = ratio_report(
            "rpe_deg", adv.rpe_rotation_deg, clean.rpe_rotation_deg).ratio


def _evaluate_depth_side(rt: _Runtime, adv_images, rec: ResultRecord):
    adv_depths = [predict_depth(rt.depth_model, im).depth for im in adv_images]
    if rt.gt_depths is not None:
        rec.rmse_adv = float(np.mean(
            [depth_rmse(d, g) for d, g in zip(adv_depths, rt.gt_depths)]))
        rec.rmse_clean = float(np.mean(
            [depth_rmse(d, g) for d, g in zip(rt.clean_depths(), rt.gt_depths)]))
        if rec.rmse_clean > 0.0:
            rec.ratio_rmse = ratio_report("rmse", rec.rmse_adv, rec.rmse_clean).ratio
    else:
        # no reference depth: report raw drift from the clean predictions
        rec.rmse_adv = float(np.mean(
            [depth_rmse(d, c) for d, c in zip(adv_depths, rt.clean_depths())]))


def _run_one(rt: _Runtime, kind: str, epsilon: float, out: Path,
             log) -> ResultRecord:
    cfg = rt.cfg
    rec = ResultRecord(kind=kind, epsilon=epsilon, sequence_id=rt.sequence_id)
    started = time.perf_counter()
    try:
        spec = AttackSpec(kind, AttackBudget(epsilon, alpha=cfg.alpha),
                          cfg.direction)
        pairs = attack_sequence(
            spec, rt.frames, rt.pose_model, rt.depth_model,
            cfg.loss_weights, rt.intrinsics, workers=cfg.workers,
        )
        if kind in DEPTH_KINDS:
            # adversarial frames re-paired in sequence order for the pose side
            images = cross_task_depth_inputs(pairs)
            rels = [
                euler_to_rotation(
                    predict_pose(rt.pose_model, images[i], images[i + 1]).pose)
                for i in range(len(images) - 1)
            ]
            traj_adv = integrate_trajectory(rels)
        else:
            traj_adv = _pair_frames_trajectory(rt.pose_model, pairs)
        _evaluate_pose_side(rt, traj_adv, rec)

        if kind in POSE_KINDS or kind in DEPTH_KINDS:
            _evaluate_depth_side(rt, cross_task_depth_inputs(pairs), rec)

        tag = f"{kind}_eps{epsilon:g}"
        write_kitti_poses(align_origin(traj_adv, rt.rpe_reference()),
                          out / "trajectories" / f"{tag}_adv.txt")
        emit_plot_data(align_origin(traj_adv, rt.rpe_reference()),
                       out / "plots" / f"{tag}_adv.csv")
    except PoseAdvError as e:
        rec.status = "error"
        rec.error = f"{type(e).__name__}: {e}"
    rec.wall_time_s = time.perf_counter() - started
    log.write(f"{kind} eps={epsilon:g}: status={rec.status} "
              f"wall={rec.wall_time_s:.3f}s\n")
    return rec


def _baseline_record(rt: _Runtime) -> ResultRecord:
    rec = ResultRecord(kind="clean", epsilon=0.0, sequence_id=rt.sequence_id)
    started = time.perf_counter()
    clean = rt.clean_rpe()
    rec.rpe_m = rec.rpe_m_clean = clean.rpe_translation
    rec.rpe_deg = rec.rpe_deg_clean = clean.rpe_rotation_deg
    if rt.reference is not None:
        if clean.rpe_translation > 0.0:
            rec.ratio_rpe_m = ratio_report(
                "rpe_m", clean.rpe_translation, clean.rpe_translation).ratio
        if clean.rpe_rotation_deg > 0.0:
            rec.ratio_rpe_deg = ratio_report(
                "rpe_deg", clean.rpe_rotation_deg, clean.rpe_rotation_deg).ratio
    rec.wall_time_s = time.perf_counter() - started
    return rec


def run_experiment(cfg: ExperimentConfig) -> list[ResultRecord]:
    """Execute the configured sweep and write all artifacts.

    Per-run failures are recorded and do not abort the sweep.  Raises only
    on setup errors (unreadable sequence, malformed weights, bad reference).
    """
    out = Path(cfg.resolved_output_dir())
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)

    rt = _Runtime(cfg)
    ref = rt.rpe_reference()
    write_kitti_poses(align_origin(rt.traj_clean, ref),
                      out / "trajectories" / "clean.txt")
    emit_plot_data(align_origin(rt.traj_clean, ref), out / "plots" / "clean.csv")
    if rt.reference is not None:
        write_kitti_poses(rt.reference, out / "trajectories" / "groundtruth.txt")
        emit_plot_data(rt.reference, out / "plots" / "groundtruth.csv")

    records: list[ResultRecord] = []
    with open(out / "run.log", "w") as log:
        log.write(f"sequence={cfg.sequence} seed={cfg.seed}\n")
        if not cfg.epsilons:
            records.append(_baseline_record(rt))
            log.write("clean-only baseline run\n")
        else:
            for kind in cfg.attacks:
                for eps in cfg.epsilons:
                    records.append(_run_one(rt, kind, eps, out, log))

    records.sort(key=lambda r: (r.kind, r.epsilon))
    with open(out / "records.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.row())
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": config_to_dict(cfg),
        "records": [rec.to_dict() for rec in records],
    }
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    return records

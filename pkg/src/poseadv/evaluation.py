"""Trajectory integration, origin alignment, RPE metrics, and pose file IO."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError
from .geometry import (
    TransformSE3,
    compose,
    inverse,
    nearest_rotation,
    relative_transform,
    rotation_error,
    translation_error,
)

_REORTHO_TOL = 1e-4


class Trajectory:
    """Ordered camera-to-world poses, one per frame."""

    __slots__ = ("poses",)

    def __init__(self, poses):
        poses = tuple(poses)
        if not poses:
            raise ContractError("a trajectory needs at least one pose")
        self.poses = poses

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    def positions(self) -> np.ndarray:
        return np.stack([p.t for p in self.poses])

    def relatives(self) -> list[TransformSE3]:
        """Consecutive frame-to-frame transforms G_i^-1 G_{i+1}."""
        return [
            relative_transform(self.poses[i], self.poses[i + 1])
            for i in range(len(self.poses) - 1)
        ]


@dataclass(frozen=True)
class RpeReport:
    """Mean relative pose errors plus the per-index series."""

    rpe_translation: float
    rpe_rotation_deg: float
    translation_series: tuple[float, ...]
    rotation_series_deg: tuple[float, ...]
    delta: int


@dataclass(frozen=True)
class RatioReport:
    metric: str
    adversarial: float
    clean: float
    ratio: float


def integrate_trajectory(relative_poses) -> Trajectory:
    """Chain relative transforms from the identity: G_{i+1} = G_i T_i."""
    rel = list(relative_poses)
    if not rel:
        raise ContractError("need at least one relative pose")
    poses = [TransformSE3.identity()]
    for t in rel:
        poses.append(compose(poses[-1], t))
    return Trajectory(poses)


def align_origin(t: Trajectory, reference: Trajectory) -> Trajectory:
    """Left-multiply so the first poses coincide; inter-pose shape is kept."""
    g = compose(reference[0], inverse(t[0]))
    return Trajectory([compose(g, p) for p in t])


def rpe(estimated: Trajectory, reference: Trajectory, delta: int = 1) -> RpeReport:
    """Relative pose error over frame gaps of `delta`.

    Per index i the error motion is
    (Q_i^-1 Q_{i+d})^-1 (P_i^-1 P_{i+d}) with Q the reference and P the
    estimate; translation norms average in scene units, rotation angles in
    degrees.
    """
    if len(estimated) != len(reference):
        raise ContractError(
            f"trajectory lengths differ: {len(estimated)} vs {len(reference)}"
        )
    if delta < 1 or len(estimated) < delta + 1:
        raise ContractError(
            f"delta {delta} needs at least {delta + 1} frames, have {len(estimated)}"
        )
    trans, rot = [], []
    for i in range(len(estimated) - delta):
        dq = relative_transform(reference[i], reference[i + delta])
        dp = relative_transform(estimated[i], estimated[i + delta])
        err = relative_transform(dq, dp)
        trans.append(translation_error(err))
        rot.append(math.degrees(rotation_error(err)))
    return RpeReport(
        float(np.mean(trans)), float(np.mean(rot)), tuple(trans), tuple(rot), delta
    )


def depth_rmse(pred: np.ndarray, ref: np.ndarray) -> float:
    """Root mean squared difference of two aligned depth maps."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ContractError(f"depth shapes differ: {pred.shape} vs {ref.shape}")
    return float(np.sqrt(np.mean((pred - ref) ** 2)))


def ratio_report(metric: str, adversarial: float, clean: float) -> RatioReport:
    """Adversarial-to-clean ratio of a metric; the clean value must be > 0."""
    if not (math.isfinite(clean) and clean > 0.0):
        raise ContractError(f"clean {metric} must be positive, got {clean}")
    return RatioReport(metric, float(adversarial), float(clean),
                       float(adversarial) / float(clean))


def parse_kitti_poses(path) -> Trajectory:
    """Read a text pose file: 12 reals per line, row-major 3x4 [R|t].

    Rotations within 1e-4 of orthonormal are projected back onto SO(3);
    anything worse is rejected with the offending line number.
    """
    poses = []
    try:
        f = open(path, "r")
    except OSError as e:
        raise FormatError(f"cannot read pose file {path}: {e}") from None
    with f:
        for lineno, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 12:
                raise FormatError(
                    f"{path}: line {lineno}: expected 12 values, got {len(tokens)}"
                )
            try:
                vals = np.array([float(t) for t in tokens], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: unparsable number") from None
            if not np.all(np.isfinite(vals)):
                raise FormatError(f"{path}: line {lineno}: non-finite value")
            m = vals.reshape(3, 4)
            r = m[:, :3]
            dev = np.abs(r.T @ r - np.eye(3)).max()
            if dev > _REORTHO_TOL or np.linalg.det(r) < 0.0:
                raise FormatError(
                    f"{path}: line {lineno}: invalid rotation (max deviation {dev:.3e})"
                )
            if dev > 1e-9:
                r = nearest_rotation(r)
            poses.append(TransformSE3(r, m[:, 3]))
    if not poses:
        raise FormatError(f"{path}: no poses found")
    return Trajectory(poses)


def write_kitti_poses(t: Trajectory, path) -> None:
    with open(path, "w") as f:
        for p in t:
            row = np.hstack([p.r, p.t.reshape(3, 1)]).reshape(-1)
            f.write(" ".join(f"{v:.12e}" for v in row) + "\n")

"""SE(3) core: Euler poses, rigid transforms, and the error functionals.

Convention: rotations are assembled intrinsically as R = Rz(yaw) @ Ry(pitch)
@ Rx(roll).  Angles live in [-pi, pi).  Transforms map points of the second
camera's frame into the first camera's frame, so chaining them integrates a
trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import GimbalLockError, InvalidPoseError

_ORTHO_TOL = 1e-9
_GIMBAL_TOL = 1e-6


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians into [-pi, pi)."""
    w = math.remainder(a, 2.0 * math.pi)
    if w >= math.pi:
        w -= 2.0 * math.pi
    elif w < -math.pi:
        w += 2.0 * math.pi
    return w


@dataclass(frozen=True)
class EulerPose:
    """6-DoF relative pose: translation plus roll/pitch/yaw in radians."""

    tx: float
    ty: float
    tz: float
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        vals = (self.tx, self.ty, self.tz, self.roll, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidPoseError(f"non-finite pose fields: {vals}")
        for name in ("roll", "pitch", "yaw"):
            v = getattr(self, name)
            if not (-math.pi <= v < math.pi):
                raise InvalidPoseError(f"{name}={v} outside [-pi, pi)")

    @classmethod
    def from_vector(cls, v) -> "EulerPose":
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(
            float(v[0]), float(v[1]), float(v[2]),
            wrap_angle(float(v[3])), wrap_angle(float(v[4])), wrap_angle(float(v[5])),
        )

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.tx, self.ty, self.tz, self.roll, self.pitch, self.yaw],
            dtype=np.float64,
        )

    def with_yaw(self, yaw: float) -> "EulerPose":
        return replace(self, yaw=wrap_angle(yaw))

    def with_tz(self, tz: float) -> "EulerPose":
        return replace(self, tz=float(tz))


class TransformSE3:
    """Rigid transform holding a 3x3 rotation and a 3-vector translation.

    Immutable: the backing arrays are marked read-only at construction.
    """

    __slots__ = ("r", "t")

    def __init__(self, r, t):
        r = np.array(r, dtype=np.float64)
        t = np.array(t, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise InvalidPoseError(f"rotation must be 3x3, got {r.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidPoseError("non-finite transform entries")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise InvalidPoseError(f"rotation not orthonormal (max dev {err:.3e})")
        det = np.linalg.det(r)
        if abs(det - 1.0) > _ORTHO_TOL:
            raise InvalidPoseError(f"rotation determinant {det} != 1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    def __setattr__(self, name, value):
        raise AttributeError("TransformSE3 is immutable")

    @classmethod
    def identity(cls) -> "TransformSE3":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "TransformSE3":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidPoseError(f"homogeneous matrix must be 4x4, got {m.shape}")
        if np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > _ORTHO_TOL:
            raise InvalidPoseError("bottom row is not (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.r
        m[:3, 3] = self.t
        return m

    def apply(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64).reshape(3)
        return self.r @ p + self.t

    def allclose(self, other: "TransformSE3", tol: float = 1e-9) -> bool:
        return (
            np.abs(self.r - other.r).max() <= tol
            and np.abs(self.t - other.t).max() <= tol
        )

    def __repr__(self):
        return f"TransformSE3(r={self.r.tolist()}, t={self.t.tolist()})"


def _rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(p: EulerPose) -> TransformSE3:
    """Build the rigid transform for a pose, Rz(yaw) Ry(pitch) Rx(roll)."""
    r = _rot_z(p.yaw) @ _rot_y(p.pitch) @ _rot_x(p.roll)
    return TransformSE3(r, (p.tx, p.ty, p.tz))


def rotation_to_euler(t: TransformSE3) -> EulerPose:
    """Recover the Euler pose from a transform.

    Raises GimbalLockError inside the |pitch| ~ pi/2 region where roll and
    yaw are no longer separable.
    """
    r = t.r
    if abs(r[2, 0]) > 1.0 - _GIMBAL_TOL:
        raise GimbalLockError(f"|r[2,0]|={abs(r[2, 0])} too close to 1")
    pitch = -math.asin(max(-1.0, min(1.0, r[2, 0])))
    yaw = math.atan2(r[1, 0], r[0, 0])
    roll = math.atan2(r[2, 1], r[2, 2])
    return EulerPose(
        float(t.t[0]), float(t.t[1]), float(t.t[2]),
        wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw),
    )


def compose(a: TransformSE3, b: TransformSE3) -> TransformSE3:
    """Homogeneous product a . b."""
    return TransformSE3(a.r @ b.r, a.r @ b.t + a.t)


def inverse(t: TransformSE3) -> TransformSE3:
    """Rigid inverse: (R, t) -> (R^T, -R^T t)."""
    rt = t.r.T
    return TransformSE3(rt, -(rt @ t.t))


def relative_transform(t: TransformSE3, t_tgt: TransformSE3) -> TransformSE3:
    """Residual motion T^-1 . T_tgt between a transform and a target."""
    return compose(inverse(t), t_tgt)


def rotation_error(t_rel: TransformSE3) -> float:
    """Rotation angle of a residual transform, arccos((trace - 1) / 2).

    The argument is clamped to [-1, 1]; trace drift within 1e-14 of the
    endpoints snaps onto them, so a transform compared against itself reads
    exactly zero.  Result lies in [0, pi].
    """
    c = (np.trace(t_rel.r) - 1.0) / 2.0
    if c > 1.0 - 1e-14:
        return 0.0
    if c < -1.0 + 1e-14:
        return math.pi
    return math.acos(c)


def translation_error(t_rel: TransformSE3) -> float:
    """Euclidean norm of the residual translation."""
    return float(np.linalg.norm(t_rel.t))


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Project a near-rotation 3x3 matrix onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=np.float64))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r

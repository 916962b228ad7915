"""Scalar objectives: the self-supervision loss stack behind the untargeted
attack, and the targeted residual-transform losses.

Everything here is built on the autodiff tape, so each loss is
differentiable down to the input pixels.  Poses enter either as constant
targets (rigid transforms) or as differentiable 6-vectors straight from a
pose model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, EmptyOverlapError, InputError, ShapeError
from .geometry import EulerPose, TransformSE3

_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2
_MIN_WARP_DEPTH = 1e-6
_NORM_EPS = 1e-12


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera: focal lengths and principal point, in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"non-finite intrinsics: {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise InputError(f"focal lengths must be positive: fx={self.fx}, fy={self.fy}")

    def check_inside(self, h: int, w: int) -> None:
        if not (0.0 <= self.cx <= w - 1 and 0.0 <= self.cy <= h - 1):
            raise InputError(
                f"principal point ({self.cx}, {self.cy}) outside {h}x{w} image"
            )


@dataclass(frozen=True)
class LossWeights:
    """Weights of the training-loss terms plus the SSIM mixing factor."""

    w1: float = 1.0
    w2: float = 0.1
    w3: float = 0.5
    lambda_p: float = 0.85

    def __post_init__(self):
        for name in ("w1", "w2", "w3"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise InputError(f"{name} must be finite and >= 0, got {v}")
        if not (0.0 <= self.lambda_p <= 1.0):
            raise InputError(f"lambda_p must be in [0, 1], got {self.lambda_p}")


# --- differentiable pose plumbing -----------------------------------------

_T_IDX = np.array([0, 3, 6, 1, 4, 7, 2, 5, 8])  # 3x3 transpose under take


def _transpose3(m: Tensor) -> Tensor:
    return ad.reshape(ad.take(m, _T_IDX), (3, 3))


def rotation_matrix_tensor(roll: Tensor, pitch: Tensor, yaw: Tensor) -> Tensor:
    """Rz(yaw) Ry(pitch) Rx(roll) assembled from scalar angle tensors."""
    tape = roll.tape
    zero = tape.tensor(np.zeros(1))
    one = tape.tensor(np.ones(1))

    def mat(entries):
        return ad.reshape(ad.concat(list(entries)), (3, 3))

    cr, sr = ad.cos(roll), ad.sin(roll)
    cp, sp = ad.cos(pitch), ad.sin(pitch)
    cy, sy = ad.cos(yaw), ad.sin(yaw)
    rx = mat([one, zero, zero, zero, cr, ad.neg(sr), zero, sr, cr])
    ry = mat([cp, zero, sp, zero, one, zero, ad.neg(sp), zero, cp])
    rz = mat([cy, ad.neg(sy), zero, sy, cy, zero, zero, zero, one])
    return ad.matmul(ad.matmul(rz, ry), rx)


def pose_matrices(pose6: Tensor) -> tuple[Tensor, Tensor]:
    """Split a differentiable 6-vector into rotation and translation."""
    if pose6.shape != (6,):
        raise ShapeError(f"pose vector must have shape (6,), got {pose6.shape}")
    t = ad.take(pose6, np.array([0, 1, 2]))
    roll = ad.take(pose6, np.array([3]))
    pitch = ad.take(pose6, np.array([4]))
    yaw = ad.take(pose6, np.array([5]))
    return rotation_matrix_tensor(roll, pitch, yaw), t


def pose_matrices_inverse(pose6: Tensor) -> tuple[Tensor, Tensor]:
    """(R, t) of the inverse transform: (R^T, -R^T t)."""
    r, t = pose_matrices(pose6)
    rt = _transpose3(r)
    t_inv = ad.neg(ad.reshape(ad.matmul(rt, ad.reshape(t, (3, 1))), (3,)))
    return rt, t_inv


def _as_pose_tensors(tape, pose) -> tuple[Tensor, Tensor]:
    if isinstance(pose, Tensor):
        return pose_matrices(pose)
    if isinstance(pose, EulerPose):
        return pose_matrices(tape.tensor(pose.as_vector()))
    if isinstance(pose, tuple) and len(pose) == 2:
        return pose
    raise ContractError(f"unsupported pose argument {type(pose)!r}")


# --- view synthesis ---------------------------------------------------------


@lru_cache(maxsize=32)
def _pixel_rays(h: int, w: int, fx: float, fy: float, cx: float, cy: float):
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    kx = (us - cx) / fx
    ky = (vs - cy) / fy
    kx.setflags(write=False)
    ky.setflags(write=False)
    return kx, ky


def project_to_source(depth_a: Tensor, rot: Tensor, trans: Tensor,
                      k: Intrinsics):
    """Project every target pixel into the source view.

    depth_a is the (H, W) target depth; (rot, trans) map target-camera
    coordinates into source-camera coordinates.  Returns the source-pixel
    coordinate maps, the transformed depth, and the validity mask (in-bounds
    and in front of the source camera).
    """
    if len(depth_a.shape) != 2:
        raise ShapeError(f"depth must be (H, W), got {depth_a.shape}")
    h, w = depth_a.shape
    k.check_inside(h, w)
    kx, ky = _pixel_rays(h, w, k.fx, k.fy, k.cx, k.cy)
    x = ad.mul(depth_a, kx)
    y = ad.mul(depth_a, ky)
    z = depth_a

    r = [ad.take(rot, np.array([i])) for i in range(9)]
    t = [ad.take(trans, np.array([i])) for i in range(3)]
    xb = ad.add(ad.add(ad.mul(r[0], x), ad.mul(r[1], y)), ad.add(ad.mul(r[2], z), t[0]))
    yb = ad.add(ad.add(ad.mul(r[3], x), ad.mul(r[4], y)), ad.add(ad.mul(r[5], z), t[1]))
    zb = ad.add(ad.add(ad.mul(r[6], x), ad.mul(r[7], y)), ad.add(ad.mul(r[8], z), t[2]))

    z_safe = ad.clamp(zb, lo=_MIN_WARP_DEPTH)
    xs = ad.add(ad.mul(ad.div(xb, z_safe), k.fx), k.cx)
    ys = ad.add(ad.mul(ad.div(yb, z_safe), k.fy), k.cy)

    valid = (
        (zb.values > _MIN_WARP_DEPTH)
        & (xs.values >= 0.0) & (xs.values <= w - 1.0)
        & (ys.values >= 0.0) & (ys.values <= h - 1.0)
    )
    return xs, ys, zb, valid


def synthesize_view(image_b: Tensor, depth_a: Tensor, pose_ab, k: Intrinsics):
    """Inverse-warp the source image into the target frame.

    pose_ab maps target-camera points into source-camera coordinates; it may
    be an EulerPose, a differentiable 6-vector, or a (rot, trans) tensor
    pair.  Returns the synthesized image and the validity mask.  Raises
    EmptyOverlapError when no pixel projects inside the source image.
    """
    if len(image_b.shape) not in (2, 3):
        raise ShapeError(f"source image must be (H,W) or (H,W,C), got {image_b.shape}")
    if image_b.shape[:2] != depth_a.shape:
        raise ShapeError(
            f"image {image_b.shape} and depth {depth_a.shape} disagree"
        )
    rot, trans = _as_pose_tensors(image_b.tape, pose_ab)
    xs, ys, _, valid = project_to_source(depth_a, rot, trans, k)
    if not valid.any():
        raise EmptyOverlapError("no target pixel projects inside the source image")
    h, w = depth_a.shape
    flat_x = ad.reshape(xs, (h * w,))
    flat_y = ad.reshape(ys, (h * w,))
    sampled = ad.bilinear_sample(image_b, flat_x, flat_y)
    out_shape = (h, w) if len(image_b.shape) == 2 else (h, w, image_b.shape[2])
    return ad.reshape(sampled, out_shape), valid


# --- photometric loss -------------------------------------------------------


@lru_cache(maxsize=32)
def _box3_indices(h: int, w: int):
    """Flat indices of every 3x3 window fully inside an (h, w) map."""
    oy, ox = np.meshgrid(np.arange(h - 2), np.arange(w - 2), indexing="ij")
    dy, dx = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
    idx = ((oy.reshape(-1, 1) + dy.reshape(1, -1)) * w
           + ox.reshape(-1, 1) + dx.reshape(1, -1))
    idx.setflags(write=False)
    return idx


def _box3_mean(t: Tensor, h: int, w: int) -> Tensor:
    patches = ad.take(t, _box3_indices(h, w))
    return ad.matmul(patches, np.full((9, 1), 1.0 / 9.0))


def _ssim_map(x: Tensor, y: Tensor, h: int, w: int) -> Tensor:
    """Single-channel SSIM over 3x3 mean windows; shape ((h-2)*(w-2), 1)."""
    mx = _box3_mean(x, h, w)
    my = _box3_mean(y, h, w)
    mxx = _box3_mean(ad.mul(x, x), h, w)
    myy = _box3_mean(ad.mul(y, y), h, w)
    mxy = _box3_mean(ad.mul(x, y), h, w)
    vx = ad.sub(mxx, ad.mul(mx, mx))
    vy = ad.sub(myy, ad.mul(my, my))
    cxy = ad.sub(mxy, ad.mul(mx, my))
    num = ad.mul(ad.add(ad.mul(ad.mul(mx, my), 2.0), _SSIM_C1),
                 ad.add(ad.mul(cxy, 2.0), _SSIM_C2))
    den = ad.mul(ad.add(ad.add(ad.mul(mx, mx), ad.mul(my, my)), _SSIM_C1),
                 ad.add(ad.add(vx, vy), _SSIM_C2))
    return ad.div(num, den)


def _channel_views(img: Tensor):
    """Split (H, W, C) into per-channel (H, W) tensors; (H, W) passes through."""
    if len(img.shape) == 2:
        return [img]
    h, w, c = img.shape
    chans = []
    for ci in range(c):
        idx = np.arange(h * w) * c + ci
        chans.append(ad.reshape(ad.take(img, idx), (h, w)))
    return chans


def photometric_loss(image_a: Tensor, image_synth: Tensor, valid_mask,
                     lam: float) -> Tensor:
    """lam * L1 + (1 - lam) * (1 - SSIM), averaged over valid pixels.

    SSIM uses 3x3 mean windows, so the average runs over the interior where
    the windows are defined; the validity mask is cropped to match.
    """
    if image_a.shape != image_synth.shape:
        raise ShapeError(
            f"image shapes differ: {image_a.shape} vs {image_synth.shape}"
        )
    h, w = image_a.shape[:2]
    if h < 3 or w < 3:
        raise ShapeError("photometric loss needs at least a 3x3 image")
    mask = np.asarray(valid_mask, dtype=np.float64).reshape(h, w)
    inner = mask[1:h - 1, 1:w - 1].reshape(-1, 1)
    count = inner.sum()
    if count == 0:
        raise ContractError("photometric loss over an empty validity mask")

    ca = _channel_views(image_a)
    cs = _channel_views(image_synth)
    n = len(ca)
    inner_idx = (_box3_indices(h, w)[:, 4]).copy()  # centers of the windows

    l1_acc = None
    ssim_acc = None
    for xa, xs in zip(ca, cs):
        diff = ad.abs_smooth(ad.sub(xa, xs))
        l1_c = ad.reshape(ad.take(diff, inner_idx), (-1, 1))
        l1_acc = l1_c if l1_acc is None else ad.add(l1_acc, l1_c)
        if lam < 1.0:
            s = ad.sub(1.0, _ssim_map(xa, xs, h, w))
            ssim_acc = s if ssim_acc is None else ad.add(ssim_acc, s)

    per_pixel = ad.mul(l1_acc, lam / n)
    if ssim_acc is not None:
        per_pixel = ad.add(per_pixel, ad.mul(ssim_acc, (1.0 - lam) / n))
    return ad.div(ad.total_sum(ad.mul(per_pixel, inner)), count)


# --- smoothness and geometric consistency ----------------------------------


@lru_cache(maxsize=32)
def _shift_indices(h: int, w: int):
    grid = np.arange(h * w).reshape(h, w)
    return (
        grid[:, 1:].reshape(-1), grid[:, :-1].reshape(-1),
        grid[1:, :].reshape(-1), grid[:-1, :].reshape(-1),
    )


def _grad_maps(t: Tensor, h: int, w: int) -> tuple[Tensor, Tensor]:
    xr, xl, yd, yu = _shift_indices(h, w)
    return (ad.sub(ad.take(t, xr), ad.take(t, xl)),
            ad.sub(ad.take(t, yd), ad.take(t, yu)))


def _image_gradient_weight(image, h, w, axis_idx):
    """exp(-mean_c |dI|) along one axis, as a tensor or a constant array."""
    if isinstance(image, Tensor):
        chans = _channel_views(image)
        acc = None
        for c in chans:
            g = ad.abs_smooth(ad.sub(ad.take(c, axis_idx[0]), ad.take(c, axis_idx[1])))
            acc = g if acc is None else ad.add(acc, g)
        return ad.exp(ad.neg(ad.mul(acc, 1.0 / len(chans))))
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    flat = img.reshape(-1, img.shape[2])
    g = np.abs(flat[axis_idx[0]] - flat[axis_idx[1]]).mean(axis=1)
    return np.exp(-g)


def smoothness_loss(depth: Tensor, image) -> Tensor:
    """Edge-aware first-order smoothness on mean-normalized inverse depth.

    Depth converts to disparity 1/d and is normalized by its own mean; the
    per-axis disparity gradients are weighted down across image edges.
    """
    if len(depth.shape) != 2:
        raise ShapeError(f"depth must be (H, W), got {depth.shape}")
    h, w = depth.shape
    img_hw = np.asarray(image.values if isinstance(image, Tensor) else image).shape[:2]
    if img_hw != (h, w):
        raise ShapeError(f"image {img_hw} and depth {(h, w)} disagree")
    disp = ad.div(1.0, depth)
    dhat = ad.div(disp, ad.mean(disp))
    xr, xl, yd, yu = _shift_indices(h, w)
    dx = ad.abs_smooth(ad.sub(ad.take(dhat, xr), ad.take(dhat, xl)))
    dy = ad.abs_smooth(ad.sub(ad.take(dhat, yd), ad.take(dhat, yu)))
    wx = _image_gradient_weight(image, h, w, (xr, xl))
    wy = _image_gradient_weight(image, h, w, (yd, yu))
    return ad.add(ad.mean(ad.mul(dx, wx)), ad.mean(ad.mul(dy, wy)))


def geometric_consistency_loss(d_a_warped: Tensor, d_b_resampled: Tensor,
                               valid_mask=None) -> Tensor:
    """Mean normalized depth disagreement |a-b| / (a+b), in [0, 1)."""
    if d_a_warped.shape != d_b_resampled.shape:
        raise ShapeError(
            f"depth shapes differ: {d_a_warped.shape} vs {d_b_resampled.shape}"
        )
    diff = ad.abs_smooth(ad.sub(d_a_warped, d_b_resampled))
    ratio = ad.div(diff, ad.add(d_a_warped, d_b_resampled))
    if valid_mask is None:
        return ad.mean(ratio)
    mask = np.asarray(valid_mask, dtype=np.float64).reshape(ratio.shape)
    count = mask.sum()
    if count == 0:
        raise ContractError("geometric consistency over an empty validity mask")
    return ad.div(ad.total_sum(ad.mul(ratio, mask)), count)


# --- assembled objectives ---------------------------------------------------


def untargeted_loss(img_a: Tensor, img_b: Tensor, depth_model, pose_model,
                    weights: LossWeights, k: Intrinsics) -> Tensor:
    """w1*photometric + w2*smoothness + w3*geometric, as used in training.

    No ground truth enters: the pose and both depths are the models' own
    predictions on the (possibly perturbed) pair.  Terms with zero weight
    are skipped entirely.
    """
    tape = img_a.tape
    if weights.w1 == 0.0 and weights.w2 == 0.0 and weights.w3 == 0.0:
        return tape.tensor(0.0)

    pose6 = pose_model.forward(img_a, img_b)
    depth_a = depth_model.forward(img_a)
    total = None

    def acc(term, w):
        nonlocal total
        term = ad.mul(term, w)
        total = term if total is None else ad.add(total, term)

    if weights.w1 > 0.0 or weights.w3 > 0.0:
        rot, trans = pose_matrices_inverse(pose6)  # predicted pose maps b->a
        xs, ys, zb, valid = project_to_source(depth_a, rot, trans, k)
        if not valid.any():
            raise EmptyOverlapError("predicted pose pushed every pixel out of view")
        h, w = depth_a.shape
        flat_x = ad.reshape(xs, (h * w,))
        flat_y = ad.reshape(ys, (h * w,))
        if weights.w1 > 0.0:
            synth = ad.reshape(ad.bilinear_sample(img_b, flat_x, flat_y),
                               img_a.shape)
            acc(photometric_loss(img_a, synth, valid, weights.lambda_p), weights.w1)
        if weights.w3 > 0.0:
            depth_b = depth_model.forward(img_b)
            d_res = ad.reshape(ad.bilinear_sample(depth_b, flat_x, flat_y), (h, w))
            acc(geometric_consistency_loss(zb, d_res, valid), weights.w3)
    if weights.w2 > 0.0:
        acc(smoothness_loss(depth_a, img_a), weights.w2)
    return total


def _relative_terms(pose_pred: Tensor, target: TransformSE3):
    """trace and translation of T_pred^-1 T_target, differentiably."""
    r, t = pose_matrices(pose_pred)
    # trace(R_pred^T R_tgt) is the elementwise dot of the two matrices
    trace = ad.total_sum(ad.mul(r, target.r))
    rt = _transpose3(r)
    dt = ad.sub(np.asarray(target.t).reshape(3, 1), ad.reshape(t, (3, 1)))
    t_rel = ad.matmul(rt, dt)
    return trace, t_rel


def rotation_error_tensor(pose_pred: Tensor, target: TransformSE3) -> Tensor:
    """Residual rotation angle arccos((trace - 1) / 2), clamped."""
    trace, _ = _relative_terms(pose_pred, target)
    return ad.arccos(ad.mul(ad.sub(trace, 1.0), 0.5))


def translation_error_tensor(pose_pred: Tensor, target: TransformSE3) -> Tensor:
    """Residual translation norm, smoothed at zero for differentiability."""
    _, t_rel = _relative_terms(pose_pred, target)
    return ad.sqrt(ad.add(ad.total_sum(ad.mul(t_rel, t_rel)), _NORM_EPS))


def targeted_loss_yaw(pose_pred: Tensor, pose_target: TransformSE3) -> Tensor:
    return rotation_error_tensor(pose_pred, pose_target)


def targeted_loss_translation(pose_pred: Tensor, pose_target: TransformSE3) -> Tensor:
    return translation_error_tensor(pose_pred, pose_target)


def targeted_loss_pose(pose_pred: Tensor, pose_target: TransformSE3) -> Tensor:
    return ad.add(rotation_error_tensor(pose_pred, pose_target),
                  translation_error_tensor(pose_pred, pose_target))


# --- depth attack targets ---------------------------------------------------


def flip_depth_target(d: np.ndarray, axis: str) -> np.ndarray:
    """Mirror a depth map horizontally (columns) or vertically (rows)."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2:
        raise ShapeError(f"depth map must be (H, W), got {d.shape}")
    if axis == "horizontal":
        return d[:, ::-1].copy()
    if axis == "vertical":
        return d[::-1, :].copy()
    raise ContractError(f"unknown flip axis {axis!r}")


def depth_attack_loss(d_pred: Tensor, d_target: np.ndarray) -> Tensor:
    """Mean absolute difference to a fixed target depth map."""
    tgt = np.asarray(d_target, dtype=np.float64)
    if d_pred.shape != tgt.shape:
        raise ShapeError(f"depth shapes differ: {d_pred.shape} vs {tgt.shape}")
    return ad.mean(ad.abs_smooth(ad.sub(d_pred, tgt)))

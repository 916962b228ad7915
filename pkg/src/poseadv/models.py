"""Pluggable differentiable models: pose (image pair -> 6-DoF) and depth.

The built-in toy networks are deliberately tiny strided-convolution stacks
so attacks remain testable at desk scale without any pretrained weights.
Convolutions are expressed as gather + matmul over the autodiff tape, which
keeps the engine's primitive set small.

Weight file layout (little-endian):

    offset  size      field
    0       4         magic  b"TOYW"
    4       4         u32 version (1)
    8       8         u64 seed
    16      4         u32 ndims
    20      4*ndims   u32 dims
    ...     4         u32 parameter count
    ...     4*count   f32 parameters
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import FormatError, InputError, ShapeError
from .geometry import EulerPose

_MAGIC = b"TOYW"
_VERSION = 1

PIXEL_MAX = 255.0


@dataclass(frozen=True)
class ToyWeights:
    """Seeded flat parameter vector plus the layer dims that shape it."""

    seed: int
    dims: tuple[int, ...]
    params: np.ndarray  # float32, read-only

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float32)
        p.setflags(write=False)
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not np.all(np.isfinite(p)):
            raise FormatError("weights contain non-finite parameters")

    def __eq__(self, other):
        return (
            isinstance(other, ToyWeights)
            and self.seed == other.seed
            and self.dims == other.dims
            and self.params.shape == other.params.shape
            and bool(np.all(self.params == other.params))
        )


def pose_param_count(dims: tuple[int, ...]) -> int:
    cin, c1, c2, cout = dims
    return 9 * cin * c1 + c1 + 9 * c1 * c2 + c2 + c2 * cout + cout


def depth_param_count(dims: tuple[int, ...]) -> int:
    cin, hidden, cout = dims
    return 9 * cin * hidden + hidden + hidden * cout + cout


def random_pose_weights(seed: int, c1: int = 8, c2: int = 8,
                        head_bias: float = 0.5) -> ToyWeights:
    """Seeded weights for the pose network, fan-in scaled.

    Conv biases are zero; the dense head gets a random bias so clean
    predictions sit away from the all-zero pose, which keeps targeted
    attacks well-conditioned on untrained toy models.
    """
    dims = (6, c1, c2, 6)
    rng = np.random.default_rng(seed)
    parts = []
    for fan_in, n_w, n_b in (
        (9 * 6, 9 * 6 * c1, c1),
        (9 * c1, 9 * c1 * c2, c2),
        (c2, c2 * 6, 6),
    ):
        parts.append(rng.standard_normal(n_w) / math.sqrt(fan_in))
        parts.append(np.zeros(n_b))
    parts[-1] = rng.standard_normal(6) * head_bias
    return ToyWeights(seed, dims, np.concatenate(parts).astype(np.float32))


def calibrated_pose_weights(seed: int, nominal, jitter: float = 0.25,
                            c1: int = 8, c2: int = 8,
                            trans_scale: float = 0.01,
                            angle_scale: float = 0.1) -> ToyWeights:
    """Weights whose clean predictions center on a nominal motion.

    The dense-head bias is set so the squashed outputs reproduce `nominal`
    (a 6-vector or EulerPose), while the seeded conv stack adds
    image-dependent jitter around it.  This is the desk-scale stand-in for
    a model that has actually learned a scene's motion regime; build the
    PoseModel with the same trans_scale and angle_scale.
    """
    vec = nominal.as_vector() if hasattr(nominal, "as_vector") else np.asarray(
        nominal, dtype=np.float64).reshape(6)
    dims = (6, c1, c2, 6)
    rng = np.random.default_rng(seed)
    parts = [
        rng.standard_normal(9 * 6 * c1) / math.sqrt(9 * 6), np.zeros(c1),
        rng.standard_normal(9 * c1 * c2) / math.sqrt(9 * c1), np.zeros(c2),
        rng.standard_normal(c2 * 6) / math.sqrt(c2) * jitter,
    ]
    bias = np.empty(6)
    bias[:3] = vec[:3] / trans_scale
    ratio = np.clip(vec[3:] / math.pi, -0.999999, 0.999999)
    bias[3:] = np.arctanh(ratio) / angle_scale
    parts.append(bias)
    return ToyWeights(seed, dims, np.concatenate(parts).astype(np.float32))


def random_depth_weights(seed: int, hidden: int = 8) -> ToyWeights:
    dims = (3, hidden, 1)
    rng = np.random.default_rng(seed)
    parts = [
        rng.standard_normal(9 * 3 * hidden) / math.sqrt(9 * 3),
        np.zeros(hidden),
        rng.standard_normal(hidden) / math.sqrt(hidden),
        np.zeros(1),
    ]
    return ToyWeights(seed, dims, np.concatenate(parts).astype(np.float32))


def save_weights(w: ToyWeights, path) -> None:
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _VERSION)
    blob += struct.pack("<Q", w.seed)
    blob += struct.pack("<I", len(w.dims))
    blob += struct.pack(f"<{len(w.dims)}I", *w.dims)
    blob += struct.pack("<I", w.params.size)
    blob += np.asarray(w.params, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(blob))


def load_weights(path) -> ToyWeights:
    with open(path, "rb") as f:
        data = f.read()

    def need(offset, n, what):
        if len(data) < offset + n:
            raise FormatError(f"truncated weight file at offset {offset}: {what}")
        return data[offset:offset + n]

    if need(0, 4, "magic") != _MAGIC:
        raise FormatError("bad magic at offset 0; not a toy-weights file")
    (version,) = struct.unpack("<I", need(4, 4, "version"))
    if version != _VERSION:
        raise FormatError(f"unsupported weight file version {version} at offset 4")
    (seed,) = struct.unpack("<Q", need(8, 8, "seed"))
    (ndims,) = struct.unpack("<I", need(16, 4, "ndims"))
    if ndims == 0 or ndims > 16:
        raise FormatError(f"implausible ndims {ndims} at offset 16")
    dims = struct.unpack(f"<{ndims}I", need(20, 4 * ndims, "dims"))
    off = 20 + 4 * ndims
    (count,) = struct.unpack("<I", need(off, 4, "count"))
    off += 4
    raw = need(off, 4 * count, "parameters")
    if len(data) != off + 4 * count:
        raise FormatError(f"trailing bytes after offset {off + 4 * count}")
    params = np.frombuffer(raw, dtype="<f4").copy()
    return ToyWeights(int(seed), dims, params)


@lru_cache(maxsize=64)
def _patch_grid(h: int, w: int, k: int, stride: int, same: bool):
    """Row/col lookup per patch element; replicate-clamped when `same`."""
    if same:
        out_h, out_w, lo = h, w, -(k // 2)
    else:
        out_h = (h - k) // stride + 1
        out_w = (w - k) // stride + 1
        lo = 0
    oy, ox = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    dy, dx = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    ys = oy.reshape(-1, 1) * stride + dy.reshape(1, -1) + lo
    xs = ox.reshape(-1, 1) * stride + dx.reshape(1, -1) + lo
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    return ys, xs, out_h, out_w


@lru_cache(maxsize=64)
def _conv_indices(h: int, w: int, c: int, k: int, stride: int, same: bool):
    """Flat im2col indices into an (H, W, C) tensor; rows iterate (dy,dx,ch)."""
    ys, xs, out_h, out_w = _patch_grid(h, w, k, stride, same)
    base = (ys * w + xs) * c  # (n_patches, k*k)
    idx = base[:, :, None] + np.arange(c)[None, None, :]
    return idx.reshape(base.shape[0], -1), out_h, out_w


@lru_cache(maxsize=64)
def _pair_conv_indices(h: int, w: int, k: int, stride: int):
    """im2col indices into concat(ravel(a), ravel(b)) viewed as 6 channels."""
    ys, xs, out_h, out_w = _patch_grid(h, w, k, stride, same=False)
    plane = h * w * 3
    base = (ys * w + xs) * 3  # (n, k*k)
    ch6 = np.arange(6)
    offs = (ch6 // 3) * plane + (ch6 % 3)  # channel -> flat offset
    idx = base[:, :, None] + offs[None, None, :]
    return idx.reshape(base.shape[0], -1), out_h, out_w


def _check_image(img: np.ndarray, what: str) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"{what} must be (H, W, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise InputError(f"{what} contains non-finite pixels")
    if img.min() < 0.0 or img.max() > PIXEL_MAX:
        raise InputError(
            f"{what} pixels outside [0, {PIXEL_MAX:g}]: "
            f"range [{img.min():g}, {img.max():g}]"
        )
    return img


class PoseModel:
    """Two strided conv layers, global pooling, and a dense 6-way head.

    Translations are the raw head outputs scaled by `trans_scale`; angles
    are squashed through pi * tanh(angle_scale * raw) so they always land
    inside (-pi, pi).
    """

    def __init__(self, weights: ToyWeights, trans_scale: float = 0.01,
                 angle_scale: float = 0.1):
        if len(weights.dims) != 4 or weights.dims[0] != 6 or weights.dims[3] != 6:
            raise FormatError(f"pose model expects dims (6, c1, c2, 6), got {weights.dims}")
        if weights.params.size != pose_param_count(weights.dims):
            raise FormatError(
                f"parameter count {weights.params.size} inconsistent with dims "
                f"{weights.dims} (expected {pose_param_count(weights.dims)})"
            )
        _, c1, c2, _ = weights.dims
        p = np.asarray(weights.params, dtype=np.float64)
        o = 0

        def cut(n, shape):
            nonlocal o
            seg = p[o:o + n].reshape(shape)
            o += n
            return seg

        self.w1 = cut(9 * 6 * c1, (9 * 6, c1))
        self.b1 = cut(c1, (c1,))
        self.w2 = cut(9 * c1 * c2, (9 * c1, c2))
        self.b2 = cut(c2, (c2,))
        self.w3 = cut(c2 * 6, (c2, 6))
        self.b3 = cut(6, (6,))
        self.c1, self.c2 = c1, c2
        self.trans_scale = float(trans_scale)
        self.angle_scale = float(angle_scale)
        self.weights = weights

    def forward(self, img_a: Tensor, img_b: Tensor) -> Tensor:
        """Differentiable 6-vector (tx, ty, tz, roll, pitch, yaw)."""
        if img_a.shape != img_b.shape:
            raise ShapeError(f"image pair shapes differ: {img_a.shape} vs {img_b.shape}")
        if len(img_a.shape) != 3 or img_a.shape[2] != 3:
            raise ShapeError(f"pose model expects (H, W, 3) images, got {img_a.shape}")
        h, w, _ = img_a.shape
        if h < 8 or w < 8:
            raise ShapeError(f"pose model needs images of at least 8x8, got {h}x{w}")
        na = ad.sub(ad.mul(img_a, 1.0 / PIXEL_MAX), 0.5)
        nb = ad.sub(ad.mul(img_b, 1.0 / PIXEL_MAX), 0.5)
        pair = ad.concat([na, nb])

        idx1, h1o, w1o = _pair_conv_indices(h, w, k=3, stride=2)
        f1 = ad.tanh(ad.add(ad.matmul(ad.take(pair, idx1), self.w1), self.b1))
        idx2, h2o, w2o = _conv_indices(h1o, w1o, self.c1, k=3, stride=2, same=False)
        f2 = ad.tanh(ad.add(ad.matmul(ad.take(f1, idx2), self.w2), self.b2))

        n2 = h2o * w2o
        pooled = ad.matmul(np.full((1, n2), 1.0 / n2), f2)
        head = ad.reshape(ad.add(ad.matmul(pooled, self.w3), self.b3), (6,))
        trans = ad.mul(ad.take(head, np.array([0, 1, 2])), self.trans_scale)
        angles = ad.mul(
            ad.tanh(ad.mul(ad.take(head, np.array([3, 4, 5])), self.angle_scale)),
            math.pi,
        )
        return ad.concat([trans, angles])


class DepthModel:
    """Replicate-padded 3x3 conv, tanh, 1x1 head, softplus positivity map."""

    def __init__(self, weights: ToyWeights):
        if len(weights.dims) != 3 or weights.dims[0] != 3 or weights.dims[2] != 1:
            raise FormatError(f"depth model expects dims (3, hidden, 1), got {weights.dims}")
        if weights.params.size != depth_param_count(weights.dims):
            raise FormatError(
                f"parameter count {weights.params.size} inconsistent with dims "
                f"{weights.dims} (expected {depth_param_count(weights.dims)})"
            )
        hidden = weights.dims[1]
        p = np.asarray(weights.params, dtype=np.float64)
        self.w1 = p[: 27 * hidden].reshape(27, hidden)
        o = 27 * hidden
        self.b1 = p[o:o + hidden]
        o += hidden
        self.w2 = p[o:o + hidden].reshape(hidden, 1)
        o += hidden
        self.b2 = p[o:o + 1]
        self.hidden = hidden
        self.weights = weights

    def forward(self, img: Tensor) -> Tensor:
        """Differentiable (H, W) strictly positive depth map."""
        if len(img.shape) != 3 or img.shape[2] != 3:
            raise ShapeError(f"depth model expects an (H, W, 3) image, got {img.shape}")
        h, w, _ = img.shape
        x = ad.sub(ad.mul(img, 1.0 / PIXEL_MAX), 0.5)
        idx, _, _ = _conv_indices(h, w, 3, k=3, stride=1, same=True)
        f1 = ad.tanh(ad.add(ad.matmul(ad.take(x, idx), self.w1), self.b1))
        raw = ad.add(ad.matmul(f1, self.w2), self.b2)
        return ad.reshape(ad.softplus(raw), (h, w))


def toy_pose_model(w: ToyWeights, **kwargs) -> PoseModel:
    return PoseModel(w, **kwargs)


def toy_depth_model(w: ToyWeights) -> DepthModel:
    return DepthModel(w)


@dataclass
class PosePrediction:
    """Clean pose plus the differentiable plumbing that produced it."""

    pose: EulerPose
    vector: Tensor
    tape: Tape
    leaf_a: Tensor
    leaf_b: Tensor


@dataclass
class DepthPrediction:
    depth: np.ndarray
    tensor: Tensor
    tape: Tape
    leaf: Tensor


def predict_pose(model: PoseModel, a, b) -> PosePrediction:
    """Validated pose prediction on a clean image pair."""
    a = _check_image(a, "first image")
    b = _check_image(b, "second image")
    if a.shape != b.shape:
        raise InputError(f"image pair shapes differ: {a.shape} vs {b.shape}")
    tape = Tape()
    ta, tb = tape.tensor(a), tape.tensor(b)
    vec = model.forward(ta, tb)
    return PosePrediction(EulerPose.from_vector(vec.values), vec, tape, ta, tb)


def predict_depth(model: DepthModel, img) -> DepthPrediction:
    img = _check_image(img, "image")
    tape = Tape()
    t = tape.tensor(img)
    d = model.forward(t)
    return DepthPrediction(d.values.copy(), d, tape, t)

"""Frame ingestion and the synthetic sequence generator.

Two uncompressed raster formats are supported:

* binary portable pixmap (P6, maxval 255), and
* the toolkit's raw-tensor format:

      offset  size   field
      0       4      magic b"IMGT"
      4       4      u32 version (1)
      8       12     u32 height, width, channels
      20      ...    little-endian float32 payload, row-major (H, W, C)

The synthetic generator renders a value-noise-textured ground plane and
back wall from a camera driving forward with a gentle turn, and writes the
frames, the exact camera-to-world poses (text, 3x4 rows), and per-frame
depth maps.
"""

from __future__ import annotations

import math
import re
import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .evaluation import Trajectory, integrate_trajectory, write_kitti_poses
from .geometry import TransformSE3
from .losses import Intrinsics
from .models import PIXEL_MAX

_RAW_MAGIC = b"IMGT"
_RAW_VERSION = 1

POSES_FILENAME = "poses.txt"
DEPTH_DIRNAME = "depth"


# --- portable pixmap --------------------------------------------------------


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"PPM writer needs (H, W, 3), got {img.shape}")
    data = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w, _ = data.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise FormatError(f"{path}: not a binary PPM (missing P6 magic)")
    # header: magic, width, height, maxval, single whitespace, then pixels
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(x) for x in fields)
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    need = w * h * 3
    raw = data[pos:pos + need]
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} pixel bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3).astype(np.float64)


# --- raw tensor -------------------------------------------------------------


def write_raw_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise InputError(f"raw tensor writer needs (H, W[, C]), got {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as f:
        f.write(_RAW_MAGIC)
        f.write(struct.pack("<IIII", _RAW_VERSION, h, w, c))
        f.write(arr.astype("<f4").tobytes())


def read_raw_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 20:
        raise FormatError(f"{path}: truncated raw tensor header")
    if data[:4] != _RAW_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    version, h, w, c = struct.unpack("<IIII", data[4:20])
    if version != _RAW_VERSION:
        raise FormatError(f"{path}: unsupported raw tensor version {version}")
    need = h * w * c * 4
    if len(data) != 20 + need:
        raise FormatError(
            f"{path}: payload size {len(data) - 20} != expected {need}"
        )
    arr = np.frombuffer(data[20:], dtype="<f4").reshape(h, w, c).astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite pixel values")
    return arr[:, :, 0] if c == 1 else arr


# --- sequence loading -------------------------------------------------------

_FRAME_RE = re.compile(r"(\d+)")


def load_sequence(directory) -> list[np.ndarray]:
    """Load numbered frames from a directory, sorted by numeric index.

    Accepts .ppm and .imgt files.  Gaps in the numbering produce a warning;
    out-of-range pixels are an error naming the file.
    """
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"sequence directory {d} does not exist")
    entries = []
    for p in sorted(d.iterdir()):
        if p.suffix.lower() not in (".ppm", ".imgt"):
            continue
        m = _FRAME_RE.search(p.stem)
        if m is None:
            continue
        entries.append((int(m.group(1)), p))
    entries.sort(key=lambda e: e[0])
    if not entries:
        raise InputError(f"no frames (*.ppm, *.imgt) found in {d}")
    indices = [i for i, _ in entries]
    if indices != list(range(indices[0], indices[0] + len(indices))):
        warnings.warn(f"frame numbering in {d} has gaps: {indices}", stacklevel=2)
    frames = []
    for _, p in entries:
        img = read_ppm(p) if p.suffix.lower() == ".ppm" else read_raw_tensor(p)
        if img.ndim != 3 or img.shape[2] != 3:
            raise FormatError(f"{p}: expected a 3-channel image, got shape {img.shape}")
        if img.min() < 0.0 or img.max() > PIXEL_MAX:
            raise InputError(
                f"{p}: pixel values outside [0, {PIXEL_MAX:g}] "
                f"(range [{img.min():g}, {img.max():g}])"
            )
        frames.append(img)
    return frames


def load_depth_maps(directory) -> list[np.ndarray]:
    """Load numbered single-channel raw tensors (ground-truth depth)."""
    d = Path(directory)
    if not d.is_dir():
        raise InputError(f"depth directory {d} does not exist")
    entries = []
    for p in sorted(d.iterdir()):
        if p.suffix.lower() != ".imgt":
            continue
        m = _FRAME_RE.search(p.stem)
        if m is not None:
            entries.append((int(m.group(1)), p))
    entries.sort(key=lambda e: e[0])
    if not entries:
        raise InputError(f"no depth maps (*.imgt) found in {d}")
    return [read_raw_tensor(p) for _, p in entries]


# --- synthetic sequence -----------------------------------------------------


def _value_noise(rng, shape, scale_px: float, octaves: int = 3) -> np.ndarray:
    """Multi-octave bilinear value noise in [0, 1] over a pixel grid."""
    h, w = shape
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out = np.zeros((h, w))
    amp, total = 1.0, 0.0
    for o in range(octaves):
        cell = max(scale_px / (2 ** o), 2.0)
        gh = int(math.ceil(h / cell)) + 2
        gw = int(math.ceil(w / cell)) + 2
        grid = rng.random((gh, gw))
        gy, gx = ys / cell, xs / cell
        y0, x0 = gy.astype(int), gx.astype(int)
        fy, fx = gy - y0, gx - x0
        v = ((1 - fy) * (1 - fx) * grid[y0, x0]
             + (1 - fy) * fx * grid[y0, x0 + 1]
             + fy * (1 - fx) * grid[y0 + 1, x0]
             + fy * fx * grid[y0 + 1, x0 + 1])
        out += amp * v
        total += amp
        amp *= 0.5
    return out / total


class _PlanarWorld:
    """Textured ground plane and back wall with analytic ray intersections."""

    def __init__(self, seed: int, ground_y: float = 1.2, wall_z: float = 24.0,
                 far: float = 60.0):
        self.ground_y = ground_y
        self.wall_z = wall_z
        self.far = far
        rng = np.random.default_rng(seed)
        self._tex_res = 512
        self._tex_span = 40.0
        self.ground_tex = np.stack(
            [_value_noise(rng, (self._tex_res, self._tex_res), 24.0) for _ in range(3)],
            axis=2,
        )
        self.wall_tex = np.stack(
            [_value_noise(rng, (self._tex_res, self._tex_res), 32.0) for _ in range(3)],
            axis=2,
        )

    def _sample(self, tex, u, v):
        res = self._tex_res
        gu = (u / self._tex_span % 1.0) * (res - 1)
        gv = (v / self._tex_span % 1.0) * (res - 1)
        x0 = np.clip(gu.astype(int), 0, res - 2)
        y0 = np.clip(gv.astype(int), 0, res - 2)
        fx = gu - x0
        fy = gv - y0
        out = np.empty(u.shape + (3,))
        for c in range(3):
            t = tex[:, :, c]
            out[..., c] = ((1 - fy) * (1 - fx) * t[y0, x0]
                           + (1 - fy) * fx * t[y0, x0 + 1]
                           + fy * (1 - fx) * t[y0 + 1, x0]
                           + fy * fx * t[y0 + 1, x0 + 1])
        return out

    def render(self, pose_c2w: TransformSE3, k: Intrinsics, h: int, w: int):
        """Render one frame and its depth map from a camera pose."""
        us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
        d_cam = np.stack(
            [(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us)], axis=-1
        )
        d_world = d_cam @ pose_c2w.r.T
        o = pose_c2w.t

        img = np.empty((h, w, 3))
        depth = np.full((h, w), self.far)

        dy = d_world[..., 1]
        ground_s = np.where(dy > 1e-9, (self.ground_y - o[1]) / np.where(dy > 1e-9, dy, 1.0), np.inf)
        dz = d_world[..., 2]
        wall_s = np.where(dz > 1e-9, (self.wall_z - o[2]) / np.where(dz > 1e-9, dz, 1.0), np.inf)

        s = np.minimum(ground_s, wall_s)
        hit_ground = (ground_s <= wall_s) & np.isfinite(ground_s)
        hit_wall = (~hit_ground) & np.isfinite(wall_s)
        sky = ~(hit_ground | hit_wall)

        px = o[0] + s * d_world[..., 0]
        py = o[1] + s * d_world[..., 1]
        pz = o[2] + s * d_world[..., 2]

        img[hit_ground] = self._sample(self.ground_tex, px[hit_ground], pz[hit_ground])
        img[hit_wall] = self._sample(self.wall_tex, px[hit_wall], py[hit_wall])
        img[sky] = 0.55

        # depth along the optical axis: s is the range scale, d_cam z is 1
        finite = np.isfinite(s)
        depth[finite] = np.clip(s[finite], 0.1, self.far)

        img = np.clip(30.0 + img * 195.0, 0.0, PIXEL_MAX)
        return img, depth


def synthetic_motion(n_frames: int, forward: float = 0.25, turn: float = 0.01,
                     turn_axis: str = "y") -> list[TransformSE3]:
    """Relative transforms of a forward drive with a constant gentle turn.

    turn_axis "y" pans the camera (heading change); "z" rotates about the
    optical axis, which is the component the yaw-targeted attack acts on
    under the toolkit's Euler convention.
    """
    c, s = math.cos(turn), math.sin(turn)
    if turn_axis == "y":
        r = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    elif turn_axis == "z":
        r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    else:
        raise InputError(f"turn_axis must be 'y' or 'z', got {turn_axis!r}")
    step = TransformSE3(r, (0.0, 0.0, forward))
    return [step for _ in range(n_frames - 1)]


def generate_synthetic_sequence(out_dir, n_frames: int = 6, height: int = 32,
                                width: int = 40, seed: int = 0,
                                fmt: str = "ppm", forward: float = 0.25,
                                turn: float = 0.01,
                                turn_axis: str = "y") -> Trajectory:
    """Render a sequence with known motion; returns the ground-truth trajectory.

    Writes frame_%04d.<fmt>, poses.txt (camera-to-world 3x4 rows), and
    depth/depth_%04d.imgt ground-truth depth maps.
    """
    if n_frames < 2:
        raise InputError(f"need at least 2 frames, got {n_frames}")
    if fmt not in ("ppm", "imgt"):
        raise InputError(f"unsupported frame format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / DEPTH_DIRNAME).mkdir(exist_ok=True)

    k = Intrinsics(fx=float(max(height, width)), fy=float(max(height, width)),
                   cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)
    world = _PlanarWorld(seed)
    traj = integrate_trajectory(synthetic_motion(n_frames, forward, turn, turn_axis))

    for i, pose in enumerate(traj):
        img, depth = world.render(pose, k, height, width)
        if fmt == "ppm":
            write_ppm(out / f"frame_{i:04d}.ppm", img)
        else:
            write_raw_tensor(out / f"frame_{i:04d}.imgt", img)
        write_raw_tensor(out / DEPTH_DIRNAME / f"depth_{i:04d}.imgt", depth)
    write_kitti_poses(traj, out / POSES_FILENAME)
    return traj

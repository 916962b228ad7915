"""Experiment configuration: JSON key-value file with validated defaults."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

from .attack import ALL_KINDS
from .errors import ConfigError, InputError
from .losses import Intrinsics, LossWeights

DEFAULT_EPSILONS = (0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
TARGETED_EPSILONS = (1.0, 2.0, 4.0)
OUTPUT_DIR_ENV = "POSEADV_OUT"


@dataclass(frozen=True)
class ExperimentConfig:
    sequence: str
    groundtruth: str | None = None
    groundtruth_depth: str | None = None
    intrinsics: Intrinsics | None = None
    attacks: tuple[str, ...] = ("untargeted",)
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    alpha: float = 1.0
    direction: str = "default"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    pose_weights: str | None = None
    depth_weights: str | None = None
    seed: int = 0
    output_dir: str | None = None
    workers: int = 1
    rpe_delta: int = 1

    def resolved_output_dir(self) -> str:
        if self.output_dir:
            return self.output_dir
        return os.environ.get(OUTPUT_DIR_ENV, "poseadv_out")


_KNOWN_KEYS = {
    "sequence", "groundtruth", "groundtruth_depth", "intrinsics", "attacks",
    "epsilons", "alpha", "direction", "loss_weights", "pose_weights",
    "depth_weights", "seed", "output_dir", "workers", "rpe_delta",
}


def _require(cond, key, msg):
    if not cond:
        raise ConfigError(f"config key '{key}': {msg}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "sequence" not in raw:
        raise ConfigError("config key 'sequence': missing (mandatory)")
    seq = raw["sequence"]
    _require(isinstance(seq, str) and seq, "sequence", "must be a non-empty path")

    kw: dict = {"sequence": seq}

    for key in ("groundtruth", "groundtruth_depth", "pose_weights",
                "depth_weights", "output_dir"):
        if raw.get(key) is not None:
            _require(isinstance(raw[key], str), key, "must be a path string")
            kw[key] = raw[key]

    if raw.get("intrinsics") is not None:
        k = raw["intrinsics"]
        _require(isinstance(k, dict) and set(k) == {"fx", "fy", "cx", "cy"},
                 "intrinsics", "must be an object with fx, fy, cx, cy")
        try:
            kw["intrinsics"] = Intrinsics(float(k["fx"]), float(k["fy"]),
                                          float(k["cx"]), float(k["cy"]))
        except (TypeError, ValueError, InputError) as e:
            raise ConfigError(f"config key 'intrinsics': {e}") from None

    if "attacks" in raw:
        at = raw["attacks"]
        _require(isinstance(at, list) and at, "attacks", "must be a non-empty list")
        for a in at:
            _require(a in ALL_KINDS, "attacks",
                     f"unknown kind {a!r}; choose from {list(ALL_KINDS)}")
        kw["attacks"] = tuple(at)

    if "epsilons" in raw:
        eps = raw["epsilons"]
        _require(isinstance(eps, list), "epsilons", "must be a list")
        for e in eps:
            _require(isinstance(e, (int, float)) and math.isfinite(e) and e > 0,
                     "epsilons", f"values must be positive numbers, got {e!r}")
        kw["epsilons"] = tuple(float(e) for e in eps)

    if "alpha" in raw:
        a = raw["alpha"]
        _require(isinstance(a, (int, float)) and math.isfinite(a) and a > 0,
                 "alpha", f"must be a positive number, got {a!r}")
        kw["alpha"] = float(a)

    if "direction" in raw:
        d = raw["direction"]
        _require(d in ("default", "ascend", "descend"), "direction",
                 f"must be default, ascend, or descend, got {d!r}")
        kw["direction"] = d

    if "loss_weights" in raw:
        lw = raw["loss_weights"]
        _require(isinstance(lw, dict) and set(lw) <= {"w1", "w2", "w3", "lambda_p"},
                 "loss_weights", "must be an object with w1, w2, w3, lambda_p")
        try:
            kw["loss_weights"] = LossWeights(**{k: float(v) for k, v in lw.items()})
        except (TypeError, ValueError, InputError) as e:
            raise ConfigError(f"config key 'loss_weights': {e}") from None

    for key, minimum in (("seed", 0), ("workers", 1), ("rpe_delta", 1)):
        if key in raw:
            v = raw[key]
            _require(isinstance(v, int) and not isinstance(v, bool) and v >= minimum,
                     key, f"must be an integer >= {minimum}, got {v!r}")
            kw[key] = v

    return ExperimentConfig(**kw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out: dict = {
        "sequence": cfg.sequence,
        "attacks": list(cfg.attacks),
        "epsilons": list(cfg.epsilons),
        "alpha": cfg.alpha,
        "direction": cfg.direction,
        "loss_weights": {
            "w1": cfg.loss_weights.w1,
            "w2": cfg.loss_weights.w2,
            "w3": cfg.loss_weights.w3,
            "lambda_p": cfg.loss_weights.lambda_p,
        },
        "seed": cfg.seed,
        "workers": cfg.workers,
        "rpe_delta": cfg.rpe_delta,
    }
    for key in ("groundtruth", "groundtruth_depth", "pose_weights",
                "depth_weights", "output_dir"):
        if getattr(cfg, key) is not None:
            out[key] = getattr(cfg, key)
    if cfg.intrinsics is not None:
        out["intrinsics"] = {
            "fx": cfg.intrinsics.fx, "fy": cfg.intrinsics.fy,
            "cx": cfg.intrinsics.cx, "cy": cfg.intrinsics.cy,
        }
    return out


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return config_from_dict(raw)


def dump_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")

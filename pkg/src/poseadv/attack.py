"""PGD engine and attack orchestration.

Each attack perturbs one image pair: iterate alpha-sized sign steps on the
pixel gradient of the chosen objective, clip back into the epsilon
max-norm ball around the clean pair and into the valid pixel range.
Targets for the targeted attacks are frozen from the clean prediction
before the first iteration and never recomputed.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .autodiff import Tape, grad_sign
from .errors import ContractError
from .geometry import EulerPose, TransformSE3, euler_to_rotation, inverse
from .models import PIXEL_MAX, predict_depth, predict_pose

UNTARGETED = "untargeted"
POSE_KINDS = ("invert_yaw", "move_backwards", "invert_pose")
DEPTH_KINDS = ("depth_flip_h", "depth_flip_v")
ALL_KINDS = (UNTARGETED,) + POSE_KINDS + DEPTH_KINDS

_STAGNATION_LIMIT = 3


def derive_iterations(epsilon: float) -> int:
    """min(eps + 4, ceil(1.25 * eps)) floored to an integer, at least 1."""
    n = math.floor(min(epsilon + 4.0, math.ceil(1.25 * epsilon)))
    return max(1, int(n))


@dataclass(frozen=True)
class AttackBudget:
    """Max-norm bound, step size, and iteration count of the PGD loop."""

    epsilon: float
    alpha: float = 1.0
    iterations: int | None = None

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise ContractError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not (math.isfinite(self.alpha) and self.alpha > 0.0):
            raise ContractError(f"alpha must be positive, got {self.alpha}")
        if self.iterations is None:
            object.__setattr__(self, "iterations", derive_iterations(self.epsilon))
        elif int(self.iterations) < 1:
            raise ContractError(f"iterations must be >= 1, got {self.iterations}")
        else:
            object.__setattr__(self, "iterations", int(self.iterations))


@dataclass(frozen=True)
class AttackSpec:
    """What to attack and in which gradient direction."""

    kind: str
    budget: AttackBudget
    direction: str = "default"

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ContractError(f"unknown attack kind {self.kind!r}")
        if self.direction not in ("default", "ascend", "descend"):
            raise ContractError(f"unknown direction {self.direction!r}")

    def resolved_direction(self) -> str:
        """Untargeted attacks ascend the training loss; targeted attacks
        descend toward their target by default."""
        if self.direction != "default":
            return self.direction
        return "ascend" if self.kind == UNTARGETED else "descend"


@dataclass
class AdversarialPair:
    """Clean pair, perturbed pair, and the per-iteration loss trace."""

    clean_a: np.ndarray
    clean_b: np.ndarray
    adv_a: np.ndarray
    adv_b: np.ndarray
    loss_trace: list[float]
    stagnated: bool = False
    target: TransformSE3 | None = None
    depth_targets: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        for arr in (self.clean_a, self.clean_b, self.adv_a, self.adv_b):
            arr.setflags(write=False)


def make_target(kind: str, clean_pose: EulerPose) -> TransformSE3:
    """Pose target derived from the clean prediction, frozen per attack."""
    if kind == "invert_yaw":
        return euler_to_rotation(clean_pose.with_yaw(-clean_pose.yaw))
    if kind == "move_backwards":
        return euler_to_rotation(clean_pose.with_tz(-clean_pose.tz))
    if kind == "invert_pose":
        return inverse(euler_to_rotation(clean_pose))
    raise ContractError(f"no pose target for attack kind {kind!r}")


def pgd_optimize(loss_fn, img_a: np.ndarray, img_b: np.ndarray,
                 budget: AttackBudget, direction: str) -> AdversarialPair:
    """Run the PGD loop on an arbitrary pair objective.

    loss_fn(img_a_tensor, img_b_tensor) must return a scalar tensor on the
    tensors' tape.  The loss trace records the objective at the point where
    each gradient was taken, so trace[0] is the clean loss.
    """
    if direction not in ("ascend", "descend"):
        raise ContractError(f"direction must be ascend or descend, got {direction!r}")
    clean_a = np.asarray(img_a, dtype=np.float64).copy()
    clean_b = np.asarray(img_b, dtype=np.float64).copy()
    adv_a, adv_b = clean_a.copy(), clean_b.copy()
    step = budget.alpha if direction == "ascend" else -budget.alpha
    eps = budget.epsilon

    def ball(clean):
        # nudge bounds inward until the measured offset is within eps, so
        # the max-norm guarantee survives float rounding of clean +- eps
        hi, lo = clean + eps, clean - eps
        while np.any(hi - clean > eps):
            hi = np.where(hi - clean > eps, np.nextafter(hi, -np.inf), hi)
        while np.any(clean - lo > eps):
            lo = np.where(clean - lo > eps, np.nextafter(lo, np.inf), lo)
        return lo, hi

    lo_a, hi_a = ball(clean_a)
    lo_b, hi_b = ball(clean_b)

    trace: list[float] = []
    zero_streak = 0
    stagnated = False
    for _ in range(budget.iterations):
        tape = Tape()
        ta, tb = tape.tensor(adv_a), tape.tensor(adv_b)
        loss = loss_fn(ta, tb)
        trace.append(float(loss.values))
        tape.backward(loss)
        ga, gb = ta.grad, tb.grad
        if not (np.any(ga) or np.any(gb)):
            zero_streak += 1
            if zero_streak >= _STAGNATION_LIMIT and not stagnated:
                stagnated = True
                warnings.warn(
                    f"PGD stagnated: zero pixel gradient for {zero_streak} "
                    f"consecutive iterations",
                    RuntimeWarning,
                    stacklevel=2,
                )
        else:
            zero_streak = 0
        adv_a = np.clip(np.clip(adv_a + step * grad_sign(ga), lo_a, hi_a), 0.0, PIXEL_MAX)
        adv_b = np.clip(np.clip(adv_b + step * grad_sign(gb), lo_b, hi_b), 0.0, PIXEL_MAX)
    return AdversarialPair(clean_a, clean_b, adv_a, adv_b, trace, stagnated)


def _build_loss_fn(spec: AttackSpec, img_a, img_b, pose_model, depth_model,
                   loss_weights, intrinsics):
    """Objective closure plus the frozen target metadata for one pair."""
    kind = spec.kind
    if kind == UNTARGETED:
        if depth_model is None or loss_weights is None or intrinsics is None:
            raise ContractError(
                "untargeted attacks need the depth model, loss weights, and intrinsics"
            )

        def fn(ta, tb):
            return L.untargeted_loss(ta, tb, depth_model, pose_model,
                                     loss_weights, intrinsics)

        return fn, None, None

    if kind in POSE_KINDS:
        clean_pose = predict_pose(pose_model, img_a, img_b).pose
        target = make_target(kind, clean_pose)
        objective = {
            "invert_yaw": L.targeted_loss_yaw,
            "move_backwards": L.targeted_loss_translation,
            "invert_pose": L.targeted_loss_pose,
        }[kind]

        def fn(ta, tb):
            return objective(pose_model.forward(ta, tb), target)

        return fn, target, None

    if kind in DEPTH_KINDS:
        if depth_model is None:
            raise ContractError("depth attacks need the depth model")
        axis = "horizontal" if kind == "depth_flip_h" else "vertical"
        tgt_a = L.flip_depth_target(predict_depth(depth_model, img_a).depth, axis)
        tgt_b = L.flip_depth_target(predict_depth(depth_model, img_b).depth, axis)

        def fn(ta, tb):
            la = L.depth_attack_loss(depth_model.forward(ta), tgt_a)
            lb = L.depth_attack_loss(depth_model.forward(tb), tgt_b)
            return la + lb

        return fn, None, (tgt_a, tgt_b)

    raise ContractError(f"unknown attack kind {kind!r}")


def pgd_attack(spec: AttackSpec, img_a, img_b, pose_model, depth_model=None,
               loss_weights=None, intrinsics=None) -> AdversarialPair:
    """Attack one image pair with the kind, budget, and direction of `spec`."""
    fn, target, depth_targets = _build_loss_fn(
        spec, img_a, img_b, pose_model, depth_model, loss_weights, intrinsics
    )
    pair = pgd_optimize(fn, img_a, img_b, spec.budget, spec.resolved_direction())
    pair.target = target
    pair.depth_targets = depth_targets
    return pair


def attack_sequence(spec: AttackSpec, frames, pose_model, depth_model=None,
                    loss_weights=None, intrinsics=None,
                    workers: int = 1) -> list[AdversarialPair]:
    """Attack every consecutive pair of an ordered frame list.

    Each pair gets its own frozen target from its own clean prediction.
    Pairs are independent work items; results are ordered by frame index
    regardless of the executor.
    """
    if len(frames) < 2:
        raise ContractError(f"need at least 2 frames, got {len(frames)}")

    def one(i):
        return pgd_attack(spec, frames[i], frames[i + 1], pose_model,
                          depth_model, loss_weights, intrinsics)

    n = len(frames) - 1
    if workers <= 1:
        return [one(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(n)))


def cross_task_depth_inputs(adv_pairs: list[AdversarialPair]) -> list[np.ndarray]:
    """Per-frame images for single-image evaluation of a paired attack.

    Takes the first image of every pair plus the second image of the final
    pair, giving exactly one image per frame of the original sequence.
    """
    if not adv_pairs:
        raise ContractError("need at least one adversarial pair")
    return [p.adv_a for p in adv_pairs] + [adv_pairs[-1].adv_b]


def transfer_eval(adv_pairs: list[AdversarialPair], pose_model) -> list[EulerPose]:
    """Predict poses with a different model on an attack's adversarial pairs."""
    return [predict_pose(pose_model, p.adv_a, p.adv_b).pose for p in adv_pairs]

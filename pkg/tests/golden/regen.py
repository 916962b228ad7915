"""Regenerate the golden fixtures from the current build.

Run from the repo root:  python tests/golden/regen.py
Only do this deliberately; the test suite asserts these values bitwise.
"""

from pathlib import Path

import numpy as np

from poseadv.attack import AttackBudget, AttackSpec, attack_sequence, transfer_eval
from poseadv.losses import Intrinsics, LossWeights, untargeted_loss
from poseadv.autodiff import Tape
from poseadv.models import (
    predict_depth,
    predict_pose,
    random_depth_weights,
    random_pose_weights,
    toy_depth_model,
    toy_pose_model,
)

OUT = Path(__file__).parent / "golden.npz"


def seeded_pair(h=16, w=16):
    rng = np.random.default_rng(12345)
    return rng.uniform(0, 255, (h, w, 3)), rng.uniform(0, 255, (h, w, 3))


def seeded_frames(n=3, h=16, w=16):
    rng = np.random.default_rng(67890)
    return [rng.uniform(0, 255, (h, w, 3)) for _ in range(n)]


def build():
    a, b = seeded_pair()
    pose42 = toy_pose_model(random_pose_weights(42))
    pose_vec = predict_pose(pose42, a, b).vector.values

    depth7 = toy_depth_model(random_depth_weights(7))
    img = seeded_pair(8, 10)[0]
    depth_map = predict_depth(depth7, img).depth

    depth43 = toy_depth_model(random_depth_weights(43))
    k = Intrinsics(16.0, 16.0, 7.5, 7.5)
    tape = Tape()
    loss = untargeted_loss(tape.tensor(a), tape.tensor(b), depth43, pose42,
                           LossWeights(), k)
    untargeted_scalar = np.asarray(loss.values)

    model_a = toy_pose_model(random_pose_weights(1))
    model_b = toy_pose_model(random_pose_weights(2))
    pairs = attack_sequence(AttackSpec("invert_yaw", AttackBudget(2.0)),
                            seeded_frames(), model_a)
    transfer = np.stack([p.as_vector() for p in transfer_eval(pairs, model_b)])

    return {
        "pose_vec_seed42": pose_vec,
        "depth_map_seed7": depth_map,
        "untargeted_scalar": untargeted_scalar,
        "transfer_preds": transfer,
    }


if __name__ == "__main__":
    np.savez(OUT, **build())
    print(f"wrote {OUT}")
    for k, v in build().items():
        print(f"  {k}: shape {v.shape}")

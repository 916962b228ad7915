"""Adversarial perturbations against differentiable monocular pose and
depth estimators, with trajectory-level evaluation at desk scale."""

from .attack import (
    ALL_KINDS,
    AdversarialPair,
    AttackBudget,
    AttackSpec,
    attack_sequence,
    cross_task_depth_inputs,
    derive_iterations,
    make_target,
    pgd_attack,
    pgd_optimize,
    transfer_eval,
)
from .autodiff import Tape, Tensor, grad_sign
from .config import ExperimentConfig, dump_config, load_config
from .evaluation import (
    RatioReport,
    RpeReport,
    Trajectory,
    align_origin,
    depth_rmse,
    integrate_trajectory,
    parse_kitti_poses,
    ratio_report,
    rpe,
    write_kitti_poses,
)
from .geometry import (
    EulerPose,
    TransformSE3,
    compose,
    euler_to_rotation,
    inverse,
    relative_transform,
    rotation_error,
    rotation_to_euler,
    translation_error,
)
from .losses import (
    Intrinsics,
    LossWeights,
    depth_attack_loss,
    flip_depth_target,
    geometric_consistency_loss,
    photometric_loss,
    smoothness_loss,
    synthesize_view,
    targeted_loss_pose,
    targeted_loss_translation,
    targeted_loss_yaw,
    untargeted_loss,
)
from .models import (
    DepthModel,
    PoseModel,
    ToyWeights,
    load_weights,
    predict_depth,
    predict_pose,
    random_depth_weights,
    random_pose_weights,
    save_weights,
    toy_depth_model,
    toy_pose_model,
)
from .runner import ResultRecord, emit_plot_data, run_experiment
from .sequences import generate_synthetic_sequence, load_sequence

__version__ = "0.1.0"

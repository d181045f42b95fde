"""Iterative refinement of keypoint vector fields for 6D object pose estimation."""

from .errors import InnovRefineError
from .geometry import CameraIntrinsics, ObjectModel, Pose, load_model, project
from .innovation import (
    ExactOracle,
    InnovationField,
    NoiseSpec,
    StepSchedule,
    exact_gradient,
    loss_innov,
    loss_state,
    loss_total,
    noisy_oracle,
    smooth_l1,
)
from .metrics import AggregateReport, PoseErrorReport, add_metric, add_s_metric, aggregate, proj2d_metric
from .pose_recovery import VotingConfig, decode_pose, solve_pnp, vote_keypoint
from .refine import RefineConfig, RefineTrace, interpolation_distance
from .synth import CorruptionSpec, PoseSampler, Scene, corrupt, generate_scene
from .vectorfield import (
    PixelGrid,
    SegmentationMask,
    VectorFieldState,
    ground_truth_field,
    state_distance,
)

__version__ = "0.1.0"

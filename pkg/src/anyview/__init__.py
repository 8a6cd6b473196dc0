"""Reference-free multi-view geometry toolkit.

Library layout mirrors the processing pipeline: `geometry` and `alignment`
hold the pose algebra and gauge solvers, `losses` the scale-invariant
training objective with analytic gradients, `net` the order-independent
toy reconstruction model, `metrics` the evaluation suite, `synth` the
analytic ground-truth generator, and `container`/`storage`/`cli` the
persistence formats and operator commands.
"""

from .geometry import (
    Intrinsics,
    Pose,
    Sim3,
    apply_sim3,
    geodesic_angle,
    relative_pose,
    rotation_from_9d,
    umeyama_sim3,
    unproject,
)
from .alignment import (
    IcpConfig,
    ScaleProblem,
    icp_refine,
    nearest_neighbors,
    solve_depth_scale,
    solve_depth_scale_shift,
    solve_scale_weighted_l1,
)
from .losses import (
    LossConfig,
    LossReport,
    ViewPrediction,
    ViewTarget,
    conf_targets,
    grad_total_loss,
    grid_normals,
    loss_cam,
    loss_conf,
    loss_normal,
    loss_points,
    total_loss,
)
from .net import NetConfig, NetOutput, check_equivariance, forward, init_model
from .synth import (
    BoxRoomSurface,
    LineTrajectory,
    OrbitTrajectory,
    PerturbSpec,
    PlaneSurface,
    SceneSample,
    SceneSpec,
    SphereSurface,
    generate,
    perturb,
)
from .metrics import (
    CloudMetrics,
    PairError,
    ate,
    auc_at,
    cloud_metrics,
    depth_metrics,
    pairwise_angular_errors,
    pose_spectrum,
    robustness_std,
    rpe,
)

__version__ = "0.1.0"

"""Degeneracy-aware point-to-plane registration.

Detects directions of the 6-DoF perturbation space where geometry carries no
usable signal relative to sensor noise, and attenuates ICP updates there.
"""

from .degeneracy import (
    DirectionReport,
    FeatureNoise,
    HessianBundle,
    PlaneFeature,
    accumulate,
    accumulate_arrays,
    analyze,
    degeneracy_probability,
    direction_stats,
    feature_covariance,
    feature_vector,
    gaussian_cdf,
    noise_jacobian,
)
from .errors import (
    ConfigError,
    DegenerateNeighborhood,
    DegenIcpError,
    EmptyFeatureSet,
    InvalidDimensions,
    NoCorrespondences,
    NotUnitLength,
    RequiresDegenerateScene,
    SingularHessian,
    TooFewPoints,
)
from .geometry import (
    Pose,
    Twist,
    compose,
    exp_se3,
    exp_so3,
    frame_change_matrix,
    inverse,
    skew,
    skew_batch,
)
from .normals import (
    NormalCovariance,
    PlaneFit,
    fit_plane,
    fit_planes,
    is_outlier,
    normal_covariance,
    normal_vector_cov,
)
from .registration import (
    ConditionNumber,
    EigenTruncate,
    IcpConfig,
    Probabilistic,
    RegistrationResult,
    RobustCost,
    RobustKind,
    SolutionRemap,
    SolverMethod,
    Standard,
    UpdateSolution,
    attenuated_update,
    extract_features,
    icp,
    information_matrix,
    linearize,
    robust_weight,
    solve_update,
)
from .simulation import (
    NoiseSpec,
    SceneKind,
    SceneSample,
    SceneSpec,
    SpuriousInfoReport,
    apply_noise,
    generate_scene,
    mc_direction_stats,
    mc_hessian_stats,
    noisy_feature_arrays,
    spurious_info_demo,
)

__version__ = "0.1.0"

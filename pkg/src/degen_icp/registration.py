"""Point-to-plane ICP with pluggable update rules.

The update step solves the linearized point-to-plane system in the sensor
frame. Besides the standard Gauss-Newton solve, the eigencomponents of the
update can be gated: probabilistically (scaled by the probability that each
direction carries real signal), by an eigenvalue threshold with a hard
indicator, by projecting the full solution onto retained eigenvectors, or by
a condition-number cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .degeneracy import (
    DirectionReport,
    HessianBundle,
    PlaneFeature,
    _direction_reports,
    _eigh_descending,
    accumulate,
    accumulate_arrays,
)
from .errors import EmptyFeatureSet, NoCorrespondences, SingularHessian
from .geometry import Pose, Twist, compose, exp_se3, frame_change_matrix
from .normals import fit_planes

__all__ = [
    "RobustKind",
    "RobustCost",
    "Standard",
    "Probabilistic",
    "EigenTruncate",
    "SolutionRemap",
    "ConditionNumber",
    "SolverMethod",
    "UpdateSolution",
    "FeatureStats",
    "IterationRecord",
    "RegistrationResult",
    "IcpConfig",
    "robust_weight",
    "linearize",
    "attenuated_update",
    "solve_update",
    "information_matrix",
    "extract_features",
    "icp",
]

Array = NDArray[np.float64]

# Eigenvalues at or below this are treated as numerically zero.
_SINGULAR_EIG = 1e-12


class RobustKind(str, Enum):
    L2 = "l2"
    GEMAN_MCCLURE = "geman-mcclure"


@dataclass(frozen=True)
class RobustCost:
    """Robust kernel selection; scale is the residual soft threshold."""

    kind: RobustKind = RobustKind.GEMAN_MCCLURE
    scale: float = 1.0


@dataclass(frozen=True)
class Standard:
    """Plain Gauss-Newton solve; requires a nonsingular Hessian."""


@dataclass(frozen=True)
class Probabilistic:
    """Attenuate each eigencomponent by its non-degeneracy probability."""

    s: float = 10.0


@dataclass(frozen=True)
class EigenTruncate:
    """Invert only eigenvalues above lambda_min (truncated pseudo-inverse)."""

    lambda_min: float


@dataclass(frozen=True)
class SolutionRemap:
    """Solve the full system, then project onto eigenvectors above lambda_min."""

    lambda_min: float


@dataclass(frozen=True)
class ConditionNumber:
    """Drop eigencomponents whose condition number exceeds kappa_max."""

    kappa_max: float


SolverMethod = Union[Standard, Probabilistic, EigenTruncate, SolutionRemap, ConditionNumber]


@dataclass(frozen=True)
class UpdateSolution:
    """One solved update: twist, applied attenuation, diagnostics, information.

    probabilities holds the attenuation actually applied per eigencomponent
    (probabilities for the probabilistic method, 0/1 indicators for the
    threshold methods, ones for the standard solve). information is the
    inverse-covariance estimate (1/sigma_r^2) U diag(p*lambda) U^T in the
    frame the bundle was built in.
    """

    twist: Twist
    probabilities: Array
    reports: tuple[DirectionReport, ...]
    information: Array


@dataclass(frozen=True)
class FeatureStats:
    """Correspondence bookkeeping for one linearization."""

    candidates: int
    used: int
    rejected_distance: int
    rejected_collinear: int
    rejected_outlier: int
    residual_rms: float


@dataclass(frozen=True)
class IterationRecord:
    update: UpdateSolution
    stats: FeatureStats
    step_rot: float
    step_trans: float


@dataclass(frozen=True)
class RegistrationResult:
    """Final pose with its world-frame information matrix and per-iteration
    update summaries (iteration information matrices stay in the local frame
    of their linearization)."""

    pose: Pose
    information: Array
    iterations: list[IterationRecord]
    converged: bool
    termination: str


@dataclass(frozen=True)
class IcpConfig:
    """Controls for correspondence search, noise models and the solver.

    robust_cost None resolves to Geman-McClure with scale 3*sigma_p, or to a
    plain L2 kernel when sigma_p is zero.
    """

    method: SolverMethod = field(default_factory=Probabilistic)
    sigma_p: float = 0.01
    sigma_i: float = 0.01
    sigma_n_max: float = 0.10
    sigma_r: float = 0.015
    k_neighbors: int = 5
    max_iterations: int = 30
    translation_tol: float = 1e-4
    rotation_tol: float = 1e-4
    max_correspondence_distance: float = 1.0
    residual_weight: float = 1.0
    robust_cost: RobustCost | None = None

    def resolved_robust_cost(self) -> RobustCost:
        if self.robust_cost is not None:
            return self.robust_cost
        if self.sigma_p > 0.0:
            return RobustCost(RobustKind.GEMAN_MCCLURE, 3.0 * self.sigma_p)
        return RobustCost(RobustKind.L2)


def robust_weight(cost: RobustCost, u):
    """Residual attenuation w_rho at scaled residual magnitude u (scalar or
    array). L2 gives 1; Geman-McClure gives 1 / (1 + (u/scale)^2)."""
    u = np.asarray(u, dtype=np.float64)
    if cost.kind is RobustKind.L2:
        w = np.ones_like(u)
    else:
        w = 1.0 / (1.0 + (u / cost.scale) ** 2)
    return float(w) if w.ndim == 0 else w


def linearize(features: Sequence[PlaneFeature]) -> HessianBundle:
    """Accumulate point-to-plane features into the linearized system."""
    return accumulate(features)


def _gated_solve(vals: Array, vecs: Array, rhs: Array, gamma: Array) -> Array:
    """U diag(gamma_k / lambda_k) U^T rhs, zeroing numerically-zero eigenvalues."""
    safe = vals > _SINGULAR_EIG
    coef = np.where(safe & (gamma > 0.0), gamma / np.where(safe, vals, 1.0), 0.0)
    return vecs @ (coef * (vecs.T @ rhs))


def attenuated_update(hessian, rhs, probabilities) -> Array:
    """Update U diag(p_k / lambda_k) U^T rhs for an attenuation vector
    aligned with the descending eigenvalues of the Hessian."""
    h = np.asarray(hessian, dtype=np.float64).reshape(6, 6)
    g = np.asarray(rhs, dtype=np.float64).reshape(6)
    p = np.asarray(probabilities, dtype=np.float64).reshape(6)
    vals, vecs = _eigh_descending(h)
    return _gated_solve(vals, vecs, g, p)


def solve_update(
    bundle: HessianBundle,
    method: SolverMethod,
    sigma_r: float = 1.0,
    report_snr: float = 10.0,
) -> UpdateSolution:
    """Solve one update from an accumulated bundle with the chosen method.

    Degeneracy reports are always computed (they are O(N) diagnostics); the
    probabilistic method uses its own s, the others report at report_snr.
    """
    if bundle.size == 0:
        raise EmptyFeatureSet("cannot solve an empty bundle")
    vals, vecs = _eigh_descending(bundle.hessian)
    snr = method.s if isinstance(method, Probabilistic) else report_snr
    reports = _direction_reports(bundle, vals, vecs, snr)
    rhs = bundle.rhs

    if isinstance(method, Standard):
        if vals[-1] <= _SINGULAR_EIG:
            raise SingularHessian(f"smallest eigenvalue {vals[-1]:.3e} <= {_SINGULAR_EIG:.0e}")
        gamma = np.ones(6)
        x = vecs @ ((vecs.T @ rhs) / vals)
    elif isinstance(method, Probabilistic):
        gamma = np.array([r.probability for r in reports])
        x = _gated_solve(vals, vecs, rhs, gamma)
    elif isinstance(method, EigenTruncate):
        gamma = (vals > method.lambda_min).astype(np.float64)
        x = _gated_solve(vals, vecs, rhs, gamma)
    elif isinstance(method, ConditionNumber):
        gamma = ((vals > 0.0) & (vals * method.kappa_max >= vals[0])).astype(np.float64)
        x = _gated_solve(vals, vecs, rhs, gamma)
    elif isinstance(method, SolutionRemap):
        try:
            x_full = np.linalg.solve(bundle.hessian, rhs)
        except np.linalg.LinAlgError:
            x_full = np.linalg.lstsq(bundle.hessian, rhs, rcond=None)[0]
        gamma = (vals > method.lambda_min).astype(np.float64)
        x = vecs @ (gamma * (vecs.T @ x_full))
    else:
        raise TypeError(f"unknown solver method: {method!r}")

    info = (vecs * (gamma * vals)) @ vecs.T / sigma_r**2
    info = 0.5 * (info + info.T)
    return UpdateSolution(Twist.from_vector(x), gamma, tuple(reports), info)


def information_matrix(reports: Sequence[DirectionReport], sigma_r: float) -> Array:
    """Inverse-covariance estimate (1/sigma_r^2) sum_k p_k lambda_k u_k u_k^T
    built from direction reports."""
    if sigma_r <= 0.0:
        raise ValueError("sigma_r must be positive")
    total = np.zeros((6, 6))
    for r in reports:
        total += r.probability * r.signal * np.outer(r.direction, r.direction)
    return total / sigma_r**2


def extract_features(
    source,
    target,
    pose: Pose,
    config: IcpConfig,
    tree: cKDTree | None = None,
) -> tuple[HessianBundle, FeatureStats]:
    """Build sensor-frame plane features for one linearization.

    For every source point: transform by the pose, take the k nearest target
    points, fit a plane oriented toward the sensor, anchor its offset at the
    nearest target point, and keep the pair unless the nearest neighbor is too
    far, the patch is collinear, or the normal's worst-case standard deviation
    exceeds sigma_n_max. The surviving planes are pulled back into the sensor
    frame along with their normal noise covariances.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    tgt = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if src.shape[0] == 0 or tgt.shape[0] == 0:
        raise ValueError("source and target clouds must be nonempty")
    k = min(config.k_neighbors, tgt.shape[0])
    if k < 3:
        raise NoCorrespondences("target cloud too small for plane fitting")
    if tree is None:
        tree = cKDTree(tgt)

    p_world = pose.apply(src)
    dist, idx = tree.query(p_world, k=k)
    near = dist[:, 0] <= config.max_correspondence_distance
    candidates = src.shape[0]
    rejected_distance = int(np.sum(~near))
    if not np.any(near):
        raise NoCorrespondences("all correspondences beyond the distance limit")

    sel_idx = idx[near]
    batch = fit_planes(tgt[sel_idx], viewpoints=np.broadcast_to(pose.translation, (sel_idx.shape[0], 3)))
    usable = ~batch.collinear
    rejected_collinear = int(np.sum(batch.collinear))

    lam2 = batch.eigenvalues[:, 1]
    worst_var = np.full(lam2.shape, np.inf)
    np.divide(config.sigma_i**2 / k, lam2, out=worst_var, where=lam2 > 0.0)
    outlier = worst_var > config.sigma_n_max**2
    rejected_outlier = int(np.sum(usable & outlier))
    keep = usable & ~outlier
    if not np.any(keep):
        raise NoCorrespondences("no usable features after filtering")

    n_w = batch.normals[keep]
    rot_w = batch.rotations[keep]
    lam = batch.eigenvalues[keep]
    anchors = tgt[sel_idx[keep, 0]]
    d_w = np.einsum("mi,mi->m", n_w, anchors)
    residuals = np.einsum("mi,mi->m", n_w, p_world[near][keep]) - d_w

    cost = config.resolved_robust_cost()
    w_r = config.residual_weight
    weights = w_r * robust_weight(cost, np.abs(w_r * residuals))

    # Pull planes and noise models back into the sensor frame.
    n_l = n_w @ pose.rotation
    d_l = d_w - n_w @ pose.translation
    p_l = src[near][keep]

    # Rotation-perturbation covariance of each fitted normal: variance s/lam2
    # about the long in-plane axis, s/lam1 about the short one.
    s_fac = config.sigma_i**2 / k
    dvals = np.zeros((n_w.shape[0], 3))
    dvals[:, 0] = s_fac / lam[:, 1]
    dvals[:, 1] = s_fac / lam[:, 0]
    rot_cov_w = np.einsum("mij,mj,mkj->mik", rot_w, dvals, rot_w)
    rot_cov_l = np.einsum("ji,mjk,kl->mil", pose.rotation, rot_cov_w, pose.rotation)
    point_cov = config.sigma_p**2 * np.eye(3)

    bundle = accumulate_arrays(p_l, n_l, d_l, weights, point_cov, rot_cov_l)
    stats = FeatureStats(
        candidates=candidates,
        used=int(np.sum(keep)),
        rejected_distance=rejected_distance,
        rejected_collinear=rejected_collinear,
        rejected_outlier=rejected_outlier,
        residual_rms=float(np.sqrt(np.mean(residuals**2))),
    )
    return bundle, stats


def icp(source, target, init: Pose | None = None, config: IcpConfig | None = None) -> RegistrationResult:
    """Register a source cloud onto a target cloud.

    Each iteration linearizes in the current sensor frame, solves with the
    configured method and composes the local update on the right of the pose.
    Iteration stops when both twist norms fall below their tolerances or the
    iteration limit is reached. The final information matrix is conjugated to
    the world frame.
    """
    cfg = config if config is not None else IcpConfig()
    pose = init if init is not None else Pose.identity()
    tgt = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    tree = cKDTree(tgt)

    iterations: list[IterationRecord] = []
    info_local = np.zeros((6, 6))
    converged = False
    termination = "max-iterations"
    for _ in range(cfg.max_iterations):
        bundle, stats = extract_features(source, tgt, pose, cfg, tree=tree)
        sol = solve_update(bundle, cfg.method, sigma_r=cfg.sigma_r)
        pose = compose(pose, exp_se3(sol.twist))
        step_rot = float(np.linalg.norm(sol.twist.rot))
        step_trans = float(np.linalg.norm(sol.twist.trans))
        iterations.append(IterationRecord(sol, stats, step_rot, step_trans))
        info_local = sol.information
        if step_rot < cfg.rotation_tol and step_trans < cfg.translation_tol:
            converged = True
            termination = "converged"
            break

    m = frame_change_matrix(pose)
    info_world = m @ info_local @ m.T
    return RegistrationResult(
        pose=pose,
        information=0.5 * (info_world + info_world.T),
        iterations=iterations,
        converged=converged,
        termination=termination,
    )

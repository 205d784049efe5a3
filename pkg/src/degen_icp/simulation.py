"""Synthetic scenes with known degenerate directions, noise injection, and
Monte Carlo oracles for the analytic noise statistics.

Scenes are generated directly in the sensor frame with the sensor at the
origin, so feature vectors stay bounded by the scene scale. Each generated
point carries its exact tangent plane; the noise-free Hessian of a sample
annihilates the published null basis exactly.

Randomness: every operation takes an explicit 64-bit seed. Monte Carlo loops
split their seed into one child stream per fixed-size chunk of trials
(chunk size depends only on the feature count), so a parallel evaluation of
chunks reproduces the sequential result bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .degeneracy import PlaneFeature, accumulate_arrays
from .errors import InvalidDimensions, RequiresDegenerateScene
from .geometry import skew_batch
from .registration import Probabilistic, solve_update

__all__ = [
    "SceneKind",
    "SceneSpec",
    "SceneSample",
    "NoiseSpec",
    "SpuriousInfoReport",
    "generate_scene",
    "apply_noise",
    "noisy_feature_arrays",
    "mc_hessian_stats",
    "mc_direction_stats",
    "spurious_info_demo",
]

Array = NDArray[np.float64]

# Element budget per Monte Carlo chunk; keeps the (rows, N, 6) work arrays
# around 16 MB. Part of the determinism contract: the chunk row count is a
# pure function of the feature count.
_CHUNK_ELEMENTS = 2**21


class SceneKind(str, Enum):
    INFINITE_PLANE = "infinite-plane"
    CORRIDOR = "corridor"
    CYLINDER = "cylinder"
    CYLINDER_WITH_FLOOR = "cylinder-with-floor"
    ROOM = "room"


_DEFAULT_DIMENSIONS: dict[SceneKind, dict[str, float]] = {
    SceneKind.INFINITE_PLANE: {"size": 10.0, "drop": 1.5},
    SceneKind.CORRIDOR: {"length": 8.0, "width": 2.0, "height": 2.0},
    SceneKind.CYLINDER: {"radius": 8.0, "height": 16.0},
    SceneKind.CYLINDER_WITH_FLOOR: {"radius": 8.0, "height": 16.0},
    SceneKind.ROOM: {"width": 4.0, "depth": 3.0, "height": 2.5},
}


@dataclass(frozen=True)
class SceneSpec:
    """Scene selector with kind-specific dimensions (meters).

    Missing dimensions take per-kind defaults; unknown keys are rejected.
    """

    kind: SceneKind
    dimensions: Mapping[str, float] | None = None
    point_count: int = 2000
    seed: int = 0

    def resolved_dimensions(self) -> dict[str, float]:
        defaults = dict(_DEFAULT_DIMENSIONS[SceneKind(self.kind)])
        if self.dimensions:
            unknown = set(self.dimensions) - set(defaults)
            if unknown:
                raise InvalidDimensions(f"unknown dimensions for {self.kind}: {sorted(unknown)}")
            defaults.update({k: float(v) for k, v in self.dimensions.items()})
        if any(v <= 0.0 for v in defaults.values()):
            raise InvalidDimensions(f"dimensions must be positive, got {defaults}")
        return defaults


@dataclass(frozen=True)
class SceneSample:
    """Sampled surface points with exact per-point tangent planes.

    null_basis rows are unit 6-vectors ([rot; trans], sensor frame) spanning
    the null space of the noise-free Hessian.
    """

    points: Array         # (N, 3)
    normals: Array        # (N, 3)
    offsets: Array        # (N,)
    null_basis: Array     # (K, 6)
    sensor_origin: Array  # (3,)

    @property
    def true_planes(self) -> list[tuple[Array, float]]:
        """Distinct (normal, offset) pairs, rounded to 9 decimals."""
        rows = np.round(np.column_stack([self.normals, self.offsets]), 9)
        uniq = np.unique(rows, axis=0)
        return [(row[:3].copy(), float(row[3])) for row in uniq]


@dataclass(frozen=True)
class NoiseSpec:
    """Gaussian noise levels: sigma_p on points (m), sigma_n on normals
    (tangent-plane standard deviation, unitless)."""

    sigma_p: float
    sigma_n: float
    seed: int = 0


@dataclass(frozen=True)
class SpuriousInfoReport:
    """Outcome of the noise-induced-information diagnostic on a degenerate scene."""

    hessian_mean_rel_error: float
    noise_hessian: Array                 # (6, 6) predicted spurious information
    predicted_bias: Array                # (6,) least-norm bias solution
    null_basis: Array                    # (K, 6)
    standard_null_mean_abs: Array        # (K,)
    probabilistic_null_mean_abs: Array   # (K,)
    trials: int
    solve_trials: int


def _unit_rows(a: Array) -> Array:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def _null_rows(twists: Sequence[Sequence[float]]) -> Array:
    if not twists:
        return np.zeros((0, 6))
    return _unit_rows(np.asarray(twists, dtype=np.float64))


def generate_scene(spec: SceneSpec) -> SceneSample:
    """Sample points uniformly (by area) on the named surfaces.

    Deterministic for a given spec. Raises InvalidDimensions for nonpositive
    dimensions or point_count < 6.
    """
    if spec.point_count < 6:
        raise InvalidDimensions(f"point_count must be >= 6, got {spec.point_count}")
    kind = SceneKind(spec.kind)
    dims = spec.resolved_dimensions()
    rng = np.random.default_rng(spec.seed)

    surfaces: list[tuple[float, object]] = []  # (area, sampler(rng, m))

    def rect(axis: int, coord: float, extents: tuple[float, float], normal: Array):
        """Axis-aligned rectangle sampler: axis pinned at coord, the other two
        axes uniform in +-extents/2."""
        others = [i for i in range(3) if i != axis]

        def sample(r, m):
            pts = np.empty((m, 3))
            pts[:, axis] = coord
            pts[:, others[0]] = r.uniform(-extents[0] / 2.0, extents[0] / 2.0, m)
            pts[:, others[1]] = r.uniform(-extents[1] / 2.0, extents[1] / 2.0, m)
            nrm = np.broadcast_to(normal, (m, 3)).copy()
            off = np.full(m, float(normal @ np.eye(3)[axis]) * coord)
            return pts, nrm, off

        return sample

    ex, ey, ez = np.eye(3)
    if kind is SceneKind.INFINITE_PLANE:
        size, drop = dims["size"], dims["drop"]
        surfaces.append((size * size, rect(2, -drop, (size, size), ez)))
        null = [[0, 0, 1, 0, 0, 0], [0, 0, 0, 1, 0, 0], [0, 0, 0, 0, 1, 0]]
    elif kind is SceneKind.CORRIDOR:
        length, width, height = dims["length"], dims["width"], dims["height"]
        surfaces.append((length * height, rect(1, width / 2.0, (length, height), -ey)))
        surfaces.append((length * height, rect(1, -width / 2.0, (length, height), ey)))
        surfaces.append((length * width, rect(2, -height / 2.0, (length, width), ez)))
        null = [[0, 0, 0, 1, 0, 0]]
    elif kind in (SceneKind.CYLINDER, SceneKind.CYLINDER_WITH_FLOOR):
        radius, height = dims["radius"], dims["height"]

        def wall(r, m):
            theta = r.uniform(0.0, 2.0 * np.pi, m)
            pts = np.column_stack(
                [radius * np.cos(theta), radius * np.sin(theta), r.uniform(-height / 2.0, height / 2.0, m)]
            )
            nrm = -np.column_stack([np.cos(theta), np.sin(theta), np.zeros(m)])
            return pts, nrm, np.full(m, -radius)

        surfaces.append((2.0 * np.pi * radius * height, wall))
        if kind is SceneKind.CYLINDER_WITH_FLOOR:

            def floor(r, m):
                rho = radius * np.sqrt(r.uniform(0.0, 1.0, m))
                theta = r.uniform(0.0, 2.0 * np.pi, m)
                pts = np.column_stack([rho * np.cos(theta), rho * np.sin(theta), np.full(m, -height / 2.0)])
                return pts, np.broadcast_to(ez, (m, 3)).copy(), np.full(m, -height / 2.0)

            surfaces.append((np.pi * radius**2, floor))
            null = [[0, 0, 1, 0, 0, 0]]
        else:
            null = [[0, 0, 1, 0, 0, 0], [0, 0, 0, 0, 0, 1]]
    elif kind is SceneKind.ROOM:
        width, depth, height = dims["width"], dims["depth"], dims["height"]
        surfaces.append((depth * height, rect(0, width / 2.0, (depth, height), -ex)))
        surfaces.append((depth * height, rect(0, -width / 2.0, (depth, height), ex)))
        surfaces.append((width * height, rect(1, depth / 2.0, (width, height), -ey)))
        surfaces.append((width * height, rect(1, -depth / 2.0, (width, height), ey)))
        surfaces.append((width * depth, rect(2, height / 2.0, (width, depth), -ez)))
        surfaces.append((width * depth, rect(2, -height / 2.0, (width, depth), ez)))
        null = []
    else:  # pragma: no cover - enum is exhaustive
        raise InvalidDimensions(f"unknown scene kind {spec.kind}")

    areas = np.array([a for a, _ in surfaces])
    counts = rng.multinomial(spec.point_count, areas / areas.sum())
    pts, nrms, offs = [], [], []
    for (_, sampler), m in zip(surfaces, counts):
        if m == 0:
            continue
        p, n, d = sampler(rng, int(m))
        pts.append(p)
        nrms.append(n)
        offs.append(d)
    points = np.concatenate(pts)
    normals = np.concatenate(nrms)
    offsets = np.concatenate(offs)
    return SceneSample(points, normals, offsets, _null_rows(null), np.zeros(3))


def _tangent_basis(normals: Array) -> tuple[Array, Array]:
    """Orthonormal in-plane basis (t1, t2) per unit normal row."""
    ref = np.where(np.abs(normals[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    t1 = np.cross(normals, ref)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    return t1, np.cross(normals, t1)


def _perturb_normals(normals: Array, eta: Array, normal_model: str) -> Array:
    """Apply tangent rotational noise eta to unit normals.

    "rotation" applies the exact rotation (the result stays unit length);
    "small-angle" uses the first-order form n + cross(n, eta), whose norm
    deviates from 1 at second order in the noise.
    """
    if normal_model == "small-angle":
        return normals + np.cross(normals, eta)
    if normal_model == "rotation":
        theta = np.linalg.norm(eta, axis=-1, keepdims=True)
        return np.cos(theta) * normals + np.sinc(theta / np.pi) * np.cross(normals, eta)
    raise ValueError(f"unknown normal_model {normal_model!r}")


def noisy_feature_arrays(
    sample: SceneSample, noise: NoiseSpec, normal_model: str = "rotation"
) -> tuple[Array, Array, Array, Array, Array, Array]:
    """Draw one noise realization as plain arrays.

    Returns (points, normals, offsets, weights, point_cov, normal_covs) ready
    for accumulate_arrays. Deterministic and bit-stable for a given seed:
    a single stream draws point noise first, then tangent coefficients.
    """
    rng = np.random.default_rng(noise.seed)
    n_pts = sample.points.shape[0]
    eps = noise.sigma_p * rng.standard_normal((n_pts, 3))
    coeffs = noise.sigma_n * rng.standard_normal((n_pts, 2))
    t1, t2 = _tangent_basis(sample.normals)
    eta = coeffs[:, 0:1] * t1 + coeffs[:, 1:2] * t2

    points = sample.points + eps
    normals = _perturb_normals(sample.normals, eta, normal_model)
    unit = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    normal_covs = noise.sigma_n**2 * (np.eye(3) - np.einsum("ni,nj->nij", unit, unit))
    point_cov = noise.sigma_p**2 * np.eye(3)
    weights = np.ones(n_pts)
    return points, normals, sample.offsets.copy(), weights, point_cov, normal_covs


def apply_noise(sample: SceneSample, noise: NoiseSpec, normal_model: str = "rotation") -> list[PlaneFeature]:
    """Noisy features for a scene sample, with the matching noise covariances.

    Offsets stay at their true values (they play the role of map knowledge);
    per-feature covariances are sigma_p^2 I and the tangent-plane restriction
    of sigma_n^2 I around each drawn normal.
    """
    points, normals, offsets, weights, point_cov, normal_covs = noisy_feature_arrays(
        sample, noise, normal_model
    )
    return [
        PlaneFeature(
            point=points[i],
            normal=normals[i],
            offset=float(offsets[i]),
            weight=float(weights[i]),
            point_cov=point_cov,
            normal_cov=normal_covs[i],
        )
        for i in range(points.shape[0])
    ]


def _chunk_rows(n_features: int) -> int:
    return max(1, _CHUNK_ELEMENTS // max(n_features * 6, 1))


def _noisy_vectors(rng, points, normals, weights, t1, t2, sigma_p, sigma_n, rows, normal_model) -> Array:
    """One chunk of noisy feature vectors, shape (rows, N, 6).

    Draw order per chunk: point noise first, then tangent coefficients.
    """
    n_feat = points.shape[0]
    eps = sigma_p * rng.standard_normal((rows, n_feat, 3))
    coeffs = sigma_n * rng.standard_normal((rows, n_feat, 2))
    eta = coeffs[..., 0:1] * t1 + coeffs[..., 1:2] * t2
    p_hat = points + eps
    n_hat = _perturb_normals(normals, eta, normal_model)
    return weights[:, None] * np.concatenate([np.cross(p_hat, n_hat), n_hat], axis=-1)


def _mc_quadratic_stats(
    points: Array,
    normals: Array,
    weights: Array,
    sigma_p: float,
    sigma_n: float,
    directions: Array,
    trials: int,
    seed,
    normal_model: str = "small-angle",
) -> tuple[Array, Array]:
    """Monte Carlo mean and unbiased variance of u^T H_hat u per direction.

    directions is (6, D). Chunked Welford accumulation; chunk i uses the i-th
    child of the seed sequence, so chunk evaluation order cannot change the
    result.
    """
    if trials < 2:
        raise ValueError("trials must be >= 2")
    dirs = np.asarray(directions, dtype=np.float64).reshape(6, -1)
    t1, t2 = _tangent_basis(normals)
    rows = _chunk_rows(points.shape[0])
    n_chunks = (trials + rows - 1) // rows
    children = np.random.SeedSequence(seed).spawn(n_chunks)

    count = 0
    mean = np.zeros(dirs.shape[1])
    m2 = np.zeros(dirs.shape[1])
    done = 0
    for i in range(n_chunks):
        m = min(rows, trials - done)
        rng = np.random.default_rng(children[i])
        v = _noisy_vectors(rng, points, normals, weights, t1, t2, sigma_p, sigma_n, m, normal_model)
        proj = v @ dirs                      # (m, N, D)
        vals = np.sum(proj * proj, axis=1)   # (m, D)
        c_mean = vals.mean(axis=0)
        c_m2 = np.sum((vals - c_mean) ** 2, axis=0)
        delta = c_mean - mean
        total = count + m
        mean = mean + delta * (m / total)
        m2 = m2 + c_m2 + delta**2 * (count * m / total)
        count = total
        done += m
    return mean, m2 / (count - 1)


def _stack_true_feature_arrays(features: Sequence[PlaneFeature]) -> tuple[Array, Array, Array]:
    points = np.stack([np.asarray(f.point, dtype=np.float64) for f in features])
    normals = np.stack([np.asarray(f.normal, dtype=np.float64) for f in features])
    weights = np.array([f.weight for f in features], dtype=np.float64)
    return points, normals, weights


def mc_hessian_stats(
    features: Sequence[PlaneFeature],
    noise: NoiseSpec,
    u,
    trials: int,
    normal_model: str = "small-angle",
) -> tuple[float, float]:
    """Brute-force oracle: sample mean and unbiased sample variance of
    u^T H_hat u over independent noise draws on noise-free features.

    u is expected to be a unit 6-vector. The default normal model is the
    additive small-angle form, matching the model behind the closed-form
    statistics; the sampled vectors keep the full nonlinear product of noisy
    point and noisy normal.
    """
    points, normals, weights = _stack_true_feature_arrays(features)
    u = np.asarray(u, dtype=np.float64).reshape(6, 1)
    mean, var = _mc_quadratic_stats(
        points, normals, weights, noise.sigma_p, noise.sigma_n, u, trials, noise.seed, normal_model
    )
    return float(mean[0]), float(var[0])


def mc_direction_stats(
    features: Sequence[PlaneFeature],
    noise: NoiseSpec,
    directions,
    trials: int,
    normal_model: str = "small-angle",
) -> tuple[Array, Array]:
    """mc_hessian_stats for several direction columns (6, D) at once, sharing
    the same noise draws across directions."""
    points, normals, weights = _stack_true_feature_arrays(features)
    dirs = np.asarray(directions, dtype=np.float64).reshape(6, -1)
    return _mc_quadratic_stats(
        points, normals, weights, noise.sigma_p, noise.sigma_n, dirs, trials, noise.seed, normal_model
    )


def _nearest_on_plane_points(sample: SceneSample, anchors: Array) -> Array:
    """For each feature i, the generated point on plane i nearest anchors[i].

    Generated samples lie exactly on their planes, so this returns the point
    itself whenever the anchor is the perpendicular foot of an on-plane point.
    """
    res = np.abs(sample.normals @ sample.points.T - sample.offsets[:, None])  # (N, N)
    on_plane = res <= 1e-9
    d2 = np.sum((anchors[:, None, :] - sample.points[None, :, :]) ** 2, axis=2)
    d2 = np.where(on_plane, d2, np.inf)
    return sample.points[np.argmin(d2, axis=1)]


def spurious_info_demo(
    sample: SceneSample,
    sigma_n: float,
    trials: int,
    solve_trials: int = 256,
    s: float = 10.0,
    ridge: float = 1e-9,
    seed: int = 0,
) -> SpuriousInfoReport:
    """Quantify how normal noise alone manufactures information in null
    directions, and how much of it each solver lets through.

    With unit weights, zero point noise and isotropic tangent noise sigma_n
    on the normals, the expected noisy Hessian is H + H_N with
    H_N = sigma_n^2 * sum_i F_i (I - n n^T) F_i^T, F_i = [skew(p_i); I] w_i.
    The demo checks that identity by Monte Carlo over `trials` draws, then
    compares, over min(trials, solve_trials) paired draws, the mean absolute
    null-direction component of a ridge-regularized standard solve against
    the probabilistic solve. The report also carries the least-norm bias
    solution of the spurious system (zero for exactly on-plane samples).
    """
    if sample.null_basis.shape[0] == 0:
        raise RequiresDegenerateScene("the scene has no degenerate direction")
    points, normals, offsets = sample.points, sample.normals, sample.offsets
    n_feat = points.shape[0]
    weights = np.ones(n_feat)

    v = np.concatenate([np.cross(points, normals), normals], axis=1)
    hessian = v.T @ v
    f_mat = np.zeros((n_feat, 6, 3))
    f_mat[:, :3, :] = skew_batch(points)
    f_mat[:, 3:, :] = np.eye(3)
    proj = np.eye(3) - np.einsum("ni,nj->nij", normals, normals)
    h_noise = sigma_n**2 * np.einsum("nij,njk,nlk->il", f_mat, proj, f_mat)

    root = np.random.SeedSequence(seed)
    ss_mean, ss_solve = root.spawn(2)

    # Expectation identity by Monte Carlo (zero point noise).
    t1, t2 = _tangent_basis(normals)
    rows = _chunk_rows(n_feat)
    n_chunks = (trials + rows - 1) // rows
    children = ss_mean.spawn(n_chunks)
    acc = np.zeros((6, 6))
    done = 0
    for i in range(n_chunks):
        m = min(rows, trials - done)
        rng = np.random.default_rng(children[i])
        vv = _noisy_vectors(rng, points, normals, weights, t1, t2, 0.0, sigma_n, m, "small-angle")
        acc += np.einsum("mni,mnj->ij", vv, vv)
        done += m
    mean_h = acc / trials
    # Gauge the identity error against the predicted inflation; fall back to
    # the Hessian scale when the predicted inflation is zero (zero noise).
    denom = np.linalg.norm(h_noise)
    if denom == 0.0:
        denom = max(np.linalg.norm(hessian), np.finfo(float).tiny)
    rel_err = float(np.linalg.norm(mean_h - (hessian + h_noise)) / denom)

    # Least-norm bias of the spurious system; the on-plane anchor makes the
    # right-hand side vanish for generated samples.
    foot = points - (np.einsum("ni,ni->n", normals, points) - offsets)[:, None] * normals
    q = _nearest_on_plane_points(sample, foot)
    rhs_noise = sigma_n**2 * np.einsum("nij,njk,nk->i", f_mat, proj, q - points)
    predicted_bias = np.linalg.lstsq(h_noise, rhs_noise, rcond=None)[0]

    # Paired solves on a subsample of the draws.
    m_solves = min(trials, solve_trials)
    solve_children = ss_solve.spawn(m_solves)
    k_null = sample.null_basis.shape[0]
    abs_std = np.zeros(k_null)
    abs_prob = np.zeros(k_null)
    point_cov = np.zeros((3, 3))
    for i in range(m_solves):
        rng = np.random.default_rng(solve_children[i])
        coeffs = sigma_n * rng.standard_normal((n_feat, 2))
        eta = coeffs[:, 0:1] * t1 + coeffs[:, 1:2] * t2
        n_hat = normals + np.cross(normals, eta)
        unit = n_hat / np.linalg.norm(n_hat, axis=1, keepdims=True)
        normal_covs = sigma_n**2 * (np.eye(3) - np.einsum("ni,nj->nij", unit, unit))
        bundle = accumulate_arrays(points, n_hat, offsets, weights, point_cov, normal_covs)
        x_std = np.linalg.solve(bundle.hessian + ridge * np.eye(6), bundle.rhs)
        x_prob = solve_update(bundle, Probabilistic(s)).twist.vector()
        abs_std += np.abs(sample.null_basis @ x_std)
        abs_prob += np.abs(sample.null_basis @ x_prob)

    return SpuriousInfoReport(
        hessian_mean_rel_error=rel_err,
        noise_hessian=h_noise,
        predicted_bias=predicted_bias,
        null_basis=sample.null_basis.copy(),
        standard_null_mean_abs=abs_std / m_solves,
        probabilistic_null_mean_abs=abs_prob / m_solves,
        trials=trials,
        solve_trials=m_solves,
    )

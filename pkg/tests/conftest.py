"""Shared helpers for the test suite."""

import numpy as np

from degen_icp import PlaneFeature, Pose, exp_so3


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    return q


def random_pose(rng, rot_scale=0.5, trans_scale=1.0):
    return Pose(exp_so3(rot_scale * rng.standard_normal(3)), trans_scale * rng.standard_normal(3))


def rotation_angle(rotation):
    """Geodesic angle of a rotation matrix, radians."""
    return float(np.arccos(np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)))


def random_unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def random_feature_arrays(rng, count, scale=2.0, sigma_p=0.01, sigma_n=0.01, on_plane=True):
    """Random feature arrays for accumulate_arrays, with matching covariances.

    Normal covariances are the tangent-plane restriction of sigma_n^2 * I.
    """
    points = rng.uniform(-scale, scale, (count, 3))
    normals = rng.standard_normal((count, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    offsets = np.einsum("ni,ni->n", normals, points)
    if not on_plane:
        offsets = offsets + rng.normal(0.0, 0.05, count)
    weights = rng.uniform(0.5, 2.0, count)
    point_cov = sigma_p**2 * np.eye(3)
    normal_covs = sigma_n**2 * (np.eye(3) - np.einsum("ni,nj->nij", normals, normals))
    return points, normals, offsets, weights, point_cov, normal_covs


def random_feature_list(rng, count, **kwargs):
    points, normals, offsets, weights, point_cov, normal_covs = random_feature_arrays(
        rng, count, **kwargs
    )
    return [
        PlaneFeature(points[i], normals[i], float(offsets[i]), float(weights[i]), point_cov, normal_covs[i])
        for i in range(count)
    ]

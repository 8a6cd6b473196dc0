"""Shared helpers: random geometry, scene factories, and independent oracles.

Oracles here deliberately avoid the library's own code paths: polar
decomposition by Higham iteration, quaternion geodesics, Jacobi eigenvalues,
and brute-force scans.
"""

import numpy as np
import pytest

from anyview import (
    Intrinsics,
    LossConfig,
    OrbitTrajectory,
    PerturbSpec,
    SceneSpec,
    SphereSurface,
    ViewTarget,
    generate,
    perturb,
)
from anyview.errors import NonSmoothPoint
from anyview.geometry import Pose, so3_exp


def random_rotation(rng) -> np.ndarray:
    w = rng.normal(size=3)
    w = w / np.linalg.norm(w) * rng.uniform(0.1, np.pi - 0.1)
    return so3_exp(w)


def random_pose(rng, scale=1.0) -> Pose:
    return Pose(random_rotation(rng), rng.normal(size=3) * scale)


def higham_polar(m: np.ndarray, tol=1e-14, max_iter=100) -> np.ndarray:
    """Orthogonal polar factor via X <- (X + X^-T) / 2."""
    x = np.asarray(m, dtype=np.float64)
    for _ in range(max_iter):
        nxt = 0.5 * (x + np.linalg.inv(x).T)
        if np.abs(nxt - x).max() < tol:
            return nxt
        x = nxt
    return x


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) from a rotation matrix (Shepperd)."""
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(1.0 + r[i, i] - r[j, j] - r[k, k], 0.0)) * 2
        q = np.zeros(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    return q / np.linalg.norm(q)


def jacobi_eigenvalues(a: np.ndarray, sweeps=100) -> np.ndarray:
    """Classical Jacobi rotations for a symmetric matrix; returns sorted desc."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                off = max(off, abs(a[p, q]))
        if off < 1e-15:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-18:
                    continue
                theta = 0.5 * np.arctan2(2 * a[p, q], a[q, q] - a[p, p])
                c, s = np.cos(theta), np.sin(theta)
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
    return np.sort(np.diag(a))[::-1]


def brute_force_nn(query: np.ndarray, target: np.ndarray):
    d = np.linalg.norm(query[:, None, :] - target[None, :, :], axis=2)
    idx = d.argmin(axis=1)
    return idx, d[np.arange(len(query)), idx]


def default_intrinsics(size=32) -> Intrinsics:
    return Intrinsics(fx=size, fy=size, cx=size / 2, cy=size / 2, width=size, height=size)


def sphere_orbit_scene(n_views=4, size=32, seed=7):
    spec = SceneSpec(
        surface=SphereSurface(radius=1.0),
        trajectory=OrbitTrajectory(radius=3.0, n_views=n_views),
        intrinsics=default_intrinsics(size),
        seed=seed,
    )
    return generate(spec)


def targets_of(sample):
    return [
        ViewTarget(sample.gt_pointmaps[i], sample.valid[i], sample.gt_poses[i])
        for i in range(sample.n_views)
    ]


def noisy_preds(sample, seed, sigma=0.05, rot_deg=3.0, trans=0.05, scale=1.0, rigid=None):
    spec = PerturbSpec(
        point_noise_sigma=sigma,
        pose_rot_noise_deg=rot_deg,
        pose_trans_noise=trans,
        global_scale=scale,
        global_rigid=rigid,
    )
    return perturb(sample, spec, seed)


def sample_smooth_point(check, base_seed=0, attempts=30):
    """Retry a NonSmoothPoint-raising callable over fresh seeds."""
    for k in range(attempts):
        try:
            return check(base_seed + k)
        except NonSmoothPoint:
            continue
    pytest.fail("could not sample a smooth point")


@pytest.fixture(scope="session")
def small_scene():
    return sphere_orbit_scene(n_views=4, size=32, seed=7)


@pytest.fixture(scope="session")
def loss_cfg():
    return LossConfig()

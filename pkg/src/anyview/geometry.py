"""Rotation, pose, and similarity-transform algebra plus pinhole utilities.

All math in this module is double precision. Rotations are plain 3x3
ndarrays; rigid and similarity transforms are small frozen dataclasses.
Stored poses follow the camera-to-world convention throughout the package,
so a camera's center is its translation vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InvalidConfig

ROTATION_TOL = 1e-9


def _vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64).reshape(3)
    return v


def _mat3(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64).reshape(3, 3)
    return m


def is_rotation(m: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    """True if m is orthonormal with determinant +1 within tol."""
    m = _mat3(m)
    if not np.all(np.isfinite(m)):
        return False
    if np.abs(m.T @ m - np.eye(3)).max() > tol:
        return False
    return abs(np.linalg.det(m) - 1.0) <= tol


def rotation_from_9d(m) -> np.ndarray:
    """Project a 9-vector (row-major 3x3) onto the nearest rotation.

    Uses SVD orthogonalization: M = U S V^T maps to U diag(1,1,det(UV^T)) V^T,
    the closest proper rotation to M in Frobenius norm.
    """
    mat = np.asarray(m, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(mat)):
        raise DegenerateInput("non-finite 9D rotation encoding")
    u, s, vt = np.linalg.svd(mat)
    if s[-1] <= 1e-12:
        raise DegenerateInput(
            f"rank-deficient 9D rotation encoding (smallest singular value {s[-1]:.3e})"
        )
    d = np.linalg.det(u @ vt)
    return (u * np.array([1.0, 1.0, d])) @ vt


def geodesic_angle(r1: np.ndarray, r2: np.ndarray) -> float:
    """Angle of r1^T r2 in radians, in [0, pi]. Round-off is clamped away."""
    c = (np.trace(_mat3(r1).T @ _mat3(r2)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def so3_exp(w) -> np.ndarray:
    """Rodrigues' formula: axis-angle 3-vector to rotation matrix."""
    w = _vec3(w)
    theta = float(np.linalg.norm(w))
    k = np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )
    if theta < 1e-8:
        # second-order series keeps the result orthonormal to round-off
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _mat3(self.rotation).copy()
        t = _vec3(self.translation).copy()
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return Pose(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def relative_pose(ti: Pose, tj: Pose) -> Pose:
    """Pose of view j expressed in view i's frame: ti^-1 tj."""
    return ti.inverse() @ tj


@dataclass(frozen=True)
class Sim3:
    """Similarity transform: p -> scale * rotation @ p + translation."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        s = float(self.scale)
        if not (np.isfinite(s) and s > 0.0):
            raise InvalidConfig(f"Sim3 scale must be positive, got {s}")
        r = _mat3(self.rotation).copy()
        t = _vec3(self.translation).copy()
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Sim3":
        return Sim3(1.0, np.eye(3), np.zeros(3))

    @staticmethod
    def from_pose(pose: Pose) -> "Sim3":
        return Sim3(1.0, pose.rotation, pose.translation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Sim3":
        rt = self.rotation.T
        inv_s = 1.0 / self.scale
        return Sim3(inv_s, rt, -inv_s * (rt @ self.translation))

    def compose(self, other: "Sim3") -> "Sim3":
        # self after other: p -> self(other(p))
        return Sim3(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * (self.rotation @ other.translation) + self.translation,
        )

    def __matmul__(self, other: "Sim3") -> "Sim3":
        return self.compose(other)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def apply_pose(self, pose: Pose) -> Pose:
        """Gauge change of a camera-to-world pose under this similarity."""
        return Pose(
            self.rotation @ pose.rotation,
            self.scale * (self.rotation @ pose.translation) + self.translation,
        )


def apply_sim3(g: Sim3, points) -> np.ndarray:
    return g.apply(points)


def umeyama_sim3(src, dst, with_scale: bool = True) -> Sim3:
    """Closed-form least-squares similarity aligning src onto dst.

    Minimizes sum ||s R src_k + t - dst_k||^2 over (s, R, t); with_scale=False
    fixes s = 1. The scale is the classic variance-ratio formula
    trace(D S) / var(src). Requires the source covariance to have rank >= 2,
    otherwise the rotation is ambiguous.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise DegenerateInput(
            f"correspondence count mismatch: {src.shape[0]} vs {dst.shape[0]}"
        )
    n = src.shape[0]
    if n < 3:
        raise DegenerateInput(f"need at least 3 correspondences, got {n}")

    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d

    sv_src = np.linalg.svd(xs, compute_uv=False)
    rank = int(np.sum(sv_src > max(sv_src[0], 1e-300) * 1e-9))
    if rank < 2:
        raise DegenerateInput(f"source covariance rank {rank} < 2")

    cov = xd.T @ xs / n
    u, d, vt = np.linalg.svd(cov)
    sgn = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sgn[2] = -1.0
    r = (u * sgn) @ vt

    if with_scale:
        var_src = float((xs * xs).sum()) / n
        s = float((d * sgn).sum()) / var_src
        if not (np.isfinite(s) and s > 0):
            raise DegenerateInput(f"non-positive similarity scale {s}")
    else:
        s = 1.0
    t = mu_d - s * (r @ mu_s)
    return Sim3(s, r, t)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidConfig(f"focal lengths must be positive: {self.fx}, {self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise InvalidConfig(f"image size must be positive: {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidConfig(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )


def unproject(depth: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Lift a depth map to a camera-frame point map.

    point(u, v) = depth(u, v) * ((u - cx)/fx, (v - cy)/fy, 1); the z channel
    equals the input depth bit for bit. Non-finite depths propagate.
    """
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)
    xdir = (u - k.cx) / k.fx
    ydir = (v - k.cy) / k.fy
    pm = np.empty((h, w, 3), dtype=np.float64)
    pm[:, :, 0] = depth * xdir[None, :]
    pm[:, :, 1] = depth * ydir[:, None]
    pm[:, :, 2] = depth
    return pm


def camera_centers(poses) -> np.ndarray:
    """Stack camera centers of camera-to-world poses, shape (N, 3)."""
    return np.stack([p.translation for p in poses], axis=0)

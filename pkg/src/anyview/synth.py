"""Synthetic ground truth: analytic surfaces ray-cast through parametric
camera trajectories, plus controlled perturbation to fabricate predictions
with known error.

Poses are camera-to-world; point maps live in each camera's own frame, so
world points are pose(pointmap). Images are procedurally shaded from the
surface normal and position, which is all the toy network needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, NoIntersection
from .geometry import Intrinsics, Pose, so3_exp, unproject
from .losses import ViewPrediction

_RAY_EPS = 1e-12


@dataclass(frozen=True)
class PlaneSurface:
    normal: tuple = (0.0, 0.0, 1.0)
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if np.linalg.norm(n) < 1e-12:
            raise InvalidConfig("plane normal must be non-zero")
        object.__setattr__(self, "normal", tuple(float(v) for v in n / np.linalg.norm(n)))


@dataclass(frozen=True)
class SphereSurface:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidConfig(f"sphere radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class BoxRoomSurface:
    extents: tuple = (4.0, 4.0, 4.0)

    def __post_init__(self):
        if not all(e > 0 for e in self.extents):
            raise InvalidConfig(f"box extents must be positive, got {self.extents}")


@dataclass(frozen=True)
class OrbitTrajectory:
    radius: float = 3.0
    n_views: int = 4
    axis: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidConfig(f"orbit radius must be positive, got {self.radius}")
        if self.n_views < 1:
            raise InvalidConfig("n_views must be >= 1")
        a = np.asarray(self.axis, dtype=np.float64)
        if np.linalg.norm(a) < 1e-12:
            raise InvalidConfig("orbit axis must be non-zero")
        object.__setattr__(self, "axis", tuple(float(v) for v in a / np.linalg.norm(a)))


@dataclass(frozen=True)
class LineTrajectory:
    start: tuple = (0.0, 0.0, 0.0)
    step: tuple = (0.2, 0.0, 0.0)
    n_views: int = 4

    def __post_init__(self):
        if self.n_views < 1:
            raise InvalidConfig("n_views must be >= 1")


@dataclass(frozen=True)
class SceneSpec:
    surface: object
    trajectory: object
    intrinsics: Intrinsics
    seed: int = 0


@dataclass(frozen=True)
class PerturbSpec:
    point_noise_sigma: float = 0.0
    pose_rot_noise_deg: float = 0.0
    pose_trans_noise: float = 0.0
    global_scale: float = 1.0
    global_rigid: Pose | None = None

    def __post_init__(self):
        if self.point_noise_sigma < 0 or self.pose_rot_noise_deg < 0 or self.pose_trans_noise < 0:
            raise InvalidConfig("noise magnitudes must be non-negative")
        if not self.global_scale > 0:
            raise InvalidConfig(f"global_scale must be positive, got {self.global_scale}")


@dataclass
class SceneSample:
    images: np.ndarray  # (N, H, W, 3) in [0, 1]
    gt_poses: list  # camera-to-world
    gt_pointmaps: np.ndarray  # (N, H, W, 3), NaN where invalid
    valid: np.ndarray  # (N, H, W) bool
    intrinsics: Intrinsics
    spec: SceneSpec | None = field(default=None, repr=False)

    @property
    def n_views(self) -> int:
        return len(self.gt_poses)

    def depths(self) -> np.ndarray:
        return self.gt_pointmaps[..., 2]

    def world_points(self, view: int):
        m = self.valid[view]
        return self.gt_poses[view].apply(self.gt_pointmaps[view][m])


def _look_at(eye: np.ndarray, target: np.ndarray, up_hint: np.ndarray) -> Pose:
    """Camera-to-world pose with +z toward target, y roughly opposite up."""
    z = target - eye
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise InvalidConfig("camera eye coincides with look-at target")
    z = z / nz
    x = np.cross(z, up_hint)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        # forward parallel to up: pick any perpendicular
        alt = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        x = np.cross(z, alt)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


def trajectory_poses(traj) -> list:
    if isinstance(traj, OrbitTrajectory):
        axis = np.asarray(traj.axis)
        base = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
        u = np.cross(axis, base)
        u /= np.linalg.norm(u)
        v = np.cross(axis, u)
        poses = []
        for k in range(traj.n_views):
            phi = 2.0 * np.pi * k / traj.n_views
            eye = traj.radius * (np.cos(phi) * u + np.sin(phi) * v)
            poses.append(_look_at(eye, np.zeros(3), axis))
        return poses
    if isinstance(traj, LineTrajectory):
        start = np.asarray(traj.start, dtype=np.float64)
        step = np.asarray(traj.step, dtype=np.float64)
        return [Pose(np.eye(3), start + k * step) for k in range(traj.n_views)]
    raise InvalidConfig(f"unknown trajectory {type(traj).__name__}")


def _ray_depths(surface, origin: np.ndarray, dirs: np.ndarray):
    """Smallest positive depth parameter per ray plus the world hit normal.

    dirs has unit z in the camera parameterization, so the parameter is the
    camera-frame z depth. Returns (depth, normal, hit_mask).
    """
    flat = dirs.reshape(-1, 3)
    if isinstance(surface, PlaneSurface):
        n = np.asarray(surface.normal)
        denom = flat @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (surface.offset - origin @ n) / denom
        hit = (np.abs(denom) > _RAY_EPS) & (s > 0) & np.isfinite(s)
        normal = np.broadcast_to(n, flat.shape)
        return s, normal, hit

    if isinstance(surface, SphereSurface):
        c = np.asarray(surface.center)
        oc = origin - c
        a = (flat * flat).sum(axis=1)
        b = 2.0 * flat @ oc
        cc = float(oc @ oc) - surface.radius**2
        disc = b * b - 4.0 * a * cc
        root = np.sqrt(np.maximum(disc, 0.0))
        s1 = (-b - root) / (2.0 * a)
        s2 = (-b + root) / (2.0 * a)
        s = np.where(s1 > _RAY_EPS, s1, s2)
        hit = (disc >= 0) & (s > _RAY_EPS)
        pts = origin + s[:, None] * flat
        normal = (pts - c) / surface.radius
        return s, normal, hit

    if isinstance(surface, BoxRoomSurface):
        half = np.asarray(surface.extents) / 2.0
        best = np.full(flat.shape[0], np.inf)
        normal = np.zeros_like(flat)
        for axis in range(3):
            for sign in (-1.0, 1.0):
                denom = flat[:, axis]
                with np.errstate(divide="ignore", invalid="ignore"):
                    s = (sign * half[axis] - origin[axis]) / denom
                    pts = origin + s[:, None] * flat
                    inside = (np.abs(denom) > _RAY_EPS) & (s > _RAY_EPS)
                    others = [a for a in range(3) if a != axis]
                    for o in others:
                        inside &= np.abs(pts[:, o]) <= half[o] + 1e-9
                better = inside & (s < best)
                best[better] = s[better]
                normal[better] = 0.0
                normal[better, axis] = -sign  # walls face inward
        hit = np.isfinite(best)
        return np.where(hit, best, np.nan), normal, hit

    raise InvalidConfig(f"unknown surface {type(surface).__name__}")


def generate(spec: SceneSpec) -> SceneSample:
    """Ray-cast the scene: depth, point maps, validity, and shaded images."""
    k = spec.intrinsics
    poses = trajectory_poses(spec.trajectory)
    rng = np.random.default_rng(spec.seed)

    light = rng.normal(size=3)
    light /= np.linalg.norm(light)
    freq_a = rng.uniform(1.0, 4.0, size=3)
    freq_b = rng.uniform(1.0, 4.0, size=3)

    u = (np.arange(k.width) - k.cx) / k.fx
    v = (np.arange(k.height) - k.cy) / k.fy
    cam_dirs = np.stack(
        [
            np.broadcast_to(u[None, :], (k.height, k.width)),
            np.broadcast_to(v[:, None], (k.height, k.width)),
            np.ones((k.height, k.width)),
        ],
        axis=2,
    )

    n = len(poses)
    pointmaps = np.full((n, k.height, k.width, 3), np.nan)
    valid = np.zeros((n, k.height, k.width), dtype=bool)
    images = np.zeros((n, k.height, k.width, 3), dtype=np.float32)

    for i, pose in enumerate(poses):
        world_dirs = cam_dirs.reshape(-1, 3) @ pose.rotation.T
        depth, normal, hit = _ray_depths(spec.surface, pose.translation, world_dirs)
        if not np.any(hit):
            raise NoIntersection(f"view {i} sees no surface")
        depth_map = np.where(hit, depth, np.nan).reshape(k.height, k.width)
        pointmaps[i] = unproject(depth_map, k)
        valid[i] = hit.reshape(k.height, k.width)

        pts = pose.translation + depth[:, None] * world_dirs
        lam = 0.5 + 0.5 * (normal @ light)
        stripes = 0.5 + 0.5 * np.sin(pts @ freq_a)
        rings = 0.5 + 0.5 * np.cos(pts @ freq_b)
        shade = np.stack([lam, stripes, rings], axis=1)
        shade[~hit] = 0.0
        images[i] = np.clip(shade, 0.0, 1.0).reshape(k.height, k.width, 3).astype(np.float32)

    return SceneSample(images, poses, pointmaps, valid, k, spec)


def perturb(sample: SceneSample, p: PerturbSpec, seed: int,
            conf_epsilon: float = 0.05) -> list:
    """Fabricate predictions: noisy ground truth under a known global gauge.

    Gaussian noise corrupts points and poses, then the whole prediction is
    re-expressed under global_scale and global_rigid (point maps scale, poses
    compose), so the loss/metric gauge handling can be tested against known
    answers. Confidence logits encode whether the realized per-pixel error
    clears the threshold: saturated positive when clearly below epsilon,
    saturated negative when clearly above, 0 in the ambiguous band. The
    saturation is deep enough that correct pixels contribute ~0 BCE, keeping
    the zero-noise round trip at ~0 total loss.
    """
    rng = np.random.default_rng(seed)
    rigid = p.global_rigid if p.global_rigid is not None else Pose.identity()
    preds = []
    for i in range(sample.n_views):
        gt_pm = sample.gt_pointmaps[i]
        m = sample.valid[i]
        noise = rng.normal(0.0, p.point_noise_sigma, size=gt_pm.shape) if p.point_noise_sigma > 0 else np.zeros_like(gt_pm)
        pm = np.where(np.isfinite(gt_pm), gt_pm, 0.0) + noise
        pm *= p.global_scale

        pose = sample.gt_poses[i]
        if p.pose_rot_noise_deg > 0:
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = np.deg2rad(rng.normal(0.0, p.pose_rot_noise_deg))
            rot = so3_exp(angle * axis) @ pose.rotation
        else:
            rot = pose.rotation
        trans = pose.translation + (
            rng.normal(0.0, p.pose_trans_noise, size=3) if p.pose_trans_noise > 0 else 0.0
        )
        new_rot = rigid.rotation @ rot
        new_trans = p.global_scale * (rigid.rotation @ trans) + rigid.translation

        logits = np.zeros(m.shape)
        z = gt_pm[:, :, 2]
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.abs(noise).sum(axis=2) / z
        logits[m & (err < conf_epsilon / 2)] = 40.0
        logits[m & (err > 2 * conf_epsilon)] = -40.0

        preds.append(ViewPrediction(pm, logits, Pose(new_rot, new_trans)))
    return preds


def surface_from_dict(d: dict):
    kind = d.get("kind")
    args = {k: v for k, v in d.items() if k != "kind"}
    table = {"plane": PlaneSurface, "sphere": SphereSurface, "box_room": BoxRoomSurface}
    if kind not in table:
        raise InvalidConfig(f"unknown surface kind {kind!r}")
    for key in ("normal", "center", "extents"):
        if key in args:
            args[key] = tuple(args[key])
    return table[kind](**args)


def trajectory_from_dict(d: dict):
    kind = d.get("kind")
    args = {k: v for k, v in d.items() if k != "kind"}
    table = {"orbit": OrbitTrajectory, "line": LineTrajectory}
    if kind not in table:
        raise InvalidConfig(f"unknown trajectory kind {kind!r}")
    for key in ("axis", "start", "step"):
        if key in args:
            args[key] = tuple(args[key])
    return table[kind](**args)


def scene_spec_from_dict(d: dict) -> SceneSpec:
    try:
        intr = Intrinsics(**d["intrinsics"])
        return SceneSpec(
            surface=surface_from_dict(d["surface"]),
            trajectory=trajectory_from_dict(d["trajectory"]),
            intrinsics=intr,
            seed=int(d.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise InvalidConfig(f"bad scene spec: {exc}") from exc


def scene_spec_to_dict(spec: SceneSpec) -> dict:
    def plain(obj, kind):
        d = {"kind": kind}
        for key, val in vars(obj).items():
            d[key] = list(val) if isinstance(val, tuple) else val
        return d

    surf_kind = {"PlaneSurface": "plane", "SphereSurface": "sphere", "BoxRoomSurface": "box_room"}
    traj_kind = {"OrbitTrajectory": "orbit", "LineTrajectory": "line"}
    k = spec.intrinsics
    return {
        "surface": plain(spec.surface, surf_kind[type(spec.surface).__name__]),
        "trajectory": plain(spec.trajectory, traj_kind[type(spec.trajectory).__name__]),
        "intrinsics": {
            "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height,
        },
        "seed": spec.seed,
    }

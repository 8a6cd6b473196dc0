"""Evaluation suite: angular pose accuracy, trajectory errors, depth and
point-cloud metrics, the pose-spectrum analysis, and the reference-swap
robustness harness.

Conventions (recorded, not universal): AUC integrates integer-degree
thresholds 1..max_deg with strict inequality; ATE and RPE are RMSE values
with consecutive-frame deltas; trajectories are index-aligned camera-to-world
poses, so camera centers are the translations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import nearest_neighbors, solve_depth_scale, solve_depth_scale_shift
from .errors import (
    EmptyCloud,
    EmptyInput,
    InvalidConfig,
    LengthMismatch,
    NoValidPairs,
    TooFewViews,
)
from .geometry import Pose, Sim3, camera_centers, geodesic_angle, umeyama_sim3

_DEG = 180.0 / np.pi


@dataclass(frozen=True)
class PairError:
    rot_deg: float
    trans_deg: float


@dataclass(frozen=True)
class CloudMetrics:
    acc_mean: float
    acc_median: float
    comp_mean: float
    comp_median: float
    nc_mean: float
    nc_median: float

    def as_dict(self) -> dict:
        return {
            "acc_mean": self.acc_mean,
            "acc_median": self.acc_median,
            "comp_mean": self.comp_mean,
            "comp_median": self.comp_median,
            "nc_mean": self.nc_mean,
            "nc_median": self.nc_median,
        }


def _relative(ta: Pose, tb: Pose) -> tuple[np.ndarray, np.ndarray]:
    r = ta.rotation.T @ tb.rotation
    t = ta.rotation.T @ (tb.translation - ta.translation)
    return r, t


def _direction_angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    # degenerate directions: agree if both vanish, disagree maximally if one does
    if na < 1e-8 and nb < 1e-8:
        return 0.0
    if na < 1e-8 or nb < 1e-8:
        return 90.0
    c = float(np.dot(a / na, b / nb))
    return float(np.arccos(np.clip(c, -1.0, 1.0))) * _DEG


def pairwise_angular_errors(pred, gt) -> list[PairError]:
    """Rotation and translation-direction errors over all ordered pairs."""
    n = len(pred)
    if n < 2 or len(gt) != n:
        raise TooFewViews(f"need matching pose lists with >= 2 views, got {n}/{len(gt)}")
    errors = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            pr, pt = _relative(pred[i], pred[j])
            gr, gtt = _relative(gt[i], gt[j])
            errors.append(
                PairError(geodesic_angle(gr, pr) * _DEG, _direction_angle_deg(pt, gtt))
            )
    return errors


def accuracy_curve(errors, max_deg: int) -> np.ndarray:
    """acc(tau) for tau = 1..max_deg: fraction with max(rot, trans) < tau."""
    if not errors:
        raise EmptyInput("no pair errors")
    if max_deg < 1:
        raise InvalidConfig(f"max_deg must be >= 1, got {max_deg}")
    worst = np.array([max(e.rot_deg, e.trans_deg) for e in errors])
    taus = np.arange(1, max_deg + 1)
    return (worst[None, :] < taus[:, None]).mean(axis=1)


def auc_at(errors, max_deg: int) -> float:
    """Mean of the per-pair min(RRA, RTA) accuracy curve over 1..max_deg."""
    return float(accuracy_curve(errors, max_deg).mean())


def rra_at(errors, tau: float) -> float:
    if not errors:
        raise EmptyInput("no pair errors")
    return float(np.mean([e.rot_deg < tau for e in errors]))


def rta_at(errors, tau: float) -> float:
    if not errors:
        raise EmptyInput("no pair errors")
    return float(np.mean([e.trans_deg < tau for e in errors]))


def _align_trajectory(pred, gt) -> Sim3:
    return umeyama_sim3(camera_centers(pred), camera_centers(gt), with_scale=True)


def ate(pred, gt) -> float:
    """RMSE of camera centers after a Sim(3) alignment of the prediction."""
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} vs {len(gt)} poses")
    if len(pred) < 3:
        raise TooFewViews(f"ATE needs >= 3 poses, got {len(pred)}")
    g = _align_trajectory(pred, gt)
    res = g.apply(camera_centers(pred)) - camera_centers(gt)
    return float(np.sqrt((res * res).sum(axis=1).mean()))


def rpe(pred, gt) -> tuple[float, float]:
    """RMSE of consecutive relative-pose errors after the ATE alignment.

    Returns (translation RMSE in scene units, rotation RMSE in degrees).
    """
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} vs {len(gt)} poses")
    if len(pred) < 2:
        raise TooFewViews(f"RPE needs >= 2 poses, got {len(pred)}")
    if len(pred) >= 3:
        g = _align_trajectory(pred, gt)
        pred = [g.apply_pose(p) for p in pred]
    t_sq = []
    r_sq = []
    for k in range(len(pred) - 1):
        pr, pt = _relative(pred[k], pred[k + 1])
        gr, gtt = _relative(gt[k], gt[k + 1])
        err_r = gr.T @ pr
        err_t = gr.T @ (pt - gtt)
        t_sq.append(float(err_t @ err_t))
        ang = geodesic_angle(np.eye(3), err_r) * _DEG
        r_sq.append(ang * ang)
    return float(np.sqrt(np.mean(t_sq))), float(np.sqrt(np.mean(r_sq)))


def depth_metrics(pred: np.ndarray, gt: np.ndarray, mask=None,
                  align: str = "none") -> tuple[float, float]:
    """(Abs Rel, delta < 1.25) over valid pixels after the chosen alignment.

    align is one of none, scale (weighted-median L1), scale_shift (least
    squares). The threshold metric requires the aligned depth positive,
    which a shift alignment does not guarantee on its own.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    valid = valid & np.isfinite(pred) & np.isfinite(gt) & (gt > 0)
    if not np.any(valid):
        raise NoValidPairs("no valid depth pixel")

    if align == "scale":
        s = solve_depth_scale(pred, gt, valid)
        d = s * pred[valid]
    elif align == "scale_shift":
        s, b = solve_depth_scale_shift(pred, gt, valid)
        d = s * pred[valid] + b
    elif align == "none":
        d = pred[valid]
    else:
        raise InvalidConfig(f"unknown alignment {align!r}")

    g = gt[valid]
    abs_rel = float(np.mean(np.abs(d - g) / g))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(d / g, g / d)
    delta = float(np.mean((d > 0) & (ratio < 1.25)))
    return abs_rel, delta


def cloud_metrics(pred_points, gt_points, pred_normals=None, gt_normals=None) -> CloudMetrics:
    """Accuracy, completion, and normal consistency between two clouds.

    Accuracy measures prediction-to-truth nearest distances, completion the
    reverse. Normal consistency pools |n_a . n_b| at nearest pairs from both
    directions; pairs missing a (finite) normal are excluded, and the fields
    are NaN when no pair has normals.
    """
    pred_points = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    gt_points = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if pred_points.shape[0] == 0 or gt_points.shape[0] == 0:
        raise EmptyCloud("both clouds must be non-empty")

    idx_pg, dist_pg = nearest_neighbors(pred_points, gt_points)
    idx_gp, dist_gp = nearest_neighbors(gt_points, pred_points)

    nc_vals = []
    if pred_normals is not None and gt_normals is not None:
        pn = np.asarray(pred_normals, dtype=np.float64).reshape(-1, 3)
        gn = np.asarray(gt_normals, dtype=np.float64).reshape(-1, 3)
        for a, b in ((pn, gn[idx_pg]), (gn, pn[idx_gp])):
            ok = np.isfinite(a).all(axis=1) & np.isfinite(b).all(axis=1)
            if np.any(ok):
                nc_vals.append(np.abs((a[ok] * b[ok]).sum(axis=1)))
    if nc_vals:
        nc = np.concatenate(nc_vals)
        nc_mean, nc_median = float(nc.mean()), float(np.median(nc))
    else:
        nc_mean = nc_median = float("nan")

    return CloudMetrics(
        float(dist_pg.mean()), float(np.median(dist_pg)),
        float(dist_gp.mean()), float(np.median(dist_gp)),
        nc_mean, nc_median,
    )


def pose_spectrum(poses) -> np.ndarray:
    """Eigenvalues of the centered camera-center covariance, sorted
    descending and normalized to sum 1. Coincident centers yield zeros."""
    if len(poses) < 2:
        raise TooFewViews(f"spectrum needs >= 2 poses, got {len(poses)}")
    centers = camera_centers(poses)
    x = centers - centers.mean(axis=0)
    cov = x.T @ x / x.shape[0]
    vals = np.linalg.eigvalsh(cov)[::-1]
    vals = np.clip(vals, 0.0, None)
    total = vals.sum()
    scale = float(np.abs(x).max())
    if total <= (1e-15 * max(scale, 1.0)) ** 2:
        return np.zeros(3)
    return vals / total


def robustness_std(run, views) -> dict:
    """Reference-swap robustness: per-metric population std over N runs.

    For each k, view k is swapped into the first slot, `run` evaluates the
    reordered views into a flat metric dict (mapping its outputs back to the
    original indexing itself), and the spread of each metric is reported.
    """
    n = len(views)
    if n < 2:
        raise TooFewViews(f"robustness needs >= 2 views, got {n}")
    rows = []
    for k in range(n):
        order = list(range(n))
        order[0], order[k] = order[k], order[0]
        rows.append(run([views[i] for i in order]))
    keys = rows[0].keys()
    return {key: float(np.std([row[key] for row in rows])) for key in keys}

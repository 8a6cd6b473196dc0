"""Gauge-removal solvers: robust scale, depth scale/shift, and Sim(3)+ICP.

The scale solver minimizes the depth-weighted L1 misfit
f(s) = sum_k w_k |s a_k - b_k| over s > 0 exactly. Each term with a_k != 0
is w_k |a_k| |s - b_k/a_k|, so f is piecewise linear in s with breakpoints at
the ratios; the minimizer is the weighted median of the positive ratios once
mass from non-positive ratios is pre-accumulated (those terms only grow with
s on s > 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInput, EmptyTarget, InvalidConfig, NoValidPairs
from .geometry import Sim3, umeyama_sim3

ZERO_COEF_TOL = 1e-12


@dataclass(frozen=True)
class ScaleProblem:
    """Flat coordinate-wise data for the weighted L1 scale fit.

    pred holds the a_k, gt the b_k, weight the per-coordinate positive
    weights (depth reciprocals replicated per coordinate in the loss usage).
    """

    pred: np.ndarray
    gt: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.pred, dtype=np.float64).ravel()
        b = np.asarray(self.gt, dtype=np.float64).ravel()
        w = np.asarray(self.weight, dtype=np.float64).ravel()
        if not (a.shape == b.shape == w.shape):
            raise InvalidConfig(
                f"scale problem length mismatch: {a.shape}, {b.shape}, {w.shape}"
            )
        if a.size and not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise InvalidConfig("weights must be finite and positive")
        object.__setattr__(self, "pred", a)
        object.__setattr__(self, "gt", b)
        object.__setattr__(self, "weight", w)


def scale_objective(p: ScaleProblem, s) -> np.ndarray:
    """Evaluate f(s) = sum_k w_k |s a_k - b_k| for scalar or vector s."""
    s = np.asarray(s, dtype=np.float64)
    vals = np.abs(np.multiply.outer(s, p.pred) - p.gt) * p.weight
    return vals.sum(axis=-1)


def solve_scale_weighted_l1(p: ScaleProblem) -> float:
    """Exact positive minimizer of the weighted L1 scale objective.

    Candidates are the ratios b_k/a_k with masses w_k |a_k|; coefficients
    with |a_k| <= 1e-12 contribute constant terms and are dropped. At an
    exact half-mass tie the lower candidate is returned.
    """
    live = np.abs(p.pred) > ZERO_COEF_TOL
    a = p.pred[live]
    b = p.gt[live]
    w = p.weight[live]
    if a.size == 0:
        raise NoValidPairs("no coordinate with |pred| > 1e-12")
    ratios = b / a
    masses = w * np.abs(a)

    pos = ratios > 0
    if not np.any(pos):
        raise NoValidPairs("no positive ratio candidate")

    total = masses.sum()
    base = masses[~pos].sum()  # mass left of any s > 0

    r = ratios[pos]
    m = masses[pos]
    order = np.argsort(r, kind="stable")
    r = r[order]
    m = m[order]
    cum = base + np.cumsum(m)
    idx = int(np.searchsorted(cum, 0.5 * total, side="left"))
    if idx >= r.size:
        idx = r.size - 1
    return float(r[idx])


def solve_depth_scale(pred: np.ndarray, gt: np.ndarray, mask=None) -> float:
    """Weighted-median L1 depth scale over valid pixels, weight 1/gt."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    valid = valid & np.isfinite(pred) & np.isfinite(gt) & (gt > 0)
    if not np.any(valid):
        raise NoValidPairs("no valid pixel with gt > 0")
    g = gt[valid]
    return solve_scale_weighted_l1(ScaleProblem(pred[valid], g, 1.0 / g))


def solve_depth_scale_shift(pred: np.ndarray, gt: np.ndarray, mask=None) -> tuple[float, float]:
    """Least-squares (scale, shift) minimizing sum (s*pred + b - gt)^2."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    valid = valid & np.isfinite(pred) & np.isfinite(gt)
    n = int(valid.sum())
    if n < 2:
        raise NoValidPairs(f"need >= 2 valid pixels, got {n}")
    x = pred[valid]
    y = gt[valid]
    var = float(x.var())
    if var <= 1e-12 * max(1.0, float(np.abs(x).max()) ** 2):
        raise DegenerateInput("prediction is constant over the mask")
    mx = x.mean()
    my = y.mean()
    s = float(((x - mx) * (y - my)).sum() / ((x - mx) ** 2).sum())
    b = float(my - s * mx)
    return s, b


def nearest_neighbors(query, target) -> tuple[np.ndarray, np.ndarray]:
    """Index and Euclidean distance of each query point's nearest target.

    Exact ties resolve to the smallest target index. Distances are
    recomputed as ||q - target[idx]|| so they match a brute-force scan
    bit for bit.
    """
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if target.shape[0] == 0:
        raise EmptyTarget("nearest-neighbor target is empty")
    if query.shape[0] == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0)

    tree = cKDTree(target, leafsize=16)
    if target.shape[0] == 1:
        idx = np.zeros(query.shape[0], dtype=np.intp)
    else:
        dd, ii = tree.query(query, k=2)
        idx = ii[:, 0].astype(np.intp)
        # exact two-way ties: pick the smaller index; wider ties via ball query
        tied = dd[:, 0] == dd[:, 1]
        if np.any(tied):
            for q in np.nonzero(tied)[0]:
                cand = tree.query_ball_point(query[q], dd[q, 0] * (1.0 + 1e-12))
                d2 = ((target[cand] - query[q]) ** 2).sum(axis=1)
                best = d2.min()
                idx[q] = min(c for c, d in zip(cand, d2) if d == best)
    dist = np.linalg.norm(query - target[idx], axis=1)
    return idx, dist


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-9
    max_correspondence_dist: float = np.inf

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidConfig(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.convergence_tol > 0:
            raise InvalidConfig("convergence_tol must be positive")
        if not self.max_correspondence_dist > 0:
            raise InvalidConfig("max_correspondence_dist must be positive")


def icp_refine(src, dst, init: Sim3, cfg: IcpConfig | None = None,
               history: list | None = None) -> Sim3:
    """Rigid ICP refinement of a coarse Sim(3); the scale stays at init's.

    Alternates nearest-neighbor correspondences (kd-tree) with a rigid
    Umeyama refit on the scaled source. Updates are only accepted while the
    re-matched mean correspondence distance does not increase, so the
    recorded per-iteration means are non-increasing and the result is never
    worse than init.
    """
    if cfg is None:
        cfg = IcpConfig()
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape[0] < 3 or dst.shape[0] < 3:
        raise DegenerateInput("ICP needs at least 3 points per cloud")

    tree = cKDTree(dst, leafsize=16)
    scaled = init.scale * src

    def match(g: Sim3):
        moved = g.apply(src)
        dist, idx = tree.query(moved)
        keep = dist <= cfg.max_correspondence_dist
        if keep.sum() < 3:
            raise DegenerateInput("fewer than 3 correspondences within range")
        return idx, keep, float(dist[keep].mean())

    current = init
    idx, keep, mean_dist = match(current)
    if history is not None:
        history.append(mean_dist)

    for _ in range(cfg.max_iterations):
        rigid = umeyama_sim3(scaled[keep], dst[idx[keep]], with_scale=False)
        candidate = Sim3(init.scale, rigid.rotation, rigid.translation)
        c_idx, c_keep, c_mean = match(candidate)
        if c_mean > mean_dist:
            break
        improved = mean_dist - c_mean
        current, idx, keep = candidate, c_idx, c_keep
        prev = mean_dist
        mean_dist = c_mean
        if history is not None:
            history.append(mean_dist)
        if improved <= cfg.convergence_tol * max(prev, 1e-300):
            break
    return current

"""Scale-invariant training objective and its analytic gradients.

Components: depth-weighted L1 point loss with an absorbed scene scale,
grid-normal angular loss, confidence BCE against thresholded reconstruction
error, and a relative-camera loss (geodesic rotation + scale-rectified
Huber translation) over all ordered view pairs. The composite is

    total = points + ln * normal + lc * conf + lcam * (rot + lt * trans)

All sums are normalized: point/normal/conf terms by their valid-pixel
counts and camera terms by N(N-1), so magnitudes do not depend on
resolution or view count. The absorbed scale is treated as a constant in
all gradients (envelope convention at the weighted-median plateau).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import ScaleProblem, solve_scale_weighted_l1
from .errors import InvalidConfig, NonSmoothPoint, NoValidPairs, ShapeTooSmall, TooFewViews
from .geometry import Pose

# residuals below this (scaled) threshold count as sitting exactly on an L1
# kink: subgradient 0 there, and finite differences are symmetric
_EXACT_KINK_REL = 1e-12
# |dot| or geodesic cosine beyond this counts as exact alignment (gradient 0)
_ALIGNED_TOL = 1e-12


@dataclass(frozen=True)
class LossConfig:
    lambda_trans: float = 1.0
    lambda_normal: float = 1.0
    lambda_conf: float = 0.1
    lambda_cam: float = 1.0
    huber_delta: float = 1.0
    conf_epsilon: float = 0.05

    def __post_init__(self):
        if not self.lambda_trans > 0:
            raise InvalidConfig("lambda_trans must be positive")
        if not self.huber_delta > 0:
            raise InvalidConfig("huber_delta must be positive")
        if not self.conf_epsilon > 0:
            raise InvalidConfig("conf_epsilon must be positive")
        for name in ("lambda_normal", "lambda_conf", "lambda_cam"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be non-negative")


@dataclass(frozen=True)
class ViewPrediction:
    pointmap: np.ndarray  # (H, W, 3)
    conf_logits: np.ndarray  # (H, W)
    pose: Pose

    def __post_init__(self):
        pm = np.asarray(self.pointmap, dtype=np.float64)
        cl = np.asarray(self.conf_logits, dtype=np.float64)
        if pm.ndim != 3 or pm.shape[2] != 3 or cl.shape != pm.shape[:2]:
            raise InvalidConfig(f"inconsistent prediction shapes {pm.shape}, {cl.shape}")
        object.__setattr__(self, "pointmap", pm)
        object.__setattr__(self, "conf_logits", cl)


@dataclass(frozen=True)
class ViewTarget:
    pointmap: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool
    pose: Pose

    def __post_init__(self):
        pm = np.asarray(self.pointmap, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if pm.ndim != 3 or pm.shape[2] != 3 or valid.shape != pm.shape[:2]:
            raise InvalidConfig(f"inconsistent target shapes {pm.shape}, {valid.shape}")
        object.__setattr__(self, "pointmap", pm)
        object.__setattr__(self, "valid", valid)


@dataclass(frozen=True)
class LossReport:
    total: float
    points: float
    normal: float
    conf: float
    cam_rot: float
    cam_trans: float
    s_star: float

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "points": self.points,
            "normal": self.normal,
            "conf": self.conf,
            "cam_rot": self.cam_rot,
            "cam_trans": self.cam_trans,
            "s_star": self.s_star,
        }


def grid_normals(pm: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit surface normals from a point-map grid.

    normal = normalize(d_u x d_v) with central differences along columns
    (d_u) and rows (d_v), one-sided at borders. A pixel's normal is valid
    only if every stencil pixel is valid and the cross product is not
    degenerate.
    """
    pm = np.asarray(pm, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    h, w = valid.shape
    if h < 2 or w < 2:
        raise ShapeTooSmall(f"grid normals need at least 2x2, got {h}x{w}")

    with np.errstate(invalid="ignore"):
        du = np.gradient(pm, axis=1)
        dv = np.gradient(pm, axis=0)
        cross = np.cross(du, dv)
        norm = np.linalg.norm(cross, axis=2)

    sv = valid & _stencil_valid(valid)
    nvalid = sv & np.isfinite(norm) & (norm >= 1e-12)
    normals = np.zeros_like(pm)
    np.divide(cross, norm[:, :, None], out=normals, where=nvalid[:, :, None])
    return normals, nvalid


def _stencil_valid(valid: np.ndarray) -> np.ndarray:
    """Pixels whose full difference stencil lies on valid pixels."""

    def axis_ok(v, axis):
        v = np.moveaxis(v, axis, 0)
        ok = np.empty_like(v)
        ok[0] = v[0] & v[1]
        ok[-1] = v[-1] & v[-2]
        if v.shape[0] > 2:
            ok[1:-1] = v[:-2] & v[2:]
        return np.moveaxis(ok, 0, axis)

    return axis_ok(valid, 1) & axis_ok(valid, 0)


def _gradient_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of np.gradient along one axis (central, one-sided at ends)."""
    g = np.moveaxis(g, axis, 0)
    out = np.zeros_like(g)
    out[1] += g[0]
    out[0] -= g[0]
    out[-1] += g[-1]
    out[-2] -= g[-1]
    if g.shape[0] > 2:
        out[2:] += 0.5 * g[1:-1]
        out[:-2] -= 0.5 * g[1:-1]
    return np.moveaxis(out, 0, axis)


def _pooled_scale_problem(preds, targets) -> tuple[ScaleProblem, int]:
    a, b, w = [], [], []
    n_pix = 0
    for pred, tgt in zip(preds, targets):
        m = tgt.valid
        n_pix += int(m.sum())
        z = tgt.pointmap[:, :, 2][m]
        a.append(pred.pointmap[m].ravel())
        b.append(tgt.pointmap[m].ravel())
        w.append(np.repeat(1.0 / z, 3))
    if n_pix == 0:
        raise NoValidPairs("no valid pixel in any view")
    return ScaleProblem(np.concatenate(a), np.concatenate(b), np.concatenate(w)), n_pix


def loss_points(preds, targets) -> tuple[float, float]:
    """Depth-weighted L1 point loss with one scene-wide absorbed scale.

    Returns (value, s_star) where s_star is the exact weighted-median scale
    and value is the scaled L1 misfit averaged over valid pixels.
    """
    problem, n_pix = _pooled_scale_problem(preds, targets)
    s = solve_scale_weighted_l1(problem)
    value = float((problem.weight * np.abs(s * problem.pred - problem.gt)).sum() / n_pix)
    return value, s


def loss_normal(preds, targets) -> float:
    """Mean angle between predicted and ground-truth grid normals."""
    total = 0.0
    count = 0
    for pred, tgt in zip(preds, targets):
        pn, pv = grid_normals(pred.pointmap, tgt.valid)
        gn, gv = grid_normals(tgt.pointmap, tgt.valid)
        joint = pv & gv
        if not np.any(joint):
            continue
        dots = np.clip((pn[joint] * gn[joint]).sum(axis=1), -1.0, 1.0)
        total += float(np.arccos(dots).sum())
        count += int(joint.sum())
    if count == 0:
        raise NoValidPairs("no jointly valid normal pixel")
    return total / count


def conf_targets(preds, targets, s_star: float, epsilon: float) -> list[np.ndarray]:
    """Binary confidence targets: 1 where the scaled L1 error is under epsilon.

    The comparison is strict, so an error exactly at epsilon maps to 0.
    Invalid pixels get target 0 but are excluded from the loss by the mask.
    """
    if not s_star > 0:
        raise InvalidConfig(f"s_star must be positive, got {s_star}")
    out = []
    for pred, tgt in zip(preds, targets):
        err = _pixel_errors(pred, tgt, s_star)
        t = np.zeros(tgt.valid.shape, dtype=np.float64)
        t[tgt.valid] = (err[tgt.valid] < epsilon).astype(np.float64)
        out.append(t)
    return out


def _pixel_errors(pred: ViewPrediction, tgt: ViewTarget, s_star: float) -> np.ndarray:
    """Per-pixel depth-weighted L1 reconstruction error (zero where invalid)."""
    err = np.zeros(tgt.valid.shape, dtype=np.float64)
    m = tgt.valid
    z = tgt.pointmap[:, :, 2][m]
    err[m] = np.abs(s_star * pred.pointmap[m] - tgt.pointmap[m]).sum(axis=1) / z
    return err


def loss_conf(logits: np.ndarray, targets_binary: np.ndarray, valid: np.ndarray) -> float:
    """Numerically stable mean BCE on logits over valid pixels."""
    logits = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets_binary, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if logits.shape != t.shape or logits.shape != valid.shape:
        raise InvalidConfig("BCE shape mismatch")
    if not np.any(valid):
        raise NoValidPairs("no valid pixel for confidence loss")
    x = logits[valid]
    tt = t[valid]
    vals = np.maximum(x, 0.0) - x * tt + np.log1p(np.exp(-np.abs(x)))
    return float(vals.mean())


def _huber(r: float, delta: float) -> float:
    if r <= delta:
        return 0.5 * r * r
    return delta * (r - 0.5 * delta)


def loss_cam(pred_poses, gt_poses, s_star: float, cfg: LossConfig) -> tuple[float, float]:
    """Relative-pose supervision over all ordered pairs i != j.

    Rotation term: geodesic angle between predicted and ground-truth
    relative rotations. Translation term: Huber of the Euclidean norm of
    s_star * t_rel_pred - t_rel_gt. Both are averaged by 1 / (N (N - 1));
    the caller combines them as rot + lambda_trans * trans.
    """
    n = len(pred_poses)
    if n < 2:
        raise TooFewViews(f"camera loss needs >= 2 views, got {n}")
    if not s_star > 0:
        raise InvalidConfig(f"s_star must be positive, got {s_star}")
    rot_sum = 0.0
    trans_sum = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            pr, pt = _relative(pred_poses[i], pred_poses[j])
            gr, gt_t = _relative(gt_poses[i], gt_poses[j])
            c = (np.trace(gr.T @ pr) - 1.0) / 2.0
            rot_sum += float(np.arccos(np.clip(c, -1.0, 1.0)))
            trans_sum += _huber(float(np.linalg.norm(s_star * pt - gt_t)), cfg.huber_delta)
    k = n * (n - 1)
    return rot_sum / k, trans_sum / k


def _relative(ta: Pose, tb: Pose) -> tuple[np.ndarray, np.ndarray]:
    r = ta.rotation.T @ tb.rotation
    t = ta.rotation.T @ (tb.translation - ta.translation)
    return r, t


def total_loss(preds, targets, cfg: LossConfig, fixed_scale: float | None = None) -> LossReport:
    """Composite loss; fixed_scale overrides the solved scene scale."""
    preds = list(preds)
    targets = list(targets)
    if len(preds) != len(targets):
        raise InvalidConfig(f"{len(preds)} predictions vs {len(targets)} targets")

    if fixed_scale is None:
        points, s_star = loss_points(preds, targets)
    else:
        s_star = float(fixed_scale)
        problem, n_pix = _pooled_scale_problem(preds, targets)
        points = float(
            (problem.weight * np.abs(s_star * problem.pred - problem.gt)).sum() / n_pix
        )

    normal = loss_normal(preds, targets) if cfg.lambda_normal != 0.0 else 0.0

    if cfg.lambda_conf != 0.0:
        tgts = conf_targets(preds, targets, s_star, cfg.conf_epsilon)
        logits = np.stack([p.conf_logits for p in preds])
        binary = np.stack(tgts)
        valid = np.stack([t.valid for t in targets])
        conf = loss_conf(logits, binary, valid)
    else:
        conf = 0.0

    if cfg.lambda_cam != 0.0 and len(preds) >= 2:
        cam_rot, cam_trans = loss_cam(
            [p.pose for p in preds], [t.pose for t in targets], s_star, cfg
        )
    else:
        cam_rot, cam_trans = 0.0, 0.0

    total = (
        points
        + cfg.lambda_normal * normal
        + cfg.lambda_conf * conf
        + cfg.lambda_cam * (cam_rot + cfg.lambda_trans * cam_trans)
    )
    return LossReport(total, points, normal, conf, cam_rot, cam_trans, s_star)


@dataclass
class LossGradients:
    """Gradients of the composite loss w.r.t. each prediction field.

    Rotation gradients are w.r.t. a left axis-angle perturbation
    exp([w]x) R applied to each predicted rotation.
    """

    pointmaps: list
    conf_logits: list
    translations: list
    rotations: list
    s_star: float


def _sign_dead(x: np.ndarray, tol: np.ndarray) -> np.ndarray:
    s = np.sign(x)
    s[np.abs(x) <= tol] = 0.0
    return s


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[1, 2] - m[2, 1], m[2, 0] - m[0, 2], m[0, 1] - m[1, 0]])


def grad_total_loss(preds, targets, cfg: LossConfig, *, margin: float = 1e-6,
                    fixed_scale: float | None = None) -> LossGradients:
    """Analytic gradients of total_loss at a smooth point.

    The absorbed scale is held constant (envelope convention). Raises
    NonSmoothPoint when any loss term sits within `margin` of a kink:
    L1 residuals near (but not at) zero, normal or geodesic cosines near
    +/-1, Huber radii near delta, or pixel errors near the confidence
    threshold. Exact kinks (residual ~0, exactly aligned normals or
    rotations) are smooth under symmetric differences and get gradient 0.
    """
    preds = list(preds)
    targets = list(targets)
    n = len(preds)
    if n != len(targets):
        raise InvalidConfig(f"{n} predictions vs {len(targets)} targets")

    problem, n_pix = _pooled_scale_problem(preds, targets)
    s_star = solve_scale_weighted_l1(problem) if fixed_scale is None else float(fixed_scale)

    g_pm = [np.zeros_like(p.pointmap) for p in preds]
    g_cl = [np.zeros_like(p.conf_logits) for p in preds]
    g_t = [np.zeros(3) for _ in preds]
    g_r = [np.zeros(3) for _ in preds]

    # --- point loss ---
    for i, (pred, tgt) in enumerate(zip(preds, targets)):
        m = tgt.valid
        res = s_star * pred.pointmap[m] - tgt.pointmap[m]
        zero_tol = _EXACT_KINK_REL * (1.0 + np.abs(tgt.pointmap[m]))
        bad = (np.abs(res) > zero_tol) & (np.abs(res) < margin)
        if np.any(bad):
            raise NonSmoothPoint(
                f"L1 point residual within {margin} of a kink in view {i}"
            )
        w = (1.0 / tgt.pointmap[:, :, 2][m])[:, None]
        g_pm[i][m] += (s_star / n_pix) * w * _sign_dead(res, zero_tol)

    # --- normal loss ---
    if cfg.lambda_normal != 0.0:
        caches = []
        count = 0
        for i, (pred, tgt) in enumerate(zip(preds, targets)):
            with np.errstate(invalid="ignore"):
                du = np.gradient(pred.pointmap, axis=1)
                dv = np.gradient(pred.pointmap, axis=0)
                cross = np.cross(du, dv)
                norm = np.linalg.norm(cross, axis=2)
            sv = tgt.valid & _stencil_valid(tgt.valid)
            pv = sv & np.isfinite(norm) & (norm >= 1e-12)
            gn, gv = grid_normals(tgt.pointmap, tgt.valid)
            joint = pv & gv
            nhat = np.zeros_like(cross)
            np.divide(cross, norm[:, :, None], out=nhat, where=joint[:, :, None])
            dots = (nhat * gn).sum(axis=2)
            # exact (anti-)alignment is a symmetric kink: subgradient 0
            aligned = joint & (np.abs(dots) >= 1.0 - _ALIGNED_TOL)
            live = joint & ~aligned
            if np.any(live & (np.abs(dots) > 1.0 - margin)):
                raise NonSmoothPoint(
                    f"normal dot within {margin} of +/-1 in view {i}"
                )
            caches.append((du, dv, cross, norm, gn, nhat, dots, live))
            count += int(joint.sum())
        if count == 0:
            raise NoValidPairs("no jointly valid normal pixel")
        wn = cfg.lambda_normal / count
        for i, (du, dv, cross, norm, gn, nhat, dots, live) in enumerate(caches):
            if not np.any(live):
                continue
            dl_dg = np.zeros_like(dots)
            dl_dg[live] = -wn / np.sqrt(1.0 - dots[live] ** 2)
            # d(dot)/d(cross) = (gn - dot * nhat) / |cross|
            gc = np.zeros_like(cross)
            gc[live] = (
                dl_dg[live, None]
                * (gn[live] - dots[live, None] * nhat[live])
                / norm[live, None]
            )
            g_du = np.cross(dv, gc)
            g_dv = np.cross(gc, du)
            g_du[~live] = 0.0
            g_dv[~live] = 0.0
            g_pm[i] += _gradient_adjoint(g_du, axis=1)
            g_pm[i] += _gradient_adjoint(g_dv, axis=0)

    # --- confidence loss (targets are piecewise constant in the pointmaps) ---
    if cfg.lambda_conf != 0.0:
        n_conf = sum(int(t.valid.sum()) for t in targets)
        for i, (pred, tgt) in enumerate(zip(preds, targets)):
            err = _pixel_errors(pred, tgt, s_star)
            near = tgt.valid & (np.abs(err - cfg.conf_epsilon) < margin)
            if np.any(near):
                raise NonSmoothPoint(
                    f"pixel error within {margin} of the confidence threshold in view {i}"
                )
            t = (err < cfg.conf_epsilon).astype(np.float64)
            m = tgt.valid
            x = pred.conf_logits[m]
            sig = 1.0 / (1.0 + np.exp(-x))
            g_cl[i][m] += (cfg.lambda_conf / n_conf) * (sig - t[m])

    # --- camera loss ---
    if cfg.lambda_cam != 0.0 and n >= 2:
        k = n * (n - 1)
        w_rot = cfg.lambda_cam / k
        w_tr = cfg.lambda_cam * cfg.lambda_trans / k
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                ri = preds[i].pose.rotation
                rj = preds[j].pose.rotation
                ti = preds[i].pose.translation
                tj = preds[j].pose.translation
                gr, gt_t = _relative(targets[i].pose, targets[j].pose)

                # rotation term
                a = gr.T @ (ri.T @ rj)
                x = (np.trace(a) - 1.0) / 2.0
                if abs(x) >= 1.0 - _ALIGNED_TOL:
                    pass  # exactly (anti-)aligned: symmetric kink, gradient 0
                elif x > 1.0 - margin or x < -1.0 + margin:
                    raise NonSmoothPoint(
                        f"geodesic cosine within {margin} of +/-1 for pair ({i},{j})"
                    )
                else:
                    m_mat = rj @ gr.T @ ri.T
                    coef = w_rot / (2.0 * np.sqrt(1.0 - x * x))
                    g_r[i] += coef * _vee(m_mat)
                    g_r[j] -= coef * _vee(m_mat)

                # translation term
                d = tj - ti
                t_rel = ri.T @ d
                v = s_star * t_rel - gt_t
                r = float(np.linalg.norm(v))
                if abs(r - cfg.huber_delta) < margin:
                    raise NonSmoothPoint(
                        f"Huber radius within {margin} of delta for pair ({i},{j})"
                    )
                gv = v if r <= cfg.huber_delta else (cfg.huber_delta / r) * v
                pull = ri @ (s_star * gv)
                g_t[j] += w_tr * pull
                g_t[i] -= w_tr * pull
                g_r[i] -= w_tr * s_star * np.cross(d, ri @ gv)

    return LossGradients(g_pm, g_cl, g_t, g_r, s_star)

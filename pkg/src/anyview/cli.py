"""Command-line surface chaining synth -> infer -> loss/eval -> report.

Exit codes: 0 success, 2 input error, 3 degenerate computation,
4 property-check failure. Reports are schema-validated JSON with fixed
units (degrees for angles, scene units for distances); --plot renders a
matplotlib figure of the report next to it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import figures, metrics, storage
from .alignment import IcpConfig, icp_refine
from .errors import (
    DegenerateComputation,
    InputError,
    InvalidConfig,
    TooFewViews,
)
from .geometry import Pose, umeyama_sim3
from .gradcheck import check_gradients
from .losses import LossConfig, ViewPrediction, ViewTarget, grid_normals, total_loss
from .net import NetConfig, check_equivariance, forward, init_model
from .synth import PerturbSpec, generate, perturb, scene_spec_from_dict

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGENERATE = 3
EXIT_PROPERTY = 4

EQUIVARIANCE_BOUND = 1e-5
GRADCHECK_BOUND = 1e-4


def _load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _loss_config(path) -> LossConfig:
    if path is None:
        return LossConfig()
    d = _load_json(path)
    allowed = {f.name for f in dataclasses.fields(LossConfig)}
    extra = set(d) - allowed
    if extra:
        raise InvalidConfig(f"unknown loss config keys: {sorted(extra)}")
    return dataclasses.replace(LossConfig(), **d)


def _perturb_spec(d: dict) -> PerturbSpec:
    d = dict(d)
    rigid = d.pop("global_rigid", None)
    allowed = {f.name for f in dataclasses.fields(PerturbSpec)}
    extra = set(d) - allowed
    if extra:
        raise InvalidConfig(f"unknown perturb spec keys: {sorted(extra)}")
    if rigid is not None:
        rigid = Pose.from_matrix(np.asarray(rigid, dtype=np.float64))
    return PerturbSpec(global_rigid=rigid, **d)


def _emit(args, command, values, units, inputs) -> dict:
    report = storage.make_report(command, values, units, inputs)
    out = getattr(args, "out", None)
    if out:
        storage.write_report(out, report)
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    plot = getattr(args, "plot", None)
    if plot:
        figures.render_report_figure(report, plot)
    return report


def _net_predictions(out) -> list:
    return [
        ViewPrediction(out.pointmaps[i], out.conf_logits[i], out.poses[i])
        for i in range(out.pointmaps.shape[0])
    ]


def _load_views(path) -> list:
    """Load a prediction file, or treat a scene file as its own prediction."""
    manifest = storage.read_manifest(path)
    if manifest.get("kind") == "scene":
        sample = storage.load_scene(path)
        return [
            ViewPrediction(
                np.where(np.isfinite(sample.gt_pointmaps[i]), sample.gt_pointmaps[i], 0.0),
                np.zeros(sample.valid[i].shape),
                sample.gt_poses[i],
            )
            for i in range(sample.n_views)
        ]
    return storage.load_prediction(path)


# ---------------------------------------------------------------- evaluation


def eval_pose_values(pred_poses, gt_poses) -> dict:
    errors = metrics.pairwise_angular_errors(pred_poses, gt_poses)
    curve = metrics.accuracy_curve(errors, 30)
    values = {f"acc_at_{t}": float(curve[t - 1]) for t in range(1, 31)}
    for tau in (5, 15, 30):
        values[f"rra_at_{tau}"] = metrics.rra_at(errors, tau)
        values[f"rta_at_{tau}"] = metrics.rta_at(errors, tau)
    values["auc_at_30"] = float(curve.mean())
    values["ate"] = metrics.ate(pred_poses, gt_poses)
    rpe_t, rpe_r = metrics.rpe(pred_poses, gt_poses)
    values["rpe_trans"] = rpe_t
    values["rpe_rot"] = rpe_r
    return values


def _pose_units() -> dict:
    units = {f"acc_at_{t}": "fraction" for t in range(1, 31)}
    units.update(
        {
            "rra_at_5": "fraction", "rra_at_15": "fraction", "rra_at_30": "fraction",
            "rta_at_5": "fraction", "rta_at_15": "fraction", "rta_at_30": "fraction",
            "auc_at_30": "fraction", "ate": "scene units",
            "rpe_trans": "scene units", "rpe_rot": "degrees",
        }
    )
    return units


def eval_depth_values(preds, sample, align: str) -> dict:
    pred_depth = np.stack([p.pointmap[:, :, 2] for p in preds])
    gt_depth = sample.depths()
    abs_rel, delta = metrics.depth_metrics(pred_depth, gt_depth, sample.valid, align=align)
    return {"abs_rel": abs_rel, "delta_125": delta}


def _world_clouds(preds, sample):
    """Pooled world-frame clouds and normals under each side's own poses."""
    pred_pts, gt_pts, pred_n, gt_n = [], [], [], []
    for i, pred in enumerate(preds):
        m = sample.valid[i]
        pn, pv = grid_normals(pred.pointmap, m)
        gn, gv = grid_normals(sample.gt_pointmaps[i], m)
        pred_pts.append(pred.pose.apply(pred.pointmap[m]))
        gt_pts.append(sample.gt_poses[i].apply(sample.gt_pointmaps[i][m]))
        pw = pn[m] @ pred.pose.rotation.T
        gw = gn[m] @ sample.gt_poses[i].rotation.T
        pw[~pv[m]] = np.nan
        gw[~gv[m]] = np.nan
        pred_n.append(pw)
        gt_n.append(gw)
    return (
        np.concatenate(pred_pts), np.concatenate(gt_pts),
        np.concatenate(pred_n), np.concatenate(gt_n),
    )


def eval_points_values(preds, sample, use_icp: bool) -> dict:
    pred_cloud, gt_cloud, pred_n, gt_n = _world_clouds(preds, sample)
    g = umeyama_sim3(pred_cloud, gt_cloud, with_scale=True)
    if use_icp:
        g = icp_refine(pred_cloud, gt_cloud, g, IcpConfig())
    aligned = g.apply(pred_cloud)
    aligned_n = pred_n @ g.rotation.T
    cm = metrics.cloud_metrics(aligned, gt_cloud, aligned_n, gt_n)
    values = cm.as_dict()
    values["alignment_scale"] = g.scale
    return values


def robustness_values(sample, mode: str, seed: int) -> dict:
    """Reference-swap protocol over a standard metric battery."""
    n = sample.n_views
    if n < 3:
        raise TooFewViews(f"robustness battery needs >= 3 views, got {n}")
    cfg = NetConfig(mode=mode, seed=seed)
    weights = init_model(cfg)

    def run(order):
        inverse = np.argsort(order)
        out = forward(sample.images[np.asarray(order)], weights, cfg)
        preds = _net_predictions(out)
        preds = [preds[inverse[i]] for i in range(n)]
        vals = eval_pose_values([p.pose for p in preds], sample.gt_poses)
        row = {k: vals[k] for k in ("auc_at_30", "ate", "rpe_trans", "rpe_rot")}
        row.update(eval_depth_values(preds, sample, "scale"))
        pts = eval_points_values(preds, sample, use_icp=False)
        row.update({k: pts[k] for k in ("acc_mean", "comp_mean", "nc_mean")})
        return row

    stds = metrics.robustness_std(run, list(range(n)))
    return {f"{k}_std": v for k, v in stds.items()}


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    spec_dict = _load_json(args.spec)
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    spec = scene_spec_from_dict(spec_dict)
    sample = generate(spec)
    storage.save_scene(args.out, sample)
    if args.perturb:
        if not args.pred_out:
            raise InputError("--perturb requires --pred-out")
        pdict = _load_json(args.perturb)
        pseed = pdict.pop("seed", spec.seed + 1)
        eps = pdict.pop("conf_epsilon", LossConfig().conf_epsilon)
        preds = perturb(sample, _perturb_spec(pdict), pseed, conf_epsilon=eps)
        storage.save_prediction(
            args.pred_out, preds,
            config={"perturb": pdict, "conf_epsilon": eps}, seed=pseed,
        )
    return EXIT_OK


def cmd_infer(args) -> int:
    sample = storage.load_scene(args.scene)
    cfg = NetConfig(mode=args.mode, seed=args.seed)
    weights = init_model(cfg)
    out = forward(sample.images, weights, cfg, deterministic=args.deterministic)
    preds = _net_predictions(out)
    storage.save_prediction(
        args.out, preds,
        config={"net": dataclasses.asdict(cfg), "deterministic": args.deterministic},
        seed=args.seed,
    )
    return EXIT_OK


def cmd_loss(args) -> int:
    sample = storage.load_scene(args.scene)
    preds = storage.load_prediction(args.pred)
    cfg = _loss_config(args.config)
    targets = sample_targets(sample)
    report = total_loss(preds, targets, cfg)
    units = {
        "total": "dimensionless", "points": "dimensionless", "normal": "radians",
        "conf": "nats", "cam_rot": "radians", "cam_trans": "dimensionless",
        "s_star": "dimensionless",
    }
    _emit(args, "loss", report.as_dict(), units,
          {"scene": args.scene, "pred": args.pred, "config": dataclasses.asdict(cfg)})
    return EXIT_OK


def sample_targets(sample) -> list:
    return [
        ViewTarget(sample.gt_pointmaps[i], sample.valid[i], sample.gt_poses[i])
        for i in range(sample.n_views)
    ]


def cmd_gradcheck(args) -> int:
    sample = storage.load_scene(args.scene)
    preds = storage.load_prediction(args.pred)
    targets = sample_targets(sample)
    rng = np.random.default_rng(args.seed)
    worst = check_gradients(
        preds, targets, _loss_config(args.config),
        h=args.h, rng=rng, max_coords_per_field=args.trials,
    )
    _emit(args, "gradcheck", {"max_rel_error": worst}, {"max_rel_error": "dimensionless"},
          {"scene": args.scene, "pred": args.pred, "h": args.h, "trials": args.trials})
    return EXIT_OK if worst < GRADCHECK_BOUND else EXIT_PROPERTY


def cmd_equivariance(args) -> int:
    sample = storage.load_scene(args.scene)
    if sample.n_views < 2:
        raise TooFewViews("equivariance check needs >= 2 views")
    cfg = NetConfig(mode=args.mode, seed=args.seed)
    weights = init_model(cfg)
    dev = check_equivariance(weights, cfg, sample.images, args.trials, seed=args.seed)
    _emit(args, "equivariance", {"max_relative_deviation": dev},
          {"max_relative_deviation": "dimensionless"},
          {"scene": args.scene, "mode": args.mode, "trials": args.trials, "seed": args.seed})
    if args.mode == "equivariant" and dev > EQUIVARIANCE_BOUND:
        return EXIT_PROPERTY
    return EXIT_OK


def cmd_eval_pose(args) -> int:
    sample = storage.load_scene(args.gt)
    preds = _load_views(args.pred)
    values = eval_pose_values([p.pose for p in preds], sample.gt_poses)
    _emit(args, "eval-pose", values, _pose_units(), {"pred": args.pred, "gt": args.gt})
    return EXIT_OK


def cmd_eval_depth(args) -> int:
    sample = storage.load_scene(args.gt)
    preds = _load_views(args.pred)
    values = eval_depth_values(preds, sample, args.align)
    _emit(args, "eval-depth", values,
          {"abs_rel": "fraction", "delta_125": "fraction"},
          {"pred": args.pred, "gt": args.gt, "align": args.align})
    return EXIT_OK


def cmd_eval_points(args) -> int:
    sample = storage.load_scene(args.gt)
    preds = _load_views(args.pred)
    values = eval_points_values(preds, sample, use_icp=args.icp)
    units = {k: "scene units" for k in values}
    units.update({"nc_mean": "fraction", "nc_median": "fraction",
                  "alignment_scale": "dimensionless"})
    _emit(args, "eval-points", values, units,
          {"pred": args.pred, "gt": args.gt, "icp": args.icp})
    return EXIT_OK


def cmd_robustness(args) -> int:
    sample = storage.load_scene(args.scene)
    values = robustness_values(sample, args.mode, args.seed)
    units = {k: "metric std" for k in values}
    _emit(args, "robustness", values, units,
          {"scene": args.scene, "mode": args.mode, "metric": args.metric, "seed": args.seed})
    return EXIT_OK


def cmd_spectrum(args) -> int:
    preds = _load_views(args.pred)
    eig = metrics.pose_spectrum([p.pose for p in preds])
    values = {f"eigenvalue_{i + 1}": float(v) for i, v in enumerate(eig)}
    _emit(args, "spectrum", values, {k: "fraction" for k in values}, {"pred": args.pred})
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anyview",
        description="Order-independent multi-view geometry toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene (optionally a perturbed prediction)")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--perturb", default=None, help="perturbation spec JSON")
    p.add_argument("--pred-out", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("infer", help="run the seeded toy model on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--mode", choices=["equivariant", "ref_token", "ref_embed"], default="equivariant")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("loss", help="composite loss of a prediction against a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p.add_argument("--scene", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--trials", type=int, default=64, help="coordinates sampled per gradient field")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("equivariance", help="measure output deviation under view permutations")
    p.add_argument("--scene", required=True)
    p.add_argument("--mode", choices=["equivariant", "ref_token", "ref_embed"], default="equivariant")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_equivariance)

    p = sub.add_parser("eval-pose", help="RRA/RTA/AUC and ATE/RPE against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_eval_pose)

    p = sub.add_parser("eval-depth", help="AbsRel and delta<1.25 under an alignment")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--align", choices=["scale", "scale_shift", "none"], default="scale")
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("eval-points", help="Umeyama(+ICP) alignment then Acc/Comp/NC")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--icp", action="store_true")
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_eval_points)

    p = sub.add_parser("robustness", help="per-metric std across reference-frame swaps")
    p.add_argument("--scene", required=True)
    p.add_argument("--mode", choices=["equivariant", "ref_token", "ref_embed"], default="equivariant")
    p.add_argument("--metric", default="all", choices=["all"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("spectrum", help="normalized camera-center covariance eigenvalues")
    p.add_argument("--pred", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_spectrum)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DegenerateComputation as exc:
        print(f"degenerate computation: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())

"""Scene/prediction files (container + JSON manifest) and metric reports.

A .pi3 file carries the tensors; its manifest lives alongside at
<path>.json and names which tensor plays which role. Reports are flat
key/value JSON documents validated against the committed schema, written
with sorted keys so identical inputs produce identical bytes.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .container import read_container_file, write_container_file
from .errors import CorruptHeader, InvalidConfig
from .geometry import Intrinsics, Pose
from .losses import ViewPrediction
from .net import NetConfig, config_as_dict, config_from_dict
from .synth import SceneSample, scene_spec_from_dict, scene_spec_to_dict

TOOL_VERSION = "0.1.0"

_SCENE_ROLES = {
    "images": "images",
    "poses": "poses",
    "pointmaps": "pointmaps",
    "masks": "masks",
}
_PRED_ROLES = {"poses": "poses", "pointmaps": "pointmaps", "conf": "conf"}


def _manifest_path(path) -> Path:
    return Path(str(path) + ".json")


def _write_manifest(path, manifest: dict) -> None:
    with open(_manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    mpath = _manifest_path(path)
    if not mpath.exists():
        raise InvalidConfig(f"missing manifest {mpath}")
    with open(mpath, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorruptHeader(f"manifest {mpath} is not valid JSON: {exc}") from exc


def save_scene(path, sample: SceneSample) -> None:
    poses = np.stack([p.matrix() for p in sample.gt_poses])
    entries = {
        "images": sample.images.astype(np.float32),
        "poses": poses,
        "pointmaps": sample.gt_pointmaps,
        "masks": sample.valid.astype(np.uint8),
    }
    write_container_file(path, entries)
    n, h, w = sample.valid.shape
    k = sample.intrinsics
    manifest = {
        "kind": "scene",
        "n_views": n,
        "height": h,
        "width": w,
        "tensor_file": Path(path).name,
        "tensor_names": dict(_SCENE_ROLES),
        "config": {
            "scene_spec": scene_spec_to_dict(sample.spec) if sample.spec else None,
            "intrinsics": {
                "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                "width": k.width, "height": k.height,
            },
        },
        "tool_version": TOOL_VERSION,
        "seed": sample.spec.seed if sample.spec else None,
    }
    _write_manifest(path, manifest)


def load_scene(path) -> SceneSample:
    manifest = read_manifest(path)
    if manifest.get("kind") != "scene":
        raise InvalidConfig(f"{path} is not a scene file (kind={manifest.get('kind')!r})")
    tensors = read_container_file(path)
    names = manifest["tensor_names"]
    _check_names(tensors, names, path)
    images = tensors[names["images"]]
    poses_m = tensors[names["poses"]]
    pointmaps = tensors[names["pointmaps"]].astype(np.float64)
    masks = tensors[names["masks"]].astype(bool)
    if images.shape[0] != manifest["n_views"]:
        raise InvalidConfig(
            f"manifest says {manifest['n_views']} views but tensors hold {images.shape[0]}"
        )
    spec = None
    cfg = manifest.get("config", {})
    if cfg.get("scene_spec"):
        spec = scene_spec_from_dict(cfg["scene_spec"])
        intr = spec.intrinsics
    else:
        intr = Intrinsics(**cfg["intrinsics"])
    poses = [Pose.from_matrix(m) for m in poses_m]
    return SceneSample(images, poses, pointmaps, masks, intr, spec)


def save_prediction(path, preds, config: dict | None = None, seed=None) -> None:
    pointmaps = np.stack([p.pointmap for p in preds])
    conf = np.stack([p.conf_logits for p in preds])
    poses = np.stack([p.pose.matrix() for p in preds])
    entries = {"conf": conf, "pointmaps": pointmaps, "poses": poses}
    write_container_file(path, entries)
    n, h, w = conf.shape
    manifest = {
        "kind": "prediction",
        "n_views": n,
        "height": h,
        "width": w,
        "tensor_file": Path(path).name,
        "tensor_names": dict(_PRED_ROLES),
        "config": config or {},
        "tool_version": TOOL_VERSION,
        "seed": seed,
    }
    _write_manifest(path, manifest)


def load_prediction(path) -> list:
    manifest = read_manifest(path)
    if manifest.get("kind") != "prediction":
        raise InvalidConfig(f"{path} is not a prediction file (kind={manifest.get('kind')!r})")
    tensors = read_container_file(path)
    names = manifest["tensor_names"]
    _check_names(tensors, names, path)
    pointmaps = tensors[names["pointmaps"]].astype(np.float64)
    conf = tensors[names["conf"]].astype(np.float64)
    poses = tensors[names["poses"]]
    if pointmaps.shape[0] != manifest["n_views"]:
        raise InvalidConfig(
            f"manifest says {manifest['n_views']} views but tensors hold {pointmaps.shape[0]}"
        )
    return [
        ViewPrediction(pointmaps[i], conf[i], Pose.from_matrix(poses[i]))
        for i in range(pointmaps.shape[0])
    ]


def _check_names(tensors: dict, names: dict, path) -> None:
    missing = [v for v in names.values() if v not in tensors]
    if missing:
        raise InvalidConfig(f"{path} is missing tensors {missing}")


def save_weights(path, weights: dict, cfg: NetConfig) -> None:
    write_container_file(path, weights)
    manifest = {
        "kind": "weights",
        "tensor_file": Path(path).name,
        "tensor_names": sorted(weights),
        "config": {"net": config_as_dict(cfg)},
        "tool_version": TOOL_VERSION,
        "seed": cfg.seed,
    }
    _write_manifest(path, manifest)


def load_weights(path) -> tuple[dict, NetConfig]:
    manifest = read_manifest(path)
    if manifest.get("kind") != "weights":
        raise InvalidConfig(f"{path} is not a weights file")
    cfg = config_from_dict(manifest["config"]["net"])
    return read_container_file(path), cfg


def report_schema() -> dict:
    text = resources.files("anyview.schemas").joinpath("report.schema.json").read_text()
    return json.loads(text)


def make_report(command: str, values: dict, units: dict, inputs: dict | None = None) -> dict:
    report = {
        "kind": "report",
        "command": command,
        "tool_version": TOOL_VERSION,
        "inputs": inputs or {},
        "values": {k: float(v) for k, v in values.items()},
        "units": dict(units),
    }
    jsonschema.validate(report, report_schema())
    return report


def write_report(path, report: dict) -> None:
    jsonschema.validate(report, report_schema())
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)

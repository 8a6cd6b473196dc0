"""Toy-scale, forward-only multi-view transformer.

Each view is patch-embedded with a shared linear map plus a 2D sinusoidal
encoding over the patch grid; nothing anywhere encodes which slot a view
arrived in. The trunk alternates attention within each view with attention
over the concatenation of all views, then three independent per-view
decoders produce point maps, confidence logits, and a camera pose.

Two contrast modes deliberately break the order independence: `ref_token`
concatenates a learnable token to the first view slot and `ref_embed` adds
a learnable embedding to its tokens.

Weights and activations are float32. The only reductions that mix tokens
across views happen inside global attention; those accumulate in float64 so
the result is insensitive to the concatenation order at float32 resolution.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf

from .errors import DegenerateInput, HeadDegenerate, InvalidConfig, ShapeMismatch
from .geometry import Pose, rotation_from_9d

MODES = ("equivariant", "ref_token", "ref_embed")
_LN_EPS = np.float32(1e-5)


@dataclass(frozen=True)
class NetConfig:
    patch_size: int = 8
    dim: int = 64
    heads: int = 4
    depth: int = 4
    decoder_depth: int = 5
    mode: str = "equivariant"
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1:
            raise InvalidConfig(f"patch_size must be positive, got {self.patch_size}")
        if self.dim % self.heads != 0:
            raise InvalidConfig(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 4 != 0:
            raise InvalidConfig(f"dim {self.dim} must be divisible by 4 for the 2D encoding")
        if self.depth < 1 or self.decoder_depth < 1:
            raise InvalidConfig("depth and decoder_depth must be >= 1")
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class NetOutput:
    poses: list
    pointmaps: np.ndarray  # (N, H, W, 3) float32
    conf_logits: np.ndarray  # (N, H, W) float32


def _gelu(x: np.ndarray) -> np.ndarray:
    return (0.5 * x * (1.0 + erf(x / np.sqrt(np.float32(2.0))))).astype(np.float32)


def _block_names(prefix: str, dim: int, hidden: int):
    return [
        (f"{prefix}/ln1/g", (dim,), "one"),
        (f"{prefix}/ln1/b", (dim,), "zero"),
        (f"{prefix}/attn/wq", (dim, dim), "mat"),
        (f"{prefix}/attn/bq", (dim,), "zero"),
        (f"{prefix}/attn/wk", (dim, dim), "mat"),
        (f"{prefix}/attn/bk", (dim,), "zero"),
        (f"{prefix}/attn/wv", (dim, dim), "mat"),
        (f"{prefix}/attn/bv", (dim,), "zero"),
        (f"{prefix}/attn/wo", (dim, dim), "mat"),
        (f"{prefix}/attn/bo", (dim,), "zero"),
        (f"{prefix}/ln2/g", (dim,), "one"),
        (f"{prefix}/ln2/b", (dim,), "zero"),
        (f"{prefix}/mlp/w1", (dim, hidden), "mat"),
        (f"{prefix}/mlp/b1", (hidden,), "zero"),
        (f"{prefix}/mlp/w2", (hidden, dim), "mat"),
        (f"{prefix}/mlp/b2", (dim,), "zero"),
    ]


def _weight_plan(cfg: NetConfig):
    d = cfg.dim
    hidden = 4 * d
    p2 = cfg.patch_size * cfg.patch_size
    plan = [
        ("embed/w", (p2 * 3, d), "mat"),
        ("embed/b", (d,), "zero"),
    ]
    for i in range(cfg.depth):
        plan += _block_names(f"trunk/{i}/view", d, hidden)
        plan += _block_names(f"trunk/{i}/global", d, hidden)
    plan += [("trunk/norm/g", (d,), "one"), ("trunk/norm/b", (d,), "zero")]
    for head in ("point", "conf", "camera"):
        for i in range(cfg.decoder_depth):
            plan += _block_names(f"{head}/dec/{i}", d, hidden)
        plan += [(f"{head}/dec/norm/g", (d,), "one"), (f"{head}/dec/norm/b", (d,), "zero")]
    plan += [
        ("point/head/w1", (d, d), "mat"),
        ("point/head/b1", (d,), "zero"),
        ("point/head/w2", (d, p2 * 3), "mat"),
        ("point/head/b2", (p2 * 3,), "zero"),
        ("conf/head/w1", (d, d), "mat"),
        ("conf/head/b1", (d,), "zero"),
        ("conf/head/w2", (d, p2), "mat"),
        ("conf/head/b2", (p2,), "zero"),
        ("camera/head/pre_w1", (d, d), "mat"),
        ("camera/head/pre_b1", (d,), "zero"),
        ("camera/head/pre_w2", (d, d), "mat"),
        ("camera/head/pre_b2", (d,), "zero"),
        ("camera/head/post_w1", (d, d), "mat"),
        ("camera/head/post_b1", (d,), "zero"),
        ("camera/head/post_w2", (d, 12), "mat"),
        ("camera/head/post_b2", (12,), "zero"),
    ]
    if cfg.mode == "ref_token":
        plan.append(("ref/token", (1, d), "ref"))
    elif cfg.mode == "ref_embed":
        plan.append(("ref/embed", (d,), "ref"))
    return plan


def init_model(cfg: NetConfig) -> dict:
    """Seeded scaled-uniform weights; bitwise identical per (seed, config)."""
    rng = np.random.default_rng(cfg.seed)
    weights = {}
    for name, shape, kind in _weight_plan(cfg):
        if kind == "mat":
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            weights[name] = rng.uniform(-limit, limit, size=shape).astype(np.float32)
        elif kind == "zero":
            weights[name] = np.zeros(shape, dtype=np.float32)
        elif kind == "one":
            weights[name] = np.ones(shape, dtype=np.float32)
        else:  # ref parameters: order-breaking by design, so keep them large
            weights[name] = rng.uniform(-1.0, 1.0, size=shape).astype(np.float32)
    return weights


def _posenc_2d(grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """2D sinusoidal encoding over the patch grid; identical for every view."""
    quarter = dim // 4
    freqs = 1.0 / (10000.0 ** (np.arange(quarter, dtype=np.float64) / quarter))
    gy, gx = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    gx = gx.reshape(-1, 1) * freqs
    gy = gy.reshape(-1, 1) * freqs
    pe = np.concatenate([np.sin(gx), np.cos(gx), np.sin(gy), np.cos(gy)], axis=1)
    return pe.astype(np.float32)


def patch_embed(image: np.ndarray, weights: dict, cfg: NetConfig) -> np.ndarray:
    """Linear embedding of flattened p x p x 3 patches plus the grid encoding."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeMismatch(f"expected (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    p = cfg.patch_size
    if h % p != 0 or w % p != 0:
        raise ShapeMismatch(f"patch size {p} does not divide image {h}x{w}")
    gh, gw = h // p, w // p
    patches = img.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4).reshape(gh * gw, p * p * 3)
    tokens = patches @ weights["embed/w"] + weights["embed/b"]
    return tokens + _posenc_2d(gh, gw, cfg.dim)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return ((x - mu) / np.sqrt(var + _LN_EPS)) * g + b


def _canonical_order(tokens: np.ndarray) -> np.ndarray:
    digests = [hashlib.sha256(tokens[i].tobytes()).digest() for i in range(tokens.shape[0])]
    return np.array(sorted(range(len(digests)), key=lambda i: digests[i]), dtype=np.intp)


def _attention(x, weights, prefix, heads, f64_reduce=False, canonical=False):
    t, d = x.shape
    dh = d // heads
    q = (x @ weights[f"{prefix}/wq"] + weights[f"{prefix}/bq"]).reshape(t, heads, dh)
    k = (x @ weights[f"{prefix}/wk"] + weights[f"{prefix}/bk"]).reshape(t, heads, dh)
    v = (x @ weights[f"{prefix}/wv"] + weights[f"{prefix}/bv"]).reshape(t, heads, dh)
    if canonical:
        # reduction order independent of how views were concatenated
        order = _canonical_order(x)
        k = k[order]
        v = v[order]
    if f64_reduce:
        k = k.astype(np.float64)
        v = v.astype(np.float64)
        q = q.astype(np.float64)
    scores = np.einsum("thd,shd->hts", q, k) / np.sqrt(dh)
    scores -= scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    ctx = np.einsum("hts,shd->thd", p, v).reshape(t, d).astype(np.float32)
    return ctx @ weights[f"{prefix}/wo"] + weights[f"{prefix}/bo"]


def _mlp(x, weights, prefix):
    h = _gelu(x @ weights[f"{prefix}/w1"] + weights[f"{prefix}/b1"])
    return h @ weights[f"{prefix}/w2"] + weights[f"{prefix}/b2"]


def _residual_block(x, weights, prefix, heads, f64_reduce=False, canonical=False):
    x = x + _attention(
        _layer_norm(x, weights[f"{prefix}/ln1/g"], weights[f"{prefix}/ln1/b"]),
        weights, f"{prefix}/attn", heads, f64_reduce=f64_reduce, canonical=canonical,
    )
    return x + _mlp(
        _layer_norm(x, weights[f"{prefix}/ln2/g"], weights[f"{prefix}/ln2/b"]),
        weights, f"{prefix}/mlp",
    )


def pixel_shuffle_head(tokens: np.ndarray, weights: dict, prefix: str,
                       patch: int, grid_h: int, grid_w: int, channels: int) -> np.ndarray:
    """Per-token MLP to p*p*C values, rearranged to an (H, W, C) map.

    Output element c*p*p + dy*p + dx of a token lands at channel c and pixel
    (row*p + dy, col*p + dx) of that token's patch.
    """
    if tokens.shape[0] != grid_h * grid_w:
        raise ShapeMismatch(
            f"expected {grid_h * grid_w} tokens for a {grid_h}x{grid_w} grid, got {tokens.shape[0]}"
        )
    vec = _mlp(tokens, weights, f"{prefix}/head")
    arr = vec.reshape(grid_h, grid_w, channels, patch, patch)
    return arr.transpose(0, 3, 1, 4, 2).reshape(grid_h * patch, grid_w * patch, channels)


def camera_head(tokens: np.ndarray, weights: dict) -> Pose:
    """Per-token MLP, mean pool, MLP to 12 values: 9D rotation + translation."""
    if tokens.shape[0] < 1:
        raise ShapeMismatch("camera head needs at least one token")
    h = _gelu(tokens @ weights["camera/head/pre_w1"] + weights["camera/head/pre_b1"])
    h = h @ weights["camera/head/pre_w2"] + weights["camera/head/pre_b2"]
    pooled = h.mean(axis=0)
    h2 = _gelu(pooled @ weights["camera/head/post_w1"] + weights["camera/head/post_b1"])
    out = h2 @ weights["camera/head/post_w2"] + weights["camera/head/post_b2"]
    try:
        rot = rotation_from_9d(out[:9].astype(np.float64))
    except DegenerateInput as exc:
        raise HeadDegenerate(str(exc)) from exc
    return Pose(rot, out[9:12].astype(np.float64))


def _decode(tokens, weights, head, cfg):
    # decoders attend within one view only; token order there never varies
    for i in range(cfg.decoder_depth):
        tokens = _residual_block(tokens, weights, f"{head}/dec/{i}", cfg.heads)
    return _layer_norm(tokens, weights[f"{head}/dec/norm/g"], weights[f"{head}/dec/norm/b"])


def forward(images, weights: dict, cfg: NetConfig, deterministic: bool = False) -> NetOutput:
    """Run the full model on N views sharing one resolution."""
    imgs = [np.asarray(im, dtype=np.float32) for im in images]
    if len(imgs) < 1:
        raise ShapeMismatch("need at least one view")
    h, w = imgs[0].shape[:2]
    for im in imgs:
        if im.shape != (h, w, 3):
            raise ShapeMismatch(f"views disagree on shape: {im.shape} vs {(h, w, 3)}")
    p = cfg.patch_size
    gh, gw = h // p, w // p

    tokens = [patch_embed(im, weights, cfg) for im in imgs]
    if cfg.mode == "ref_token":
        tokens[0] = np.concatenate([weights["ref/token"], tokens[0]], axis=0)
    elif cfg.mode == "ref_embed":
        tokens[0] = tokens[0] + weights["ref/embed"]

    lengths = [t.shape[0] for t in tokens]
    for i in range(cfg.depth):
        tokens = [
            _residual_block(t, weights, f"trunk/{i}/view", cfg.heads) for t in tokens
        ]
        flat = np.concatenate(tokens, axis=0)
        flat = _residual_block(
            flat, weights, f"trunk/{i}/global", cfg.heads,
            f64_reduce=True, canonical=deterministic,
        )
        tokens = list(np.split(flat, np.cumsum(lengths)[:-1], axis=0))

    if cfg.mode == "ref_token":
        tokens[0] = tokens[0][1:]
    tokens = [_layer_norm(t, weights["trunk/norm/g"], weights["trunk/norm/b"]) for t in tokens]

    poses = []
    pointmaps = np.empty((len(imgs), h, w, 3), dtype=np.float32)
    confs = np.empty((len(imgs), h, w), dtype=np.float32)
    for i, t in enumerate(tokens):
        pt = _decode(t, weights, "point", cfg)
        pointmaps[i] = pixel_shuffle_head(pt, weights, "point", p, gh, gw, 3)
        ct = _decode(t, weights, "conf", cfg)
        confs[i] = pixel_shuffle_head(ct, weights, "conf", p, gh, gw, 1)[:, :, 0]
        cam = _decode(t, weights, "camera", cfg)
        poses.append(camera_head(cam, weights))
    return NetOutput(poses, pointmaps, confs)


def check_equivariance(weights, cfg, images, trials: int, seed: int = 0,
                       deterministic: bool = False) -> float:
    """Max relative output deviation over random view permutations."""
    imgs = np.asarray(images, dtype=np.float32)
    n = imgs.shape[0]
    base = forward(imgs, weights, cfg, deterministic=deterministic)
    base_pose = np.stack([p.matrix() for p in base.poses])
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        perm = rng.permutation(n)
        out = forward(imgs[perm], weights, cfg, deterministic=deterministic)
        out_pose = np.stack([p.matrix() for p in out.poses])
        for got, ref in (
            (out.pointmaps, base.pointmaps[perm]),
            (out.conf_logits, base.conf_logits[perm]),
            (out_pose, base_pose[perm]),
        ):
            denom = float(np.abs(ref).max()) + 1e-12
            worst = max(worst, float(np.abs(got - ref).max()) / denom)
    return worst


def config_as_dict(cfg: NetConfig) -> dict:
    return {
        "patch_size": cfg.patch_size,
        "dim": cfg.dim,
        "heads": cfg.heads,
        "depth": cfg.depth,
        "decoder_depth": cfg.decoder_depth,
        "mode": cfg.mode,
        "seed": cfg.seed,
    }


def config_from_dict(d: dict) -> NetConfig:
    allowed = set(config_as_dict(NetConfig()))
    extra = set(d) - allowed
    if extra:
        raise InvalidConfig(f"unknown net config keys: {sorted(extra)}")
    return replace(NetConfig(), **d)

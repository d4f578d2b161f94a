"""Modality encoders: GPS transformer, MaxViT-style visual, PTv3-style point cloud.

All three are written as ``init_*`` (register parameters) plus a pure forward
function taking a flat parameter dict, so they can be composed freely and
checked piece by piece.  Feature maps inside the visual encoder are kept
channels-last ``(N, H, W, C)``; only convolutions go through ``(N, C, H, W)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .numerics import (AttentionConfig, Init, Params, Tensor, add, apply_layer_norm, apply_linear,
                       conv2d, expand, feed_forward, gather_rows, gelu, index_select, init_feed_forward,
                       init_layer_norm, init_linear, init_mha, mean, mul, multi_head_attention, relu,
                       reshape, scope, sigmoid, sum_, tensor, transpose)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else tensor(x)


# ---------------------------------------------------------------------------
# position encoder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PositionEncoderConfig:
    embed_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    norm_placement: str = "post"

    def __post_init__(self):
        if self.embed_dim % self.n_heads:
            raise ValueError("embed_dim must be divisible by n_heads")

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.embed_dim, self.n_heads)


def init_position_encoder(init: Init, cfg: PositionEncoderConfig) -> None:
    d = cfg.embed_dim
    init_linear(init, "embed", 2, d)
    for i in range(cfg.n_layers):
        layer = init.child(f"layer{i}")
        init_mha(layer, "attn", cfg.attention)
        init_layer_norm(layer, "ln1", d)
        init_feed_forward(layer, "ff", d, cfg.ff_dim)
        init_layer_norm(layer, "ln2", d)


def position_encode(gps_norm, cfg: PositionEncoderConfig, weights: Params) -> Tensor:
    """(N, 2) normalized GPS → (N, embed_dim) feature Z_g.

    Each GPS reading is a length-1 token sequence; layers are post-norm.
    """
    x = _as_tensor(gps_norm)
    if x.shape[-1] != 2:
        raise ValueError(f"position input must have 2 features, got {x.shape}")
    if weights["embed.w"].shape != (2, cfg.embed_dim):
        raise ValueError("embedding weight shape does not match config")
    n = x.shape[0]
    e = apply_linear(scope(weights, "embed"), reshape(x, (n, 1, 2)))
    att = cfg.attention
    for i in range(cfg.n_layers):
        p = scope(weights, f"layer{i}")
        if cfg.norm_placement == "post":
            e = apply_layer_norm(scope(p, "ln1"), add(e, multi_head_attention(e, e, e, att, scope(p, "attn"))))
            e = apply_layer_norm(scope(p, "ln2"), add(e, feed_forward(scope(p, "ff"), e, "relu")))
        else:
            h = apply_layer_norm(scope(p, "ln1"), e)
            e = add(e, multi_head_attention(h, h, h, att, scope(p, "attn")))
            e = add(e, feed_forward(scope(p, "ff"), apply_layer_norm(scope(p, "ln2"), e), "relu"))
    return mean(e, axis=1)


# ---------------------------------------------------------------------------
# visual encoder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VisualEncoderConfig:
    stem_channels: int = 8
    n_stages: int = 2
    window_size: int = 4
    grid_size: int = 4
    head_dim: int = 8
    expansion: int = 4
    se_ratio: float = 0.25
    ff_ratio: int = 2
    first_stage_stride: int = 2
    image_size: int = 32
    pos_embed: bool = True

    def stage_stride(self, s: int) -> int:
        return self.first_stage_stride if s == 0 else 2

    def stage_channels(self, s: int) -> int:
        return self.stem_channels * 2 ** (s + 1)

    @property
    def out_dim(self) -> int:
        return self.stage_channels(self.n_stages - 1)

    def attention(self, channels: int) -> AttentionConfig:
        if channels % self.head_dim:
            raise ValueError(f"{channels} channels not divisible by head_dim {self.head_dim}")
        return AttentionConfig(channels, channels // self.head_dim)

    def output_side(self, image_side: int) -> int:
        side = image_side // 2
        for s in range(self.n_stages):
            side //= self.stage_stride(s)
        return side


def window_partition(x: Tensor, w: int) -> Tensor:
    """(N, H, W, C) → (N·H/w·W/w, w·w, C), windows of adjacent pixels."""
    n, h, wd, c = x.shape
    if h % w or wd % w:
        raise ValueError(f"feature map {h}x{wd} not divisible by window {w}")
    x = reshape(x, (n, h // w, w, wd // w, w, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (n * (h // w) * (wd // w), w * w, c))


def window_reverse(x: Tensor, w: int, shape) -> Tensor:
    n, h, wd, c = shape
    x = reshape(x, (n, h // w, wd // w, w, w, c))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (n, h, wd, c))


def grid_partition(x: Tensor, g: int) -> Tensor:
    """(N, H, W, C) → (N·g·g, H/g·W/g, C); each group holds positions stride ``g`` apart."""
    n, h, wd, c = x.shape
    if h % g or wd % g:
        raise ValueError(f"feature map {h}x{wd} not divisible by grid {g}")
    x = reshape(x, (n, h // g, g, wd // g, g, c))
    x = transpose(x, (0, 2, 4, 1, 3, 5))
    return reshape(x, (n * g * g, (h // g) * (wd // g), c))


def grid_reverse(x: Tensor, g: int, shape) -> Tensor:
    n, h, wd, c = shape
    x = reshape(x, (n, g, g, h // g, wd // g, c))
    x = transpose(x, (0, 3, 1, 4, 2, 5))
    return reshape(x, (n, h, wd, c))


def block_attention(fmap: Tensor, window: int, att: AttentionConfig, weights: Params) -> Tensor:
    """Multi-head self-attention inside each non-overlapping ``window``×``window`` block."""
    shape = fmap.shape
    win = window_partition(fmap, window)
    return window_reverse(multi_head_attention(win, win, win, att, weights), window, shape)


def grid_attention(fmap: Tensor, grid: int, att: AttentionConfig, weights: Params) -> Tensor:
    """Multi-head self-attention over sparse groups of positions ``grid`` apart."""
    shape = fmap.shape
    grp = grid_partition(fmap, grid)
    return grid_reverse(multi_head_attention(grp, grp, grp, att, weights), grid, shape)


def init_mbconv(init: Init, c_in: int, c_out: int, cfg: VisualEncoderConfig, stride: int) -> None:
    mid = c_in * cfg.expansion
    se = max(1, int(round(c_in * cfg.se_ratio)))
    init_layer_norm(init, "ln", c_in)
    init_linear(init, "expand", c_in, mid)
    dw = init.child("dw")
    dw.weight("w", 9, 9, shape=(mid, 1, 3, 3))
    dw.zeros("b", (mid,))
    init_linear(init, "se_reduce", mid, se)
    init_linear(init, "se_expand", se, mid)
    init_linear(init, "project", mid, c_out)
    if c_in != c_out or stride != 1:
        init_linear(init, "shortcut", c_in, c_out)


def _to_nchw(x: Tensor) -> Tensor:
    return transpose(x, (0, 3, 1, 2))


def _to_nhwc(x: Tensor) -> Tensor:
    return transpose(x, (0, 2, 3, 1))


def mbconv(fmap: Tensor, weights: Params, stride: int = 1, use_se: bool = True) -> Tensor:
    """Inverted residual: 1×1 expand → 3×3 depthwise → SE gate → 1×1 project, plus skip.

    ``fmap`` is channels-last.  Pointwise convolutions are written as matmuls
    over the channel axis.
    """
    n, h, w, c = fmap.shape
    y = apply_layer_norm(scope(weights, "ln"), fmap)
    y = gelu(apply_linear(scope(weights, "expand"), y))
    mid = y.shape[-1]
    y = conv2d(_to_nchw(y), weights["dw.w"], weights["dw.b"], stride=stride, padding=1, groups=mid)
    y = gelu(_to_nhwc(y))
    if use_se:
        s = mean(y, axis=(1, 2))
        s = relu(apply_linear(scope(weights, "se_reduce"), s))
        s = sigmoid(apply_linear(scope(weights, "se_expand"), s))
        ho, wo = y.shape[1], y.shape[2]
        y = mul(y, expand(reshape(s, (n, 1, 1, mid)), (n, ho, wo, mid)))
    y = apply_linear(scope(weights, "project"), y)
    if "shortcut.w" in weights:
        skip = index_select(fmap, (slice(None), slice(None, None, stride), slice(None, None, stride))) \
            if stride != 1 else fmap
        skip = apply_linear(scope(weights, "shortcut"), skip)
    else:
        skip = fmap
    return add(skip, y)


def init_visual_encoder(init: Init, cfg: VisualEncoderConfig) -> None:
    c0 = cfg.stem_channels
    stem = init.child("stem")
    stem.weight("w", 27, 9 * c0, shape=(c0, 3, 3, 3))
    stem.zeros("b", (c0,))
    if cfg.pos_embed:
        side = cfg.image_size // 2
        init.normal("pos_embed", (side, side, c0), 0.02)
    c_in = c0
    for s in range(cfg.n_stages):
        c = cfg.stage_channels(s)
        st = init.child(f"stage{s}")
        init_mbconv(st.child("mbconv"), c_in, c, cfg, cfg.stage_stride(s))
        att = cfg.attention(c)
        for part in ("block", "grid"):
            init_layer_norm(st, f"{part}_ln", c)
            init_mha(st, f"{part}_attn", att)
            init_layer_norm(st, f"{part}_ff_ln", c)
            init_feed_forward(st, f"{part}_ff", c, c * cfg.ff_ratio)
        c_in = c


def visual_stage(x: Tensor, s: int, cfg: VisualEncoderConfig, weights: Params) -> Tensor:
    c = cfg.stage_channels(s)
    att = cfg.attention(c)
    x = mbconv(x, scope(weights, "mbconv"), stride=cfg.stage_stride(s))
    for part, op, size in (("block", block_attention, cfg.window_size), ("grid", grid_attention, cfg.grid_size)):
        x = add(x, op(apply_layer_norm(scope(weights, f"{part}_ln"), x), size, att, scope(weights, f"{part}_attn")))
        x = add(x, feed_forward(scope(weights, f"{part}_ff"), apply_layer_norm(scope(weights, f"{part}_ff_ln"), x)))
    return x


def visual_encode(image_tensor, cfg: VisualEncoderConfig, weights: Params, pool: bool = True) -> Tensor:
    """(N, 3, H, W) → Z_v of shape (N, out_dim), or (N, tokens, out_dim) with ``pool=False``."""
    img = _as_tensor(image_tensor)
    if img.ndim != 4 or img.shape[1] != 3:
        raise ValueError(f"expected (N, 3, H, W) images, got {img.shape}")
    x = conv2d(img, weights["stem.w"], weights["stem.b"], stride=2, padding=1)
    x = gelu(_to_nhwc(x))
    if "pos_embed" in weights:
        # mean pooling discards where things are; a learned per-location offset keeps it
        pe = weights["pos_embed"]
        if pe.shape != x.shape[1:]:
            raise ValueError(f"positional embedding {pe.shape} does not match stem output {x.shape[1:]}")
        x = add(x, expand(reshape(pe, (1,) + pe.shape), x.shape))
    for s in range(cfg.n_stages):
        x = visual_stage(x, s, cfg, scope(weights, f"stage{s}"))
    n, h, w, c = x.shape
    tokens = reshape(x, (n, h * w, c))
    return mean(tokens, axis=1) if pool else tokens


# ---------------------------------------------------------------------------
# point cloud encoder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointEncoderConfig:
    embed_dim: int = 32
    n_heads: int = 4
    patch_size: int = 16
    n_blocks: int = 2
    grid_pool: int = 8
    curves: tuple[str, ...] = ("z", "transpose-z")
    bound: float = 25.0
    bits: int = 8
    cpe_kernel: int = 3
    ff_ratio: int = 2
    mask_padding: bool = True

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.embed_dim, self.n_heads)


def morton_codes(points: np.ndarray, curve: str = "z", bound: float = 25.0, bits: int = 8) -> np.ndarray:
    """Interleaved-bit codes of points quantized to a 2**bits grid over [-bound, bound]³."""
    pts = np.asarray(points, dtype=float)
    cells = 2 ** bits
    q = np.floor((pts + bound) / (2 * bound) * cells)
    q = np.clip(q, 0, cells - 1).astype(np.int64)
    x, y, z = q[..., 0], q[..., 1], q[..., 2]
    if curve == "transpose-z":
        x, y = y, x
    elif curve != "z":
        raise ValueError(f"unknown serialization curve {curve!r}")
    code = np.zeros(x.shape, dtype=np.int64)
    for b in range(bits):
        code |= ((x >> b) & 1) << (3 * b + 2)
        code |= ((y >> b) & 1) << (3 * b + 1)
        code |= ((z >> b) & 1) << (3 * b)
    return code


def serialize_points(points_tensor, curve: str = "z", bound: float = 25.0, bits: int = 8) -> np.ndarray:
    """Stable sort permutation by Morton code, along the point axis (works batched)."""
    codes = morton_codes(points_tensor, curve, bound, bits)
    return np.argsort(codes, axis=-1, kind="stable")


def init_point_encoder(init: Init, cfg: PointEncoderConfig) -> None:
    e = cfg.embed_dim
    init_linear(init, "embed1", 3, e)
    init_linear(init, "embed2", e, e)
    cpe = init.child("cpe")
    cpe.weight("w", cfg.cpe_kernel, cfg.cpe_kernel, shape=(e, 1, 1, cfg.cpe_kernel))
    cpe.zeros("b", (e,))
    for b in range(cfg.n_blocks):
        blk = init.child(f"block{b}")
        init_layer_norm(blk, "ln1", e)
        init_mha(blk, "attn", cfg.attention)
        init_layer_norm(blk, "ln2", e)
        init_feed_forward(blk, "ff", e, e * cfg.ff_ratio)


def patch_attention(tokens: Tensor, patch: int, att: AttentionConfig, weights: Params,
                    valid: np.ndarray | None = None) -> Tensor:
    """Self-attention within consecutive non-overlapping patches of the serialized sequence.

    ``valid`` (N, T) hides padding tokens from the keys when given.
    """
    n, t, c = tokens.shape
    if t % patch:
        raise ValueError(f"sequence length {t} not divisible by patch size {patch}")
    x = reshape(tokens, (n * (t // patch), patch, c))
    mask = None if valid is None else np.asarray(valid, dtype=bool).reshape(n * (t // patch), patch)
    return reshape(multi_head_attention(x, x, x, att, weights, key_mask=mask), (n, t, c))


def _masked_group_mean(x: Tensor, valid: np.ndarray, group: int) -> Tensor:
    """Mean over consecutive groups of ``group`` rows counting only valid rows."""
    n, p, e = x.shape
    w = valid.reshape(n, p // group, group).astype(float)
    w = w / np.maximum(w.sum(axis=2, keepdims=True), 1.0)
    wt = tensor(np.ascontiguousarray(np.broadcast_to(w.reshape(n, p, 1), (n, p, e))))
    return sum_(reshape(mul(x, wt), (n, p // group, group, e)), axis=2)


def point_embed(points: np.ndarray, cfg: PointEncoderConfig, weights: Params):
    """Serialize, embed, add conditional positional encoding, grid-pool.

    Returns pooled tokens (N, T, E), their pooled coordinates (N, T, 3) and a
    token validity mask (all True unless ``cfg.mask_padding``, where all-zero
    rows count as padding).
    """
    pts = np.asarray(points.data if isinstance(points, Tensor) else points, dtype=float)
    if pts.ndim != 3 or pts.shape[-1] != 3:
        raise ValueError(f"expected (N, P, 3) points, got {pts.shape}")
    n, p, _ = pts.shape
    if p % cfg.grid_pool or (p // cfg.grid_pool) % cfg.patch_size:
        raise ValueError(f"{p} points incompatible with grid_pool={cfg.grid_pool}, patch_size={cfg.patch_size}")
    order = serialize_points(pts, cfg.curves[0], cfg.bound, cfg.bits)
    rows = np.arange(n)[:, None]
    pts = pts[rows, order]
    x = tensor(pts / cfg.bound)
    f = apply_linear(scope(weights, "embed2"), gelu(apply_linear(scope(weights, "embed1"), x)))
    e = f.shape[-1]
    k = cfg.cpe_kernel
    pe = conv2d(reshape(transpose(f, (0, 2, 1)), (n, e, 1, p)), weights["cpe.w"], weights["cpe.b"],
                padding=(0, k // 2), groups=e)
    f = add(f, transpose(reshape(pe, (n, e, p)), (0, 2, 1)))
    gp = cfg.grid_pool
    if cfg.mask_padding:
        point_valid = np.any(pts != 0.0, axis=-1)
        tokens = _masked_group_mean(f, point_valid, gp)
        valid = point_valid.reshape(n, p // gp, gp).any(axis=2)
        w = point_valid.reshape(n, p // gp, gp, 1).astype(float)
        coords = (pts.reshape(n, p // gp, gp, 3) * w).sum(axis=2) / np.maximum(w.sum(axis=2), 1.0)
    else:
        tokens = mean(reshape(f, (n, p // gp, gp, e)), axis=2)
        valid = np.ones((n, p // gp), dtype=bool)
        coords = pts.reshape(n, p // gp, gp, 3).mean(axis=2)
    return tokens, coords, valid


def point_blocks(tokens: Tensor, coords: np.ndarray, cfg: PointEncoderConfig, weights: Params,
                 valid: np.ndarray | None = None) -> tuple[Tensor, np.ndarray]:
    att = cfg.attention
    n = tokens.shape[0]
    rows = np.arange(n)[:, None]
    if valid is None:
        valid = np.ones(tokens.shape[:2], dtype=bool)
    for b in range(cfg.n_blocks):
        if b > 0:
            # order shuffling: alternate serialization curves between blocks
            curve = cfg.curves[b % len(cfg.curves)]
            order = serialize_points(coords, curve, cfg.bound, cfg.bits)
            tokens = gather_rows(tokens, order)
            coords = coords[rows, order]
            valid = valid[rows, order]
        p = scope(weights, f"block{b}")
        mask = valid if cfg.mask_padding else None
        tokens = add(tokens, patch_attention(apply_layer_norm(scope(p, "ln1"), tokens), cfg.patch_size, att,
                                             scope(p, "attn"), mask))
        tokens = add(tokens, feed_forward(scope(p, "ff"), apply_layer_norm(scope(p, "ln2"), tokens)))
    return tokens, valid


def point_tokens(points_tensor, cfg: PointEncoderConfig, weights: Params) -> tuple[Tensor, np.ndarray]:
    """Unpooled encoder output (N, T, E) and its token validity mask (N, T)."""
    tokens, coords, valid = point_embed(points_tensor, cfg, weights)
    return point_blocks(tokens, coords, cfg, weights, valid)


def point_encode(points_tensor, cfg: PointEncoderConfig, weights: Params, pool: bool = True) -> Tensor:
    """(N, P, 3) fixed-size clouds → Z_p (N, E), or token sequence with ``pool=False``."""
    tokens, valid = point_tokens(points_tensor, cfg, weights)
    if not pool:
        return tokens
    if cfg.mask_padding:
        t = tokens.shape[1]
        return reshape(_masked_group_mean(tokens, valid, t), (tokens.shape[0], tokens.shape[2]))
    return mean(tokens, axis=1)


def config_dict(cfg) -> dict:
    return asdict(cfg)

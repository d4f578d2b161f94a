"""Attention kernels and parameter helpers shared by every encoder."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (Tensor, add, concat, gelu, layer_norm, linear, matmul, relu, reshape,
                     scale, softmax, swap_last, transpose)

Params = dict[str, Tensor]


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int = 64
    num_heads: int = 8

    def __post_init__(self):
        if self.model_dim <= 0 or self.num_heads <= 0:
            raise ValueError("model_dim and num_heads must be positive")
        if self.model_dim % self.num_heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def scope(params: Params, prefix: str) -> Params:
    """View of ``params`` restricted to keys under ``prefix`` (prefix stripped)."""
    p = prefix if prefix.endswith(".") else prefix + "."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


class Init:
    """Seeded parameter factory writing into a flat, dotted-name dict."""

    def __init__(self, rng: np.random.Generator, params: Params | None = None, prefix: str = ""):
        self.rng = rng
        self.params = params if params is not None else {}
        self.prefix = prefix

    def child(self, name: str) -> "Init":
        return Init(self.rng, self.params, f"{self.prefix}{name}.")

    def _put(self, name: str, arr) -> Tensor:
        key = self.prefix + name
        if key in self.params:
            raise KeyError(f"duplicate parameter {key}")
        t = Tensor(arr, requires_grad=True)
        self.params[key] = t
        return t

    def weight(self, name: str, fan_in: int, fan_out: int, shape=None, gain: float = 1.0) -> Tensor:
        shape = shape or (fan_in, fan_out)
        bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
        return self._put(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape) -> Tensor:
        return self._put(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self._put(name, np.ones(shape))

    def normal(self, name: str, shape, std: float) -> Tensor:
        return self._put(name, self.rng.normal(0.0, std, size=shape))


def init_linear(init: Init, name: str, d_in: int, d_out: int, bias: bool = True) -> None:
    sub = init.child(name)
    sub.weight("w", d_in, d_out)
    if bias:
        sub.zeros("b", (d_out,))


def apply_linear(p: Params, x: Tensor) -> Tensor:
    return linear(x, p["w"], p.get("b"))


def init_layer_norm(init: Init, name: str, dim: int) -> None:
    sub = init.child(name)
    sub.ones("g", (dim,))
    sub.zeros("b", (dim,))


def apply_layer_norm(p: Params, x: Tensor) -> Tensor:
    return layer_norm(x, p["g"], p["b"])


MASKED = -1e9


def _key_bias(key_mask: np.ndarray, shape) -> Tensor:
    """Additive score bias hiding keys where ``key_mask`` is False; ``key_mask`` is (..., Tk)."""
    km = np.asarray(key_mask, dtype=bool)
    km = km.reshape(km.shape[:-1] + (1,) * (len(shape) - km.ndim) + km.shape[-1:])
    return Tensor(np.ascontiguousarray(np.broadcast_to(np.where(km, 0.0, MASKED), shape)))


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, scale_factor: float | None = None,
                                 return_weights: bool = False, key_mask: np.ndarray | None = None):
    """softmax(Q Kᵀ / √d) V over the last two axes.

    ``key_mask`` (batch dims + (Tk,), True = attend) removes keys from the
    softmax; a query whose keys are all masked attends uniformly.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key feature dims differ: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value sequence lengths differ: {k.shape[-2]} vs {v.shape[-2]}")
    if scale_factor is None:
        scale_factor = 1.0 / math.sqrt(q.shape[-1])
    scores = scale(matmul(q, swap_last(k)), scale_factor)
    if key_mask is not None:
        scores = add(scores, _key_bias(key_mask, scores.shape))
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, t, d = x.shape
    x = reshape(x, tuple(lead) + (t, h, d // h))
    nl = len(lead)
    axes = tuple(range(nl)) + (nl + 1, nl, nl + 2)
    return transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, t, dh = x.shape
    nl = len(lead)
    axes = tuple(range(nl)) + (nl + 1, nl, nl + 2)
    x = transpose(x, axes)
    return reshape(x, tuple(lead) + (t, h * dh))


def init_mha(init: Init, name: str, cfg: AttentionConfig) -> None:
    sub = init.child(name)
    d = cfg.model_dim
    for w in ("wq", "wk", "wv", "wo"):
        sub.weight(w, d, d)


def multi_head_attention(q_in: Tensor, k_in: Tensor, v_in: Tensor, cfg: AttentionConfig,
                         weights: Params, key_mask: np.ndarray | None = None) -> Tensor:
    """Concat(head_1..head_h) W_o with per-head scaled dot-product attention.

    ``key_mask`` has the input batch dims plus the key length; it is shared
    by all heads.
    """
    d = cfg.model_dim
    for name, t in (("query", q_in), ("key", k_in), ("value", v_in)):
        if t.shape[-1] != d:
            raise ValueError(f"{name} last dim {t.shape[-1]} != model_dim {d}")
    h = cfg.num_heads
    q = _split_heads(matmul(q_in, weights["wq"]), h)
    k = _split_heads(matmul(k_in, weights["wk"]), h)
    v = _split_heads(matmul(v_in, weights["wv"]), h)
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool)
        key_mask = km.reshape(km.shape[:-1] + (1,) + km.shape[-1:])  # head axis
    heads = scaled_dot_product_attention(q, k, v, 1.0 / math.sqrt(cfg.head_dim), key_mask=key_mask)
    return matmul(_merge_heads(heads), weights["wo"])


def init_feed_forward(init: Init, name: str, dim: int, hidden: int) -> None:
    sub = init.child(name)
    init_linear(sub, "fc1", dim, hidden)
    init_linear(sub, "fc2", hidden, dim)


def feed_forward(p: Params, x: Tensor, activation: str = "gelu") -> Tensor:
    act = gelu if activation == "gelu" else relu
    return apply_linear(scope(p, "fc2"), act(apply_linear(scope(p, "fc1"), x)))


def residual(x: Tensor, y: Tensor) -> Tensor:
    return add(x, y)


__all__ = [
    "AttentionConfig", "Init", "Params", "apply_layer_norm", "apply_linear", "concat",
    "feed_forward", "init_feed_forward", "init_layer_norm", "init_linear", "init_mha",
    "multi_head_attention", "residual", "scaled_dot_product_attention", "scope",
]

"""Bidirectional cross-modal attention between visual and point features, and the beam head."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import (AttentionConfig, Init, Params, Tensor, apply_layer_norm, apply_linear, concat,
                       init_layer_norm, init_linear, init_mha, mean, mul, multi_head_attention, relu, scope,
                       softmax, sum_, tensor)

DIRECTIONS = ("p->v", "v->p")


@dataclass(frozen=True)
class FusionConfig:
    d_z: int = 64
    n_heads: int = 8
    hidden: tuple[int, ...] = (128, 64)
    n_beams: int = 64

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.d_z, self.n_heads)


def init_fusion(init: Init, cfg: FusionConfig, d_v: int, d_p: int) -> None:
    init_linear(init, "proj_v", d_v, cfg.d_z)
    init_linear(init, "proj_p", d_p, cfg.d_z)
    for direction in DIRECTIONS:
        init_mha(init, _dir_key(direction), cfg.attention)
    init_layer_norm(init, "ln", 2 * cfg.d_z)


def _dir_key(direction: str) -> str:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return "cross_pv" if direction == "p->v" else "cross_vp"


def embed_for_fusion(z_v: Tensor, z_p: Tensor, weights: Params) -> tuple[Tensor, Tensor]:
    """Project both modalities to the shared width d_z."""
    return apply_linear(scope(weights, "proj_v"), z_v), apply_linear(scope(weights, "proj_p"), z_p)


def cross_modal_mha(query_feat: Tensor, kv_feat: Tensor, cfg: FusionConfig, weights: Params,
                    direction: str, key_mask: np.ndarray | None = None) -> Tensor:
    """Queries from one modality attend over keys/values of the other.

    ``"p->v"`` takes queries from the visual side and keys/values from points;
    ``"v->p"`` is the reverse.  Output length follows the query sequence.
    ``key_mask`` (N, T_kv) hides invalid key tokens.
    """
    return multi_head_attention(query_feat, kv_feat, kv_feat, cfg.attention, scope(weights, _dir_key(direction)),
                                key_mask=key_mask)


def _masked_mean(x: Tensor, valid: np.ndarray | None) -> Tensor:
    if valid is None:
        return mean(x, axis=1)
    w = valid.astype(float)
    w = w / np.maximum(w.sum(axis=1, keepdims=True), 1.0)
    return sum_(mul(x, tensor(np.ascontiguousarray(np.broadcast_to(w[..., None], x.shape)))), axis=1)


def fuse(zv_emb: Tensor, zp_emb: Tensor, cfg: FusionConfig, weights: Params,
         p_valid: np.ndarray | None = None) -> Tensor:
    """Z_vp = LayerNorm(concat(F_pv, F_vp)) from already-embedded features.

    Inputs are token sequences (N, T, d_z) or vectors (N, d_z); a vector is a
    length-1 sequence.  Each direction's output is mean-pooled over its tokens
    before the concatenation, giving (N, 2·d_z).  ``p_valid`` (N, T_p) marks
    real point tokens: padding is hidden from the keys and left out of the pool.
    """
    ev, ep = zv_emb, zp_emb
    if ev.ndim == 2:
        ev = ev.reshape(ev.shape[0], 1, ev.shape[1])
    if ep.ndim == 2:
        ep = ep.reshape(ep.shape[0], 1, ep.shape[1])
    if p_valid is not None:
        p_valid = np.asarray(p_valid, dtype=bool)
        if p_valid.shape != ep.shape[:2]:
            raise ValueError(f"p_valid shape {p_valid.shape} does not match point tokens {ep.shape[:2]}")
    f_pv = cross_modal_mha(ev, ep, cfg, weights, "p->v", key_mask=p_valid)
    f_vp = cross_modal_mha(ep, ev, cfg, weights, "v->p")
    z = concat([mean(f_pv, axis=1), _masked_mean(f_vp, p_valid)], axis=-1)
    return apply_layer_norm(scope(weights, "ln"), z)


def init_mlp_head(init: Init, d_in: int, hidden, n_beams: int) -> None:
    d = d_in
    for i, h in enumerate(hidden):
        init_linear(init, f"fc{i}", d, h)
        init_layer_norm(init, f"ln{i}", h)
        d = h
    init_linear(init, "out", d, n_beams)


def mlp_head(x: Tensor, weights: Params, n_hidden: int) -> Tensor:
    """[Linear → LayerNorm → ReLU] × n_hidden → Linear; returns logits."""
    for i in range(n_hidden):
        x = relu(apply_layer_norm(scope(weights, f"ln{i}"), apply_linear(scope(weights, f"fc{i}"), x)))
    return apply_linear(scope(weights, "out"), x)


def beam_logits(z_g: Tensor, z_vp: Tensor, weights: Params, n_hidden: int = 2) -> Tensor:
    """Logits over the codebook from concat(Z_g, Z_vp)."""
    return mlp_head(concat([z_g, z_vp], axis=-1), weights, n_hidden)


def beam_head(z_g: Tensor, z_vp: Tensor, cfg: FusionConfig, weights: Params) -> "BeamPrediction":
    return BeamPrediction.from_logits(beam_logits(z_g, z_vp, weights, len(cfg.hidden)))


def topk_indices(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries per row, descending; ties go to the lower index."""
    probs = np.asarray(probs)
    k = min(k, probs.shape[-1])
    return np.argsort(-probs, axis=-1, kind="stable")[..., :k]


@dataclass
class BeamPrediction:
    probs: np.ndarray  # (N, K), rows sum to one

    @classmethod
    def from_logits(cls, logits) -> "BeamPrediction":
        t = logits if isinstance(logits, Tensor) else Tensor(logits)
        return cls(softmax(t.detach(), axis=-1).data)

    def topk(self, k: int) -> np.ndarray:
        if not 1 <= k <= self.probs.shape[-1]:
            raise ValueError(f"k must lie in [1, {self.probs.shape[-1]}], got {k}")
        return topk_indices(self.probs, k)

    def argmax(self) -> np.ndarray:
        return self.topk(1)[:, 0]


def write_predictions(path, probs: np.ndarray, labels) -> None:
    """CSV dump: sample_index, label, then one probability column per beam."""
    probs = np.asarray(probs)
    with open(Path(path), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_index", "label"] + [f"p_{b}" for b in range(probs.shape[1])])
        for i, (row, lab) in enumerate(zip(probs, labels)):
            w.writerow([i, int(lab)] + [repr(float(x)) for x in row])


def read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 2:], data[:, 1].astype(np.int64)

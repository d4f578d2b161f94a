"""Full predictors: the fused multimodal model and the two ablation baselines."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .encoders import (PointEncoderConfig, PositionEncoderConfig, VisualEncoderConfig, init_point_encoder,
                       init_position_encoder, init_visual_encoder, point_encode, point_tokens, position_encode,
                       visual_encode)
from .fusion import (BeamPrediction, FusionConfig, beam_logits, embed_for_fusion, fuse, init_fusion, init_mlp_head,
                     mlp_head)
from .numerics import Init, Params, Tensor, concat, no_grad, scope, softmax, tensor
from .preprocess import Batch, PreprocessedSample

VARIANTS = ("proposed", "baseline1", "baseline2")


@dataclass
class ModelConfig:
    variant: str = "proposed"
    n_beams: int = 64
    position: PositionEncoderConfig = field(default_factory=PositionEncoderConfig)
    visual: VisualEncoderConfig = field(default_factory=VisualEncoderConfig)
    point: PointEncoderConfig = field(default_factory=PointEncoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    sequence_fusion: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.fusion.n_beams != self.n_beams:
            self.fusion = FusionConfig(self.fusion.d_z, self.fusion.n_heads, self.fusion.hidden, self.n_beams)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        subs = {"position": PositionEncoderConfig, "visual": VisualEncoderConfig, "point": PointEncoderConfig,
                "fusion": FusionConfig}
        for key, typ in subs.items():
            if key in d and isinstance(d[key], dict):
                vals = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d[key].items()}
                d[key] = typ(**vals)
        return cls(**d)


class BeamModel:
    """Parameter container plus forward pass for one variant."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        init = Init(np.random.default_rng([seed, 7]))
        init_position_encoder(init.child("position"), cfg.position)
        hidden = cfg.fusion.hidden
        if cfg.variant == "baseline1":
            init_mlp_head(init.child("head"), cfg.position.embed_dim, hidden, cfg.n_beams)
        else:
            init_visual_encoder(init.child("visual"), cfg.visual)
            init_point_encoder(init.child("point"), cfg.point)
            if cfg.variant == "proposed":
                init_fusion(init.child("fusion"), cfg.fusion, cfg.visual.out_dim, cfg.point.embed_dim)
                d_in = cfg.position.embed_dim + 2 * cfg.fusion.d_z
            else:
                d_in = cfg.position.embed_dim + cfg.visual.out_dim + cfg.point.embed_dim
            init_mlp_head(init.child("head"), d_in, hidden, cfg.n_beams)
        self.params: Params = init.params

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def forward(self, batch: Batch) -> Tensor:
        """Logits (N, n_beams)."""
        cfg = self.cfg
        p = self.params
        z_g = position_encode(tensor(batch.gps), cfg.position, scope(p, "position"))
        n_hidden = len(cfg.fusion.hidden)
        if cfg.variant == "baseline1":
            return mlp_head(z_g, scope(p, "head"), n_hidden)
        seq = cfg.variant == "proposed" and cfg.sequence_fusion
        z_v = visual_encode(tensor(batch.images), cfg.visual, scope(p, "visual"), pool=not seq)
        p_valid = None
        if seq:
            z_p, p_valid = point_tokens(batch.points, cfg.point, scope(p, "point"))
            p_valid = p_valid if cfg.point.mask_padding else None
        else:
            z_p = point_encode(batch.points, cfg.point, scope(p, "point"))
        if cfg.variant == "baseline2":
            return mlp_head(concat([z_g, z_v, z_p], axis=-1), scope(p, "head"), n_hidden)
        fw = scope(p, "fusion")
        zv_emb, zp_emb = embed_for_fusion(z_v, z_p, fw)
        z_vp = fuse(zv_emb, zp_emb, cfg.fusion, fw, p_valid)
        return beam_logits(z_g, z_vp, scope(p, "head"), n_hidden)

    def predict_proba(self, batch: Batch, batch_size: int = 32) -> np.ndarray:
        out = []
        with no_grad():
            for start in range(0, len(batch), batch_size):
                part = batch.take(np.arange(start, min(start + batch_size, len(batch))))
                out.append(softmax(self.forward(part), axis=-1).data)
        return np.concatenate(out) if out else np.zeros((0, self.cfg.n_beams))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint is missing parameters: {sorted(missing)[:5]}")
        for k, v in self.params.items():
            if arrays[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {arrays[k].shape} vs {v.shape}")
            v.data = np.array(arrays[k], dtype=np.float64)


def predict_topk(model: BeamModel, sample: PreprocessedSample, k: int) -> np.ndarray:
    """Ranked top-k beams for one preprocessed sample."""
    if not 1 <= k <= model.cfg.n_beams:
        raise ValueError(f"k must lie in [1, {model.cfg.n_beams}], got {k}")
    batch = Batch(sample.gps_norm[None], sample.image_tensor[None], sample.points_tensor[None],
                  np.array([sample.label]))
    return BeamPrediction(model.predict_proba(batch)).topk(k)[0]

"""Coordinate scaling, image resize + standardization, point-count fixing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class PreprocConfigError(ValueError):
    pass


@dataclass
class PreprocConfig:
    gps_min: tuple[float, float] = (0.0, 0.0)
    gps_max: tuple[float, float] = (1.0, 1.0)
    image_size: tuple[int, int] = (32, 32)
    channel_mean: tuple[float, float, float] = IMAGENET_MEAN
    channel_std: tuple[float, float, float] = IMAGENET_STD
    n_points: int = 256
    pad_value: float = 0.0
    downsample_seed: int = 0

    def __post_init__(self):
        if self.n_points < 1:
            raise PreprocConfigError("n_points must be >= 1")

    @classmethod
    def fit_gps(cls, gps: np.ndarray, **kw) -> "PreprocConfig":
        """Freeze min/max from (training-split) GPS readings of shape (N, 2)."""
        gps = np.asarray(gps, dtype=float)
        return cls(gps_min=tuple(map(float, gps.min(axis=0))), gps_max=tuple(map(float, gps.max(axis=0))), **kw)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass
class PreprocessedSample:
    gps_norm: np.ndarray      # (2,)
    image_tensor: np.ndarray  # (3, H, W)
    points_tensor: np.ndarray  # (n_points, 3)
    label: int


def normalize_gps(raw, cfg: PreprocConfig) -> np.ndarray:
    lo = np.asarray(cfg.gps_min, dtype=float)
    hi = np.asarray(cfg.gps_max, dtype=float)
    if np.any(hi <= lo):
        raise PreprocConfigError(f"degenerate GPS range: min={cfg.gps_min} max={cfg.gps_max}")
    x = (np.asarray(raw, dtype=float) - lo) / (hi - lo)
    return np.clip(x, 0.0, 1.0)


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation weights, half-pixel centres, edge clamped."""
    m = np.zeros((n_out, n_in))
    if n_in == n_out:
        return np.eye(n_in)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an (H, W, C) float array to ``size`` = (H', W')."""
    h, w = img.shape[:2]
    ry = _bilinear_matrix(h, size[0])
    rx = _bilinear_matrix(w, size[1])
    tmp = np.tensordot(ry, img, axes=(1, 0))                  # (H', W, C)
    return np.tensordot(tmp, rx, axes=(1, 1)).transpose(0, 2, 1)  # (H', W', C)


def preprocess_image(img: np.ndarray, cfg: PreprocConfig) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    x = img.astype(np.float64) / 255.0
    x = resize_bilinear(x, tuple(cfg.image_size))
    x = (x - np.asarray(cfg.channel_mean)) / np.asarray(cfg.channel_std)
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def fix_pointcloud(points, cfg: PreprocConfig, seed=None) -> np.ndarray:
    """Pad with ``pad_value`` rows or randomly drop rows to exactly ``n_points``.

    Retained points keep their original relative order.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = cfg.n_points
    m = len(pts)
    if m == n:
        return pts.copy()
    if m < n:
        return np.concatenate([pts, np.full((n - m, 3), cfg.pad_value, dtype=np.float64)])
    rng = np.random.default_rng(cfg.downsample_seed if seed is None else seed)
    keep = np.sort(rng.choice(m, size=n, replace=False))
    return pts[keep]


def preprocess_sample(sample, cfg: PreprocConfig, seed=None) -> PreprocessedSample:
    return PreprocessedSample(normalize_gps(sample.gps, cfg), preprocess_image(sample.image, cfg),
                              fix_pointcloud(sample.points, cfg, seed), int(sample.label))


@dataclass
class Batch:
    """Stacked preprocessed arrays for a set of samples."""

    gps: np.ndarray     # (N, 2)
    images: np.ndarray  # (N, 3, H, W)
    points: np.ndarray  # (N, P, 3)
    labels: np.ndarray  # (N,)
    powers: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # (N, K)

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx)
        powers = self.powers[idx] if len(self.powers) else self.powers
        return Batch(self.gps[idx], self.images[idx], self.points[idx], self.labels[idx], powers)


def preprocess_many(samples, cfg: PreprocConfig, indices=None) -> Batch:
    """Preprocess a sequence of samples; per-sample downsampling seed = cfg seed + index."""
    samples = list(samples)
    indices = range(len(samples)) if indices is None else indices
    pre = [preprocess_sample(s, cfg, seed=(cfg.downsample_seed, int(i))) for s, i in zip(samples, indices)]
    return Batch(np.stack([p.gps_norm for p in pre]), np.stack([p.image_tensor for p in pre]),
                 np.stack([p.points_tensor for p in pre]), np.array([p.label for p in pre], dtype=np.int64),
                 np.stack([np.asarray(s.powers, dtype=float) for s in samples]))

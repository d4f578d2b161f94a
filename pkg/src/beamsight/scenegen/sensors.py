"""Pseudo-camera rasterizer and LiDAR ray caster.

The camera is a pinhole at the receiver looking along +y; image columns grow
toward +x.  Geometry and colours here are artifact conventions, chosen so
that the transmitter's column is a strictly monotone function of azimuth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box, Pose, Scene, ray_box_distances

SKY = np.array([150.0, 190.0, 230.0])
GROUND = np.array([95.0, 95.0, 90.0])
COLORS = {
    "building": np.array([140.0, 112.0, 92.0]),
    "parked": np.array([40.0, 60.0, 120.0]),
    "pole": np.array([70.0, 70.0, 70.0]),
    "obstacle": np.array([60.0, 90.0, 60.0]),
    "transmitter": np.array([250.0, 210.0, 30.0]),
}


@dataclass(frozen=True)
class CameraConfig:
    height: int = 64
    width: int = 64
    hfov_deg: float = 100.0
    noise_sigma: float = 2.0  # byte units, day

    @property
    def focal(self) -> float:
        return (self.width / 2) / np.tan(np.radians(self.hfov_deg) / 2)


@dataclass(frozen=True)
class LidarConfig:
    n_azimuth_rays: int = 128
    n_elevation_rays: int = 8
    max_range: float = 25.0
    azimuth_fov_deg: float = 120.0
    elevation_min_deg: float = -20.0
    elevation_max_deg: float = 5.0

    def __post_init__(self):
        if self.n_azimuth_rays < 1 or self.n_elevation_rays < 1:
            raise ValueError("ray counts must be >= 1")


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    j = np.arange(n)
    return np.clip(np.minimum(j + 1, hi) - np.maximum(j, lo), 0.0, 1.0)


def _project_box(box: Box, cam_h: float, cfg: CameraConfig):
    c = box.corners()
    c = c[c[:, 1] > 0.1]
    if len(c) == 0:
        return None
    f = cfg.focal
    u = cfg.width / 2 + f * c[:, 0] / c[:, 1]
    v = cfg.height / 2 - f * (c[:, 2] - cam_h) / c[:, 1]
    return u.min(), u.max(), v.min(), v.max()


def render_pseudo_image(scene: Scene, tx_pose: Pose | None, cfg: CameraConfig, seed=0) -> np.ndarray:
    """Deterministic RGB raster (H, W, 3) uint8 of the scene seen from the receiver."""
    h, w = cfg.height, cfg.width
    img = np.empty((h, w, 3))
    horizon = h / 2
    rows = np.arange(h)[:, None]
    img[:] = np.where(rows < horizon, 1.0, 0.0)[..., None] * SKY + np.where(rows < horizon, 0.0, 1.0)[..., None] * GROUND

    boxes = list(scene.obstacles)
    if tx_pose is not None:
        boxes.append(scene.vehicle_box(tx_pose))
    # painter's order: farthest first
    boxes.sort(key=lambda b: -np.hypot(*b.center[:2]))
    for box in boxes:
        proj = _project_box(box, scene.camera_height, cfg)
        if proj is None:
            continue
        u0, u1, v0, v1 = proj
        alpha = np.outer(_coverage(v0, v1, h), _coverage(u0, u1, w))
        if not alpha.any():
            continue
        img = img * (1.0 - alpha[..., None]) + COLORS.get(box.kind, COLORS["obstacle"]) * alpha[..., None]

    sigma = cfg.noise_sigma
    if scene.lighting == "night":
        img = img * 0.5
        sigma = 2 * sigma
    if sigma > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def vehicle_column(image: np.ndarray) -> float:
    """Column centroid (pixel-index units) of the yellow transmitter blob; NaN if absent."""
    im = image.astype(float)
    score = np.clip(im[..., 0] + im[..., 1] - 2.0 * im[..., 2] - 120.0, 0.0, None)
    total = score.sum()
    if total == 0:
        return float("nan")
    cols = np.arange(image.shape[1])
    return float((score.sum(axis=0) * cols).sum() / total)


def lidar_directions(cfg: LidarConfig) -> np.ndarray:
    half = np.radians(cfg.azimuth_fov_deg) / 2
    az = np.linspace(-half, half, cfg.n_azimuth_rays) if cfg.n_azimuth_rays > 1 else np.zeros(1)
    if cfg.n_elevation_rays > 1:
        el = np.radians(np.linspace(cfg.elevation_min_deg, cfg.elevation_max_deg, cfg.n_elevation_rays))
    else:
        el = np.zeros(1)
    A, E = np.meshgrid(az, el, indexing="xy")
    A, E = A.ravel(), E.ravel()
    return np.stack([np.sin(A) * np.cos(E), np.cos(A) * np.cos(E), np.sin(E)], axis=1)


def cast_lidar(scene: Scene, cfg: LidarConfig, tx_pose: Pose | None = None, boxes=None) -> np.ndarray:
    """Nearest box hit per ray, returned as (M, 3) points in the sensor frame."""
    if boxes is None:
        boxes = list(scene.obstacles)
        if tx_pose is not None:
            boxes.append(scene.vehicle_box(tx_pose))
    dirs = lidar_directions(cfg)
    if not boxes:
        return np.zeros((0, 3))
    origin = np.array([0.0, 0.0, scene.lidar_height])
    dist = ray_box_distances(origin, dirs, boxes).min(axis=1)
    keep = dist <= cfg.max_range
    return dirs[keep] * dist[keep, None]

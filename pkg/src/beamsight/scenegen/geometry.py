"""Scene primitives: axis-aligned boxes, trajectories, ray casting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    kind: str = "obstacle"

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box extents must be positive: {self.lo} -> {self.hi}")

    @classmethod
    def centered(cls, cx, cy, length_x, width_y, height, z0=0.0, kind="obstacle") -> "Box":
        return cls((cx - length_x / 2, cy - width_y / 2, z0),
                   (cx + length_x / 2, cy + width_y / 2, z0 + height), kind)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2

    def corners(self) -> np.ndarray:
        lo, hi = self.lo, self.hi
        return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


@dataclass(frozen=True)
class Pose:
    t: float
    x: float
    y: float
    heading: float  # radians, world frame, 0 = +x


@dataclass
class Scene:
    """Everything needed to synthesize one recording, in the receiver's sensor frame.

    The receiver sits at the origin with its array boresight along +y; azimuth is
    measured from +y toward +x.  ``receiver_pose``/``receiver_speed`` place that
    frame in the world for GPS conversion.
    """

    mode: str = "V2I"            # V2I | V2V
    lighting: str = "day"        # day | night
    receiver_pose: tuple[float, float, float] = (0.0, 0.0, np.pi / 2)  # world x, y (east, north), heading
    receiver_speed: float = 0.0  # m/s along heading (V2V ego motion)
    waypoints: list[tuple[float, float]] = field(default_factory=list)
    speed: float = 5.0           # transmitter speed along the polyline, m/s
    obstacles: list[Box] = field(default_factory=list)
    vehicle_size: tuple[float, float, float] = (4.5, 1.8, 1.5)
    camera_height: float = 4.0
    lidar_height: float = 2.0
    antenna_height: float = 4.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("V2I", "V2V"):
            raise ValueError(f"unknown mode {self.mode}")
        if self.lighting not in ("day", "night"):
            raise ValueError(f"unknown lighting {self.lighting}")

    def vehicle_box(self, pose: Pose) -> Box:
        """Transmitter body as an axis-aligned box aligned with the dominant heading axis."""
        length, width, height = self.vehicle_size
        along_x = abs(np.cos(pose.heading)) >= abs(np.sin(pose.heading))
        lx, ly = (length, width) if along_x else (width, length)
        return Box.centered(pose.x, pose.y, lx, ly, height, kind="transmitter")


def simulate_trajectory(scene: Scene, n_samples: int, dt: float = 0.1) -> list[Pose]:
    """Constant-speed motion along the waypoint polyline, sampled every ``dt`` seconds.

    Motion stops at the final waypoint.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not scene.waypoints:
        raise ValueError("trajectory has no waypoints")
    pts = np.asarray(scene.waypoints, dtype=float)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1]) if len(pts) > 1 else np.zeros(0)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    poses = []
    last_heading = float(np.arctan2(seg[0, 1], seg[0, 0])) if len(seg) and seg_len[0] > 0 else 0.0
    for i in range(n_samples):
        t = i * dt
        s = min(scene.speed * t, total)
        if total == 0 or len(seg_len) == 0:
            poses.append(Pose(t, float(pts[0, 0]), float(pts[0, 1]), last_heading))
            continue
        k = int(np.searchsorted(cum, s, side="right") - 1)
        k = min(max(k, 0), len(seg_len) - 1)
        while seg_len[k] == 0 and k > 0:
            k -= 1
        frac = 0.0 if seg_len[k] == 0 else (s - cum[k]) / seg_len[k]
        p = pts[k] + frac * seg[k]
        if seg_len[k] > 0:
            last_heading = float(np.arctan2(seg[k, 1], seg[k, 0]))
        poses.append(Pose(t, float(p[0]), float(p[1]), last_heading))
    return poses


def ray_box_distances(origin: np.ndarray, dirs: np.ndarray, boxes: list[Box]) -> np.ndarray:
    """Slab-method hit distance for every (ray, box) pair; inf on miss.

    A ray starting inside a box reports the distance to the exit face.
    """
    if not boxes:
        return np.full((len(dirs), 0), np.inf)
    lo = np.array([b.lo for b in boxes])  # (B, 3)
    hi = np.array([b.hi for b in boxes])
    o = np.asarray(origin, dtype=float)
    d = dirs[:, None, :]  # (R, 1, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None] - o) / d
        t2 = (hi[None] - o) / d
    parallel = d == 0
    inside_slab = (o >= lo) & (o <= hi)  # (B, 3)
    tmin = np.where(parallel, np.where(inside_slab[None], -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(parallel, np.where(inside_slab[None], np.inf, -np.inf), np.maximum(t1, t2))
    t_near = tmin.max(axis=2)
    t_far = tmax.min(axis=2)
    hit = (t_near <= t_far) & (t_far >= 0)
    t = np.where(t_near >= 0, t_near, t_far)
    return np.where(hit, t, np.inf)

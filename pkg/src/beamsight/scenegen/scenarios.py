"""Built-in V2I / V2V scene layouts, day and night."""
from __future__ import annotations

import numpy as np

from .geometry import Box, Scene

SCENARIOS = ("v2i-day", "v2i-night", "v2v-day", "v2v-night")

# keep the transmitter centre inside the ±45° codebook sector with a small margin
_EDGE = np.tan(np.radians(43.0))


def _v2i(lighting: str, seed: int, n_passes: int) -> Scene:
    rng = np.random.default_rng([seed, 101])
    waypoints = []
    direction = 1
    for _ in range(n_passes):
        lane = float(rng.uniform(10.0, 18.0))
        reach = lane * _EDGE
        start, end = -direction * reach, direction * reach
        waypoints += [(start, lane), (end, lane)]
        direction = -direction
    obstacles = [
        Box.centered(-14.0, 30.0, 12.0, 6.0, 9.0, kind="building"),
        Box.centered(2.0, 32.0, 14.0, 6.0, 12.0, kind="building"),
        Box.centered(19.0, 29.0, 10.0, 6.0, 7.0, kind="building"),
        Box.centered(-7.0, 21.0, 4.4, 1.8, 1.4, kind="parked"),
        Box.centered(9.0, 21.5, 4.6, 1.8, 1.5, kind="parked"),
        Box.centered(-9.5, 4.0, 0.4, 0.4, 5.0, kind="pole"),
    ]
    return Scene(mode="V2I", lighting=lighting, receiver_pose=(0.0, 0.0, np.pi / 2), waypoints=waypoints,
                 speed=5.0, obstacles=obstacles, camera_height=4.0, lidar_height=2.0, antenna_height=4.0,
                 rng_seed=seed)


def _v2v(lighting: str, seed: int, n_passes: int) -> Scene:
    """Receiver vehicle drives with a lead transmitter wandering ahead (relative frame)."""
    rng = np.random.default_rng([seed, 202])
    waypoints = []
    for _ in range(n_passes * 3):
        ahead = float(rng.uniform(8.0, 30.0))
        lateral = float(np.clip(rng.uniform(-7.0, 7.0), -ahead * _EDGE, ahead * _EDGE))
        waypoints.append((lateral, ahead))
    obstacles = [
        Box.centered(-3.6, 12.0, 1.8, 4.5, 1.5, kind="parked"),
        Box.centered(3.6, 24.0, 1.8, 4.5, 1.6, kind="parked"),
        Box.centered(-11.0, 20.0, 2.0, 40.0, 1.0, kind="obstacle"),
    ]
    heading = float(np.radians(60.0))
    return Scene(mode="V2V", lighting=lighting, receiver_pose=(0.0, 0.0, heading), receiver_speed=12.0,
                 waypoints=waypoints, speed=3.0, obstacles=obstacles, camera_height=1.5, lidar_height=1.8,
                 antenna_height=1.5, rng_seed=seed)


def make_scene(scenario: str, seed: int = 0, n_passes: int = 80) -> Scene:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    mode, lighting = scenario.split("-")
    build = _v2i if mode == "v2i" else _v2v
    return build(lighting, seed, n_passes)

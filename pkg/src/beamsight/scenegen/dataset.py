"""Synthetic multimodal dataset generation and the on-disk format.

Directory layout::

    manifest.json   schema version, scenario, count, record offsets, sha256, config echo, seed
    samples.bin     length-prefixed little-endian records (see ``pack_sample``)
    labels.csv      index,label,power_max

Record body, in order: f64 timestamp, f64 latitude, f64 longitude, u16 label,
u16 K, K×f64 powers, u16 H, u16 W, H·W·3 u8 image (row-major RGB),
u32 n_points, n_points×3 f64 points (x, y, z).
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from ..channel import (CodebookConfig, OfdmConfig, PathSet, make_codebook, optimal_beam,
                       received_power, synth_channel)
from .geometry import Pose, Scene, simulate_trajectory
from .sensors import CameraConfig, LidarConfig, cast_lidar, render_pseudo_image

SCHEMA_VERSION = 1
EARTH_RADIUS = 6_378_137.0


class DatasetError(ValueError):
    """Corrupt, truncated, or schema-incompatible dataset."""


@dataclass
class GeneratorConfig:
    dt: float = 0.1
    gps_noise_m: float = 1.0
    gps_origin: tuple[float, float] = (33.4255, -111.9400)
    max_reflections: int = 3
    reflection_gain: tuple[float, float] = (0.05, 0.3)
    reflection_delay_symbols: float = 5.0
    point_cap: int = 4096
    camera: CameraConfig = field(default_factory=CameraConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    codebook: CodebookConfig = field(default_factory=CodebookConfig)
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        sub = {"camera": CameraConfig, "lidar": LidarConfig, "codebook": CodebookConfig, "ofdm": OfdmConfig}
        for key, typ in sub.items():
            if key in d and isinstance(d[key], dict):
                d[key] = typ(**d[key])
        for key in ("gps_origin", "reflection_gain"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Sample:
    gps: tuple[float, float]
    image: np.ndarray   # (H, W, 3) uint8
    points: np.ndarray  # (M, 3) float64
    powers: np.ndarray  # (K,) float64
    label: int
    timestamp: float

    def equals(self, other: "Sample") -> bool:
        return (self.gps == other.gps and self.label == other.label and self.timestamp == other.timestamp
                and np.array_equal(self.image, other.image) and np.array_equal(self.points, other.points)
                and np.array_equal(self.powers, other.powers))


@dataclass
class DatasetManifest:
    schema_version: int
    scenario: str
    count: int
    offsets: list[int]
    sha256: str
    seed: int
    config: dict
    gps_range: dict

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)


# ---------------------------------------------------------------------------
# coordinates
# ---------------------------------------------------------------------------

def enu_to_latlon(east: float, north: float, origin: tuple[float, float]) -> tuple[float, float]:
    lat0, lon0 = origin
    lat = lat0 + np.degrees(north / EARTH_RADIUS)
    lon = lon0 + np.degrees(east / (EARTH_RADIUS * np.cos(np.radians(lat0))))
    return float(lat), float(lon)


def transmitter_world_position(scene: Scene, pose: Pose) -> tuple[float, float]:
    """Sensor-frame pose → world east/north (receiver frame has boresight along +y)."""
    rx, ry, heading = scene.receiver_pose
    fwd = scene.receiver_speed * pose.t
    ox, oy = rx + fwd * np.cos(heading), ry + fwd * np.sin(heading)
    # sensor +y is the heading direction, sensor +x is 90° clockwise of it
    right = heading - np.pi / 2
    east = ox + pose.y * np.cos(heading) + pose.x * np.cos(right)
    north = oy + pose.y * np.sin(heading) + pose.x * np.sin(right)
    return float(east), float(north)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def los_geometry(scene: Scene, pose: Pose) -> tuple[float, float, float]:
    """(range, azimuth, elevation) of the transmitter antenna seen from the receiver array."""
    height = scene.vehicle_size[2]
    dz = height - scene.antenna_height
    horiz = float(np.hypot(pose.x, pose.y))
    return float(np.hypot(horiz, dz)), float(np.arctan2(pose.x, pose.y)), float(np.arctan2(dz, horiz))


def build_paths(scene: Scene, pose: Pose, cfg: GeneratorConfig, rng: np.random.Generator,
                los_only: bool = False) -> PathSet:
    cb = cfg.codebook
    dist, az, el = los_geometry(scene, pose)
    los_gain = cb.wavelength / (4 * np.pi * dist) * np.exp(-2j * np.pi * dist / cb.wavelength)
    gains, delays, azs, els = [los_gain], [0.0], [az], [el]
    n_refl = 0 if los_only else int(rng.integers(0, cfg.max_reflections + 1))
    lo, hi = cfg.reflection_gain
    for _ in range(n_refl):
        mag = rng.uniform(lo, hi) * abs(los_gain)
        gains.append(mag * np.exp(2j * np.pi * rng.uniform()))
        azs.append(rng.uniform(cb.azimuth_min, cb.azimuth_max))
        els.append(el)
        # delay in (0, 5·T_s]
        delays.append((1.0 - rng.uniform()) * cfg.reflection_delay_symbols * cfg.ofdm.symbol_period)
    return PathSet.from_arrays(gains, delays, azs, els)


def _downsample_points(points: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if len(points) <= cap:
        return points
    keep = np.sort(rng.choice(len(points), size=cap, replace=False))
    return points[keep]


def generate_sample(scene: Scene, pose: Pose, cfg: GeneratorConfig, seed: int, index: int,
                    codebook=None, los_only: bool = False) -> Sample:
    rng = np.random.default_rng([seed, index])
    codebook = codebook if codebook is not None else make_codebook(cfg.codebook)
    paths = build_paths(scene, pose, cfg, rng, los_only)
    h = synth_channel(paths, cfg.ofdm, cfg.codebook)
    noise_seed = int(rng.integers(2**63))
    powers = received_power(h, codebook, cfg.ofdm, noise_seed)
    label = optimal_beam(powers)
    image = render_pseudo_image(scene, pose, cfg.camera, seed=int(rng.integers(2**63)))
    points = _downsample_points(cast_lidar(scene, cfg.lidar, pose), cfg.point_cap, rng)
    east, north = transmitter_world_position(scene, pose)
    if cfg.gps_noise_m > 0:
        east += rng.normal(0.0, cfg.gps_noise_m)
        north += rng.normal(0.0, cfg.gps_noise_m)
    gps = enu_to_latlon(east, north, cfg.gps_origin)
    return Sample(gps, image, points, powers, label, round(pose.t, 6))


def generate_samples(scene: Scene, n_samples: int, cfg: GeneratorConfig, seed: int,
                     los_only: bool = False) -> list[Sample]:
    poses = simulate_trajectory(scene, n_samples, cfg.dt)
    codebook = make_codebook(cfg.codebook)
    return [generate_sample(scene, p, cfg, seed, i, codebook, los_only) for i, p in enumerate(poses)]


# ---------------------------------------------------------------------------
# binary format
# ---------------------------------------------------------------------------

def pack_sample(s: Sample) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<ddd", s.timestamp, s.gps[0], s.gps[1]))
    k = len(s.powers)
    buf.write(struct.pack("<HH", s.label, k))
    buf.write(np.asarray(s.powers, dtype="<f8").tobytes())
    h, w, c = s.image.shape
    if c != 3:
        raise ValueError("image must have 3 channels")
    buf.write(struct.pack("<HH", h, w))
    buf.write(np.ascontiguousarray(s.image, dtype=np.uint8).tobytes())
    pts = np.asarray(s.points, dtype="<f8").reshape(-1, 3)
    buf.write(struct.pack("<I", len(pts)))
    buf.write(pts.tobytes())
    body = buf.getvalue()
    return struct.pack("<I", len(body)) + body


def unpack_sample(body: bytes) -> Sample:
    try:
        off = 0
        ts, lat, lon = struct.unpack_from("<ddd", body, off)
        off += 24
        label, k = struct.unpack_from("<HH", body, off)
        off += 4
        powers = np.frombuffer(body, dtype="<f8", count=k, offset=off).astype(np.float64)
        off += 8 * k
        h, w = struct.unpack_from("<HH", body, off)
        off += 4
        image = np.frombuffer(body, dtype=np.uint8, count=h * w * 3, offset=off).reshape(h, w, 3).copy()
        off += h * w * 3
        (m,) = struct.unpack_from("<I", body, off)
        off += 4
        points = np.frombuffer(body, dtype="<f8", count=3 * m, offset=off).reshape(m, 3).astype(np.float64)
        off += 24 * m
    except (struct.error, ValueError) as exc:
        raise DatasetError(f"malformed record: {exc}") from exc
    if off != len(body):
        raise DatasetError(f"record has {len(body) - off} unexpected trailing bytes")
    return Sample((lat, lon), image, points, powers, int(label), ts)


def write_dataset(out_dir, samples: list[Sample], scenario: str, seed: int, config: dict) -> DatasetManifest:
    """Write the three dataset files; the manifest goes last so a crash leaves none."""
    out = Path(out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    offsets = []
    digest = hashlib.sha256()
    pos = 0
    tmp_bin = out / "samples.bin.tmp"
    with open(tmp_bin, "wb") as fh:
        for s in samples:
            rec = pack_sample(s)
            offsets.append(pos)
            fh.write(rec)
            digest.update(rec)
            pos += len(rec)
    os.replace(tmp_bin, out / "samples.bin")
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label", "power_max"])
        for i, s in enumerate(samples):
            w.writerow([i, s.label, repr(float(np.max(s.powers)))])
    lats = [s.gps[0] for s in samples]
    lons = [s.gps[1] for s in samples]
    gps_range = {"lat_min": min(lats), "lat_max": max(lats), "lon_min": min(lons), "lon_max": max(lons)} if samples else {}
    manifest = DatasetManifest(SCHEMA_VERSION, scenario, len(samples), offsets, digest.hexdigest(),
                               seed, config, gps_range)
    tmp = out / "manifest.json.tmp"
    tmp.write_text(manifest.to_json())
    os.replace(tmp, out / "manifest.json")
    return manifest


class DatasetReader:
    """Random-access and sequential reader over a dataset directory."""

    def __init__(self, path, validate_labels: bool = True, verify_checksum: bool = True):
        self.path = Path(path)
        try:
            meta = json.loads((self.path / "manifest.json").read_text())
        except FileNotFoundError:
            raise
        except json.JSONDecodeError as exc:
            raise DatasetError(f"unreadable manifest: {exc}") from exc
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise DatasetError(f"schema version {meta.get('schema_version')} != {SCHEMA_VERSION}")
        self.manifest = DatasetManifest(**meta)
        self._blob = (self.path / "samples.bin").read_bytes()
        offs = self.manifest.offsets
        if len(offs) != self.manifest.count:
            raise DatasetError("manifest count does not match offsets")
        if any(b <= a for a, b in zip(offs, offs[1:])):
            raise DatasetError("record offsets are not strictly increasing")
        if verify_checksum and hashlib.sha256(self._blob).hexdigest() != self.manifest.sha256:
            raise DatasetError("samples.bin checksum mismatch (corrupt or truncated)")
        self.validate_labels = validate_labels

    def __len__(self) -> int:
        return self.manifest.count

    def _record(self, i: int) -> bytes:
        off = self.manifest.offsets[i]
        if off + 4 > len(self._blob):
            raise DatasetError(f"record {i} starts beyond end of samples.bin (truncated)")
        (n,) = struct.unpack_from("<I", self._blob, off)
        if off + 4 + n > len(self._blob):
            raise DatasetError(f"record {i} is truncated")
        return self._blob[off + 4:off + 4 + n]

    def __getitem__(self, i: int) -> Sample:
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        i %= len(self)
        s = unpack_sample(self._record(i))
        if self.validate_labels and s.label != optimal_beam(s.powers):
            raise DatasetError(f"record {i}: stored label {s.label} != argmax of powers")
        return s

    def __iter__(self) -> Iterator[Sample]:
        off = 0
        for i in range(len(self)):
            if off != self.manifest.offsets[i]:
                raise DatasetError(f"record {i} offset mismatch")
            if off + 4 > len(self._blob):
                raise DatasetError(f"record {i} truncated")
            (n,) = struct.unpack_from("<I", self._blob, off)
            if off + 4 + n > len(self._blob):
                raise DatasetError(f"record {i} is truncated")
            s = unpack_sample(self._blob[off + 4:off + 4 + n])
            if self.validate_labels and s.label != optimal_beam(s.powers):
                raise DatasetError(f"record {i}: stored label {s.label} != argmax of powers")
            off += 4 + n
            yield s


def read_dataset(path, validate_labels: bool = True, verify_checksum: bool = True) -> DatasetReader:
    return DatasetReader(path, validate_labels, verify_checksum)


def generate_dataset(scene: Scene, n_samples: int, cfg: GeneratorConfig, out_dir, scenario: str = "custom",
                     seed: int | None = None, los_only: bool = False) -> DatasetManifest:
    seed = scene.rng_seed if seed is None else seed
    samples = generate_samples(scene, n_samples, cfg, seed, los_only)
    echo = {"generator": cfg.to_dict(), "los_only": los_only, "n_samples": n_samples}
    return write_dataset(out_dir, samples, scenario, seed, echo)

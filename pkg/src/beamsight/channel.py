"""ULA beamsteering codebook, geometric OFDM channel, per-beam power and labels."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class CodebookConfig:
    n_rx: int = 16
    n_beams: int = 64
    wavelength: float = SPEED_OF_LIGHT / 60e9
    spacing: float | None = None  # defaults to wavelength / 2
    azimuth_min: float = -np.pi / 4
    azimuth_max: float = np.pi / 4

    def __post_init__(self):
        if self.n_beams < self.n_rx:
            raise ValueError("codebook must be oversampled (n_beams >= n_rx)")
        if self.d <= 0 or self.wavelength <= 0:
            raise ValueError("antenna spacing and wavelength must be positive")

    @property
    def d(self) -> float:
        return self.wavelength / 2 if self.spacing is None else self.spacing

    @property
    def angle_step(self) -> float:
        return (self.azimuth_max - self.azimuth_min) / (self.n_beams - 1)


@dataclass(frozen=True)
class PropagationPath:
    gain: complex
    delay: float
    elevation: float
    azimuth: float


@dataclass
class PathSet:
    paths: list[PropagationPath] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.paths)

    @classmethod
    def from_arrays(cls, gains, delays, azimuths, elevations=None) -> "PathSet":
        elevations = np.zeros(len(gains)) if elevations is None else elevations
        return cls([PropagationPath(complex(g), float(t), float(e), float(a))
                    for g, t, a, e in zip(gains, delays, azimuths, elevations)])


@dataclass(frozen=True)
class OfdmConfig:
    n_subcarriers: int = 32
    symbol_period: float = 1e-8
    noise_variance: float = 0.0
    symbol_power: float = 1.0
    tap_mode: bool = False

    def __post_init__(self):
        if self.n_subcarriers < 1:
            raise ValueError("need at least one subcarrier")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be nonnegative")


@dataclass
class Codebook:
    angles: np.ndarray   # (K,)
    vectors: np.ndarray  # (K, n_rx) complex
    cfg: CodebookConfig

    def __len__(self) -> int:
        return len(self.angles)

    def to_csv(self, path) -> None:
        n = self.vectors.shape[1]
        header = ["beam_index", "angle_rad"]
        for m in range(n):
            header += [f"re_{m}", f"im_{m}"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, (ang, vec) in enumerate(zip(self.angles, self.vectors)):
                row = [k, repr(float(ang))]
                for z in vec:
                    row += [repr(float(z.real)), repr(float(z.imag))]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path, cfg: CodebookConfig | None = None) -> "Codebook":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        angles = np.array([float(r[1]) for r in rows])
        vals = np.array([[float(x) for x in r[2:]] for r in rows])
        vectors = vals[:, 0::2] + 1j * vals[:, 1::2]
        cfg = cfg or CodebookConfig(n_rx=vectors.shape[1], n_beams=len(angles),
                                    azimuth_min=float(angles[0]), azimuth_max=float(angles[-1]))
        return cls(angles, vectors, cfg)


def steering_vector(cfg: CodebookConfig, azimuth) -> np.ndarray:
    """Unit-norm ULA response; broadcasts over an array of azimuths (last axis = elements)."""
    m = np.arange(cfg.n_rx)
    phase = np.multiply.outer(np.sin(np.asarray(azimuth, dtype=float)), m) * (2 * np.pi / cfg.wavelength * cfg.d)
    return np.exp(1j * phase) / np.sqrt(cfg.n_rx)


def make_codebook(cfg: CodebookConfig) -> Codebook:
    if cfg.n_beams < 2:
        raise ValueError("codebook needs at least two beams")
    angles = np.linspace(cfg.azimuth_min, cfg.azimuth_max, cfg.n_beams)
    return Codebook(angles, steering_vector(cfg, angles), cfg)


def _sinc_pulse(t: np.ndarray, period: float) -> np.ndarray:
    return np.sinc(t / period)


def synth_channel(paths: PathSet, cfg: OfdmConfig, cb_cfg: CodebookConfig) -> np.ndarray:
    """Frequency-domain channel ``h`` of shape (n_rx, Q)."""
    if len(paths) == 0:
        raise ValueError("PathSet is empty")
    q_count = cfg.n_subcarriers
    q = np.arange(q_count)
    gains = np.array([p.gain for p in paths.paths], dtype=complex)
    delays = np.array([p.delay for p in paths.paths])
    az = np.array([p.azimuth for p in paths.paths])
    if np.any(delays < 0):
        raise ValueError("path delays must be nonnegative")
    resp = steering_vector(cb_cfg, az)  # (L, n_rx)
    if cfg.tap_mode:
        taps = np.arange(q_count)  # D = Q taps
        pulse = _sinc_pulse(taps[:, None] * cfg.symbol_period - delays[None, :], cfg.symbol_period)  # (D, L)
        dft = np.exp(-2j * np.pi * np.outer(q, taps) / q_count)  # (Q, D)
        freq = dft @ pulse  # (Q, L)
    else:
        freq = np.exp(-2j * np.pi * np.outer(q, delays) / (q_count * cfg.symbol_period))  # (Q, L)
    h = np.sqrt(cb_cfg.n_rx) * np.einsum("l,ql,lm->mq", gains, freq, resp)
    return h


def received_power(h: np.ndarray, codebook: Codebook | np.ndarray, cfg: OfdmConfig,
                   rng_seed=None) -> np.ndarray:
    """Per-beam power Σ_q |h[:,q]ᴴ c_κ s[q] + n[q]|², linear scale."""
    vectors = codebook.vectors if isinstance(codebook, Codebook) else np.asarray(codebook)
    if vectors.shape[1] != h.shape[0]:
        raise ValueError(f"codebook has {vectors.shape[1]} elements, channel has {h.shape[0]}")
    s = np.sqrt(cfg.symbol_power)
    r = (h.conj().T @ vectors.T) * s  # (Q, K)
    if cfg.noise_variance > 0:
        rng = np.random.default_rng(rng_seed)
        sigma = np.sqrt(cfg.noise_variance / 2)
        r = r + sigma * (rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape))
    return np.sum(np.abs(r) ** 2, axis=0)


def optimal_beam(powers) -> int:
    """Index of the strongest beam; ties go to the lowest index."""
    p = np.asarray(powers)
    if p.size == 0:
        raise ValueError("empty power vector")
    return int(np.argmax(p))


def nearest_beam(cfg: CodebookConfig, azimuth: float) -> int:
    """Codebook index whose steering angle is closest to ``azimuth``."""
    idx = (azimuth - cfg.azimuth_min) / cfg.angle_step
    return int(np.clip(np.rint(idx), 0, cfg.n_beams - 1))


def save_codebook(path, cfg: CodebookConfig) -> Path:
    make_codebook(cfg).to_csv(path)
    return Path(path)

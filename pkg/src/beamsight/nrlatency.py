"""Closed-form 5G-NR SS-burst sweep timing and the top-k overhead report."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

DEFAULT_EXHAUSTIVE_MS = 26.1


@dataclass(frozen=True)
class NrTimingConfig:
    t_bs: float = 5.0            # burst duration, ms
    T_ssb: float = 20.0          # burst periodicity, ms
    blocks_per_burst: int = 32
    T_prc_plus_fb: float = 0.1   # processing + feedback, ms
    T_inf: float = 1.0           # model inference, ms

    def __post_init__(self):
        if self.t_bs <= 0 or self.T_ssb <= 0 or self.blocks_per_burst < 1:
            raise ValueError("burst duration, periodicity and block count must be positive")
        if self.T_prc_plus_fb < 0 or self.T_inf < 0:
            raise ValueError("processing and inference times must be non-negative")

    @property
    def t_ssb(self) -> float:
        """Time to measure one beam (one SS block)."""
        return self.t_bs / self.blocks_per_burst


def _check_count(n: int, name: str) -> int:
    if int(n) != n or n < 1:
        raise ValueError(f"{name} must be a positive integer, got {n}")
    return int(n)


def sweep_time_exhaustive(K: int, cfg: NrTimingConfig = NrTimingConfig()) -> float:
    """Full codebook sweep: whole bursts of ``blocks_per_burst`` beams, every ``T_ssb``."""
    K = _check_count(K, "K")
    return cfg.T_ssb * ((K - 1) // cfg.blocks_per_burst) + cfg.t_bs


def sweep_time_topk(k: int, cfg: NrTimingConfig = NrTimingConfig()) -> float:
    """Sweep of the ``k`` predicted candidates; the last burst ends after its last block."""
    k = _check_count(k, "k")
    return cfg.T_ssb * ((k - 1) // cfg.blocks_per_burst) + cfg.t_ssb * (1 + (k - 1) % cfg.blocks_per_burst)


def end_to_end_latency(k: int, cfg: NrTimingConfig = NrTimingConfig()) -> float:
    return cfg.T_prc_plus_fb + cfg.T_inf + sweep_time_topk(k, cfg)


@dataclass
class LatencyRow:
    k: int
    T_sp_mm_ms: float
    total_ms: float
    latency_reduction_pct: float
    search_fraction_pct: float
    search_reduction_pct: float
    scheme: str = "top-k"


@dataclass
class LatencyReport:
    K: int
    exhaustive_sweep_ms: float
    exhaustive_total_ms: float
    rows: list[LatencyRow]
    config: dict

    def row(self, k: int, scheme: str = "top-k") -> LatencyRow:
        for r in self.rows:
            if r.k == k and r.scheme == scheme:
                return r
        raise KeyError(k)

    def to_dict(self) -> dict:
        return {"K": self.K, "exhaustive_sweep_ms": self.exhaustive_sweep_ms,
                "exhaustive_total_ms": self.exhaustive_total_ms, "rows": [asdict(r) for r in self.rows],
                "config": self.config}

    def write_csv(self, path) -> None:
        fields = list(LatencyRow.__dataclass_fields__)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(fields)
            for r in self.rows:
                w.writerow([repr(getattr(r, name)) for name in fields])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def exhaustive_total(K: int, cfg: NrTimingConfig = NrTimingConfig()) -> float:
    """Full sweep plus processing/feedback and inference: 26.1 ms for K=64 at defaults."""
    return cfg.T_prc_plus_fb + cfg.T_inf + sweep_time_exhaustive(K, cfg)


def overhead_report(K: int = 64, k_list=(1, 5, 9, 11, 15), cfg: NrTimingConfig = NrTimingConfig(),
                    exhaustive_total_ms: float | None = None, seed: int | None = None) -> LatencyReport:
    """Latency and search-space savings of a top-k sweep against an exhaustive one.

    ``exhaustive_total_ms`` is the baseline every reduction is measured
    against; when omitted it is :func:`exhaustive_total` of ``K``.  The first
    row describes the exhaustive sweep itself.
    """
    K = _check_count(K, "K")
    if exhaustive_total_ms is None:
        exhaustive_total_ms = exhaustive_total(K, cfg)
    if not math.isfinite(exhaustive_total_ms) or exhaustive_total_ms <= 0:
        raise ValueError("exhaustive_total_ms must be positive")
    rows = [LatencyRow(K, sweep_time_exhaustive(K, cfg), exhaustive_total_ms, 0.0, 100.0, 0.0, "exhaustive")]
    for k in sorted(set(int(k) for k in k_list)):
        k = _check_count(k, "k")
        if k > K:
            raise ValueError(f"k={k} exceeds codebook size K={K}")
        sweep = sweep_time_topk(k, cfg)
        total = end_to_end_latency(k, cfg)
        rows.append(LatencyRow(k, sweep, total, 100.0 * (1.0 - total / exhaustive_total_ms), 100.0 * k / K,
                               100.0 * (1.0 - k / K)))
    config = {"timing": asdict(cfg), "K": K, "k_list": [r.k for r in rows if r.scheme == "top-k"],
              "exhaustive_total_ms": exhaustive_total_ms, "seed": seed}
    return LatencyReport(K, sweep_time_exhaustive(K, cfg), exhaustive_total_ms, rows, config)

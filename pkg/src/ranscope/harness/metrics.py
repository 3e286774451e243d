"""Delay and throughput metrics. Percentiles use the nearest-rank definition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from ..errors import InsufficientData

MIN_SAMPLES = 20


def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Smallest sample with at least ``pct`` percent of the samples at or below it."""
    if not 0 <= pct <= 100:
        raise ValueError("percentile must lie in [0, 100]")
    v = np.sort(np.asarray(values, dtype=float))
    if not len(v):
        raise InsufficientData("percentile of an empty sample")
    rank = max(1, math.ceil(pct / 100 * len(v)))
    return float(v[rank - 1])


def variation_range(values: Sequence[float]) -> float:
    """p95 - p5."""
    if len(values) < MIN_SAMPLES:
        raise InsufficientData(f"variation range needs at least {MIN_SAMPLES} samples, got {len(values)}")
    return nearest_rank(values, 95) - nearest_rank(values, 5)


@dataclass
class MetricsReport:
    throughput_mbps: float
    rtt_p5_us: float
    rtt_p50_us: float
    rtt_p95_us: float
    variation_range_us: float
    n_samples: int
    utilization: Optional[float] = None
    overuse_count: Optional[int] = None
    spectrum_peaks: list = field(default_factory=list)

    @classmethod
    def from_samples(cls, rtts_us: Sequence[float], throughput_mbps: float,
                     capacity_mbps: Optional[float] = None, **extra) -> "MetricsReport":
        vr = variation_range(rtts_us)
        util = throughput_mbps / capacity_mbps if capacity_mbps else None
        return cls(throughput_mbps, nearest_rank(rtts_us, 5), nearest_rank(rtts_us, 50),
                   nearest_rank(rtts_us, 95), vr, len(rtts_us), util, **extra)

    def as_row(self) -> dict:
        row = asdict(self)
        row["spectrum_peaks"] = ";".join(f"{f:g}:{db:.1f}" for f, db in self.spectrum_peaks)
        return row


REPORT_FIELDS = tuple(MetricsReport.__dataclass_fields__)


def aggregate(reports: Sequence[MetricsReport]) -> dict:
    """Mean of every numeric field across trials; the percentiles are averaged, not pooled."""
    if not reports:
        raise InsufficientData("no trials to aggregate")
    out: dict = {"trials": len(reports)}
    for name in REPORT_FIELDS:
        vals = [getattr(r, name) for r in reports]
        if name == "spectrum_peaks" or any(v is None for v in vals):
            continue
        out[name] = float(np.mean(vals))
    out["throughput_mbps_per_trial"] = [r.throughput_mbps for r in reports]
    return out

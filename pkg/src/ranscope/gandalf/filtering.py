"""RAN-aware low-pass filtering of delay series.

The uplink scheduling buffer adds a periodic component at f_u = 1/T_bsr and
its harmonics, far above congestion dynamics (<= 1 Hz). Each sliding window
of the uniformly resampled series is mirrored (so the transform sees no edge
discontinuity), stripped of every bin at or above the cutoff, and the windows
are blended back with triangular weights.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import signal

from ..errors import ConfigError, InsufficientData
from .series import DelaySeries


@dataclass(frozen=True)
class FilterConfig:
    t_bsr_us: int = 5000
    cutoff_hz: Optional[float] = None
    window_us: int = 1_000_000
    resample_step_us: int = 1000
    rolloff: float = 0.0

    def __post_init__(self) -> None:
        if self.t_bsr_us <= 0 or self.window_us <= 0 or self.resample_step_us <= 0:
            raise ConfigError("filter durations must be positive")
        if self.cutoff_hz is None:
            object.__setattr__(self, "cutoff_hz", self.f_u / 4)
        if not 0 < self.cutoff_hz < self.f_u:
            raise ConfigError(f"cutoff must lie in (0, f_u={self.f_u:g} Hz)")
        if self.window_us * self.cutoff_hz / 1e6 < 8:
            raise ConfigError("window must cover at least 8 cycles of the cutoff frequency")
        if not 0 <= self.rolloff < 1:
            raise ConfigError("rolloff must lie in [0, 1)")
        if self.window_us % self.resample_step_us:
            raise ConfigError("window_us must be a multiple of resample_step_us")

    @property
    def f_u(self) -> float:
        return 1e6 / self.t_bsr_us

    @property
    def n_window(self) -> int:
        return self.window_us // self.resample_step_us


def _lowpass_kernel(x: np.ndarray, gains: np.ndarray) -> np.ndarray:
    """Zero-phase low-pass of one window via its even extension; x may be 2-D (rows)."""
    n = x.shape[-1]
    ext = np.concatenate([x, x[..., ::-1]], axis=-1)
    spec = np.fft.rfft(ext, axis=-1)
    spec *= gains
    return np.fft.irfft(spec, n=2 * n, axis=-1)[..., :n]


def _keep_bins(cfg: FilterConfig, n: Optional[int] = None) -> int:
    # bin k of the 2N-point extension sits at k / (2 N step)
    span_s = 2 * (n or cfg.n_window) * cfg.resample_step_us / 1e6
    return int(np.ceil(cfg.cutoff_hz * span_s - 1e-9))


def _bin_gains(cfg: FilterConfig, n: Optional[int] = None) -> np.ndarray:
    """1 in the pass band, 0 from the cutoff up, with an optional raised-cosine
    shoulder over the top ``rolloff`` fraction of the pass band."""
    n = n or cfg.n_window
    keep = _keep_bins(cfg, n)
    f = np.arange(n + 1) / (2 * n * cfg.resample_step_us / 1e6)
    g = (np.arange(n + 1) < keep).astype(float)
    if cfg.rolloff > 0:
        f0 = cfg.cutoff_hz * (1 - cfg.rolloff)
        band = (f > f0) & (g > 0)
        g[band] = 0.5 * (1 + np.cos(np.pi * (f[band] - f0) / (cfg.cutoff_hz - f0)))
    return g


def resample_uniform(series: DelaySeries, step_us: int) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation of delay versus send time onto a uniform grid."""
    t = series.t_send.astype(np.int64)
    d = series.delay.astype(float)
    ut, inv = np.unique(t, return_inverse=True)
    if len(ut) < len(t):
        d = np.bincount(inv, weights=d) / np.bincount(inv)
    grid = np.arange(ut[0], ut[-1] + 1, step_us, dtype=np.int64)
    return grid, np.interp(grid, ut, d)


def _check_length(series: DelaySeries, cfg: FilterConfig) -> None:
    if len(series) < 2 or series.duration_us < cfg.window_us:
        raise InsufficientData(
            f"series spans {series.duration_us} us, shorter than the {cfg.window_us} us window")


def filter_grid(values: np.ndarray, cfg: FilterConfig) -> np.ndarray:
    """Sliding-window low-pass over a uniformly sampled signal (length >= one window)."""
    n = cfg.n_window
    m = len(values)
    if m < n:
        raise InsufficientData("grid shorter than one window")
    hop = max(n // 2, 1)
    starts = list(range(0, m - n + 1, hop))
    if starts[-1] != m - n:
        starts.append(m - n)
    frames = np.stack([values[s:s + n] for s in starts])
    filtered = _lowpass_kernel(frames, _bin_gains(cfg))
    w = 1.0 - np.abs(np.arange(n) - (n - 1) / 2) / ((n + 1) / 2)
    acc = np.zeros(m)
    wsum = np.zeros(m)
    for s, row in zip(starts, filtered):
        acc[s:s + n] += w * row
        wsum[s:s + n] += w
    return acc / wsum


def ran_aware_filter(series: DelaySeries, cfg: FilterConfig = FilterConfig()) -> DelaySeries:
    """Remove the BSR-periodic delay component, keeping the congestion band."""
    _check_length(series, cfg)
    grid, values = resample_uniform(series, cfg.resample_step_us)
    if len(grid) < cfg.n_window:
        raise InsufficientData("resampled series shorter than one window")
    out = filter_grid(values, cfg)
    return series.with_delay(np.interp(series.t_send, grid, out))


def analysis_step_us(cfg: FilterConfig) -> int:
    """Spectrum grid: twenty samples per BSR period keeps the harmonics of f_u up
    to 10 f_u free of aliasing (a coarser grid folds 3 f_u onto 2 f_u)."""
    return max(1, min(cfg.resample_step_us, cfg.t_bsr_us // 20))


def spectrum(series: DelaySeries, cfg: FilterConfig = FilterConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Averaged periodogram (Welch, one-window segments) of the resampled series, in dB."""
    _check_length(series, cfg)
    step = analysis_step_us(cfg)
    _, values = resample_uniform(series, step)
    fs = 1e6 / step
    nperseg = min(cfg.window_us // step, len(values))
    freqs, pxx = signal.welch(values, fs=fs, nperseg=nperseg, detrend="constant")
    power_db = 10 * np.log10(np.maximum(pxx, 1e-30))
    return freqs, power_db


def spectral_peaks(freqs: np.ndarray, power_db: np.ndarray, floor_band=(50.0, 150.0),
                   min_excess_db: float = 10.0) -> tuple[float, list[tuple[float, float]]]:
    """Local maxima exceeding the median level of ``floor_band`` by ``min_excess_db``.

    Returns (floor_db, [(frequency_hz, excess_db), ...]).
    """
    band = (freqs >= floor_band[0]) & (freqs <= floor_band[1])
    if not band.any():
        raise InsufficientData("spectrum does not cover the floor band")
    floor = float(np.median(power_db[band]))
    idx, _ = signal.find_peaks(power_db)
    peaks = [(float(freqs[i]), float(power_db[i] - floor)) for i in idx
             if power_db[i] - floor >= min_excess_db and freqs[i] > 0]
    return floor, peaks


def power_at(freqs: np.ndarray, power_db: np.ndarray, f_hz: float, halfwidth_hz: float = 2.0) -> float:
    """Peak level near ``f_hz``."""
    sel = np.abs(freqs - f_hz) <= halfwidth_hz
    if not sel.any():
        raise InsufficientData(f"no spectrum bins near {f_hz} Hz")
    return float(power_db[sel].max())


class StreamingFilter:
    """Causal sliding-window variant for live use.

    Keeps the last ``window_us`` of samples; every ``hop_us`` of sample time
    the window is filtered with the batch kernel and the value at the newest
    sample is emitted. Between hops the last emitted value is held. Until a
    full window has accumulated, the samples seen so far are filtered as a
    shorter window.
    """

    def __init__(self, cfg: FilterConfig = FilterConfig(), hop_us: int = 100_000):
        if hop_us <= 0:
            raise ConfigError("hop_us must be positive")
        self.cfg = cfg
        self.hop = hop_us
        self._gains: dict[int, np.ndarray] = {}
        self._t: deque[int] = deque()
        self._d: deque[float] = deque()
        self._next_emit: Optional[int] = None
        self._value: Optional[float] = None

    def reset(self) -> None:
        self._t.clear()
        self._d.clear()
        self._next_emit = None
        self._value = None

    def update(self, t_us: int, delay: float) -> float:
        self._t.append(t_us)
        self._d.append(delay)
        horizon = t_us - self.cfg.window_us
        while len(self._t) > 2 and self._t[1] <= horizon:
            self._t.popleft()
            self._d.popleft()
        if self._next_emit is None or t_us >= self._next_emit:
            self._value = self._filter_latest(t_us)
            self._next_emit = t_us + self.hop
        return self._value

    def _filter_latest(self, t_us: int) -> float:
        step = self.cfg.resample_step_us
        n = min(self.cfg.n_window, (t_us - self._t[0]) // step + 1)
        if n < 2:
            return self._d[-1]
        gains = self._gains.get(n)
        if gains is None:
            gains = self._gains[n] = _bin_gains(self.cfg, n)
        grid = t_us - step * np.arange(n - 1, -1, -1, dtype=np.int64)
        t = np.fromiter(self._t, dtype=np.int64, count=len(self._t))
        d = np.fromiter(self._d, dtype=float, count=len(self._d))
        values = np.interp(grid, t, d)
        return float(_lowpass_kernel(values, gains)[-1])

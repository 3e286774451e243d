"""GCC-style delay-based overuse detector with AIMD rate control.

Packets are grouped into 5 ms send-time bursts. For consecutive groups the
delay variation d_m = (arrival delta) - (send delta) is accumulated,
exponentially smoothed and fed to a trendline over the last 20 groups; the
scaled slope d_t is compared with an adaptive threshold gamma.
"""
from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

GROUP_SPAN_US = 5000
TRENDLINE_WINDOW = 20
TRENDLINE_SMOOTHING = 0.9
TRENDLINE_GAIN = 4.0
MAX_COUNT_FACTOR = 60
OVERUSE_HOLD_US = 10_000
BETA = 0.85
GAMMA_INIT_US = 12_500.0
GAMMA_MIN_US = 6_000.0
GAMMA_MAX_US = 600_000.0
K_UP = 0.01
K_DOWN = 0.00018
MAX_GAMMA_DT_US = 100_000
RATE_WINDOW_US = 500_000
MIN_RATE_BPS = 50_000.0


class BwState(str, enum.Enum):
    NORMAL = "Normal"
    OVERUSE = "Overuse"
    UNDERUSE = "Underuse"


@dataclass(frozen=True)
class PacketGroup:
    first_send_us: int
    last_send_us: int
    last_arrival_us: float
    size_bytes: int


@dataclass
class GccState:
    gamma_us: float = GAMMA_INIT_US
    d_t: float = 0.0
    state: BwState = BwState.NORMAL
    a_r_bps: float = 300_000.0
    d_m_history: deque = field(default_factory=lambda: deque(maxlen=TRENDLINE_WINDOW))
    overuse_count: int = 0
    num_deltas: int = 0
    accumulated_us: float = 0.0
    smoothed_us: float = 0.0
    first_arrival_us: Optional[float] = None
    prev_group: Optional[PacketGroup] = None
    over_time_us: float = -1.0
    over_samples: int = 0
    last_gamma_update_us: Optional[float] = None
    last_rate_update_us: Optional[float] = None
    avg_max_bps: Optional[float] = None
    var_max: float = 0.4
    rtt_us: float = 100_000.0
    trace: list = field(default_factory=list)


def _trend_slope(points: Iterable[tuple[float, float]]) -> float:
    pts = np.asarray(list(points), dtype=float)
    if len(pts) < 2:
        return 0.0
    x = pts[:, 0] - pts[:, 0].mean()
    den = float(np.dot(x, x))
    if den == 0:
        return 0.0
    return float(np.dot(x, pts[:, 1] - pts[:, 1].mean()) / den)


def _adapt_gamma(s: GccState, now_us: float) -> None:
    if s.last_gamma_update_us is None:
        s.last_gamma_update_us = now_us
    dt = min(now_us - s.last_gamma_update_us, MAX_GAMMA_DT_US) / 1000.0      # ms
    k = K_UP if abs(s.d_t) > s.gamma_us else K_DOWN
    s.gamma_us += dt * k * (abs(s.d_t) - s.gamma_us)
    s.gamma_us = min(max(s.gamma_us, GAMMA_MIN_US), GAMMA_MAX_US)
    s.last_gamma_update_us = now_us


def _detect(s: GccState, ts_delta_us: float) -> BwState:
    prev = s.state
    if s.d_t > s.gamma_us:
        if s.over_time_us < 0:
            s.over_time_us = ts_delta_us / 2
        else:
            s.over_time_us += ts_delta_us
        s.over_samples += 1
        if s.over_time_us >= OVERUSE_HOLD_US and s.over_samples >= 2:
            s.over_time_us = 0.0
            s.over_samples = 0
            s.state = BwState.OVERUSE
    elif s.d_t < -s.gamma_us:
        s.over_time_us = -1.0
        s.over_samples = 0
        s.state = BwState.UNDERUSE
    else:
        s.over_time_us = -1.0
        s.over_samples = 0
        s.state = BwState.NORMAL
    if s.state is BwState.OVERUSE and prev is not BwState.OVERUSE:
        s.overuse_count += 1
    return s.state


def _update_max(s: GccState, incoming_kbps: float) -> None:
    alpha = 0.05
    if s.avg_max_bps is None:
        s.avg_max_bps = incoming_kbps
    else:
        s.avg_max_bps = (1 - alpha) * s.avg_max_bps + alpha * incoming_kbps
    norm = max(s.avg_max_bps, 1.0)
    s.var_max = (1 - alpha) * s.var_max + alpha * (s.avg_max_bps - incoming_kbps) ** 2 / norm
    s.var_max = min(max(s.var_max, 0.4), 2.5)


def _rate_control(s: GccState, now_us: float, incoming_bps: Optional[float]) -> None:
    last = s.last_rate_update_us if s.last_rate_update_us is not None else now_us
    dt_s = min(max(now_us - last, 0.0), 1e6) / 1e6
    s.last_rate_update_us = now_us
    kbps = incoming_bps / 1000 if incoming_bps else None
    if s.state is BwState.OVERUSE:
        if incoming_bps:
            s.a_r_bps = min(s.a_r_bps, BETA * incoming_bps)
            _update_max(s, kbps)
        else:
            s.a_r_bps *= BETA
    elif s.state is BwState.NORMAL:
        near = False
        if kbps is not None and s.avg_max_bps is not None:
            std = math.sqrt(s.var_max * s.avg_max_bps)
            if kbps > s.avg_max_bps + 3 * std:
                s.avg_max_bps = None
            else:
                near = abs(kbps - s.avg_max_bps) <= 3 * std
        if near:
            response_s = (s.rtt_us + 100_000) / 1e6
            pkt_bits = 1200 * 8
            s.a_r_bps += max(1000.0, pkt_bits * dt_s / response_s)
        else:
            s.a_r_bps *= 1.08 ** dt_s
        if incoming_bps:
            s.a_r_bps = min(s.a_r_bps, 1.5 * incoming_bps + 10_000)
    s.a_r_bps = max(s.a_r_bps, MIN_RATE_BPS)


def gcc_update(state: GccState, groups: Iterable[PacketGroup],
               incoming_bps: Optional[float] = None) -> GccState:
    """Fold completed packet groups (in order) into ``state``.

    ``incoming_bps`` is the recently measured delivery rate used by the
    rate controller; without it a decrease scales the current estimate.
    """
    s = state
    for g in groups:
        prev, s.prev_group = s.prev_group, g
        if prev is None:
            s.first_arrival_us = g.last_arrival_us
            continue
        send_delta = g.last_send_us - prev.last_send_us
        arrival_delta = g.last_arrival_us - prev.last_arrival_us
        d_m = arrival_delta - send_delta
        s.num_deltas += 1
        s.accumulated_us += d_m
        s.smoothed_us = TRENDLINE_SMOOTHING * s.smoothed_us + (1 - TRENDLINE_SMOOTHING) * s.accumulated_us
        s.d_m_history.append((g.last_arrival_us - s.first_arrival_us, s.smoothed_us))
        slope = _trend_slope(s.d_m_history) if len(s.d_m_history) == TRENDLINE_WINDOW else 0.0
        # slope is dimensionless; scale to microseconds on the millisecond convention
        s.d_t = min(s.num_deltas, MAX_COUNT_FACTOR) * slope * TRENDLINE_GAIN * 1000.0
        gamma_before = s.gamma_us
        _detect(s, send_delta)
        _adapt_gamma(s, g.last_arrival_us)
        _rate_control(s, g.last_arrival_us, incoming_bps)
        s.trace.append((g.last_arrival_us, d_m, s.d_t, gamma_before, s.state.value, s.a_r_bps))
    return s


class Gcc:
    """Rate-paced sender; feedback carries each packet's one-way delay."""

    kind = "gcc"
    cwnd = float("inf")

    def __init__(self, init_rate_bps: float = 300_000.0, mss: int = 1400,
                 group_span_us: int = GROUP_SPAN_US):
        self.state = GccState(a_r_bps=init_rate_bps)
        self.mss = mss
        self.span = group_span_us
        self._send: dict[int, int] = {}
        self._open: Optional[list] = None      # [first_send, last_send, last_arrival, bytes]
        self._acked: deque = deque()
        self._acked_bytes = 0

    @property
    def pacing_rate_pps(self) -> float:
        return self.state.a_r_bps / (8 * self.mss)

    def on_send(self, pkt_id: int, now_us: int) -> None:
        self._send[pkt_id] = now_us

    def incoming_bps(self, now_us: int) -> Optional[float]:
        while self._acked and self._acked[0][0] < now_us - RATE_WINDOW_US:
            self._acked_bytes -= self._acked.popleft()[1]
        if not self._acked or now_us - self._acked[0][0] < RATE_WINDOW_US / 2:
            return None
        return self._acked_bytes * 8 * 1e6 / RATE_WINDOW_US

    def on_ack(self, owd_us: float, now_us: int, pkt_id: Optional[int] = None,
               rtt_us: Optional[float] = None) -> None:
        t_send = self._send.pop(pkt_id, None)
        if t_send is None:
            return
        if rtt_us is not None:
            self.state.rtt_us = rtt_us
        self._acked.append((now_us, self.mss))
        self._acked_bytes += self.mss
        arrival = t_send + owd_us
        g = self._open
        if g is not None and t_send - g[0] < self.span:
            g[1] = max(g[1], t_send)
            g[2] = max(g[2], arrival)
            g[3] += self.mss
            return
        if g is not None:
            gcc_update(self.state, [PacketGroup(g[0], g[1], g[2], g[3])], self.incoming_bps(now_us))
        self._open = [t_send, t_send, arrival, self.mss]

    def log_fields(self) -> tuple[float, str, float]:
        return self.state.d_t, self.state.state.value, self.pacing_rate_pps

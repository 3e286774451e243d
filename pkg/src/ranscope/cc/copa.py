"""COPA: delay-based window control toward a target rate of 1 / (delta * d_q)."""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional

RTT_MIN_WINDOW_US = 10_000_000


class WindowedMin:
    """Minimum of (time, value) samples over trailing windows of any length up to ``horizon``.

    A monotone queue keeps samples with increasing values; the minimum over
    ``[now - w, now]`` is the first kept sample at or after ``now - w``.
    """

    def __init__(self, horizon_us: int):
        self.horizon = horizon_us
        self._t: list[int] = []
        self._v: list[float] = []
        self._head = 0

    def push(self, t_us: int, value: float) -> None:
        t, v = self._t, self._v
        while len(t) > self._head and v[-1] >= value:
            t.pop()
            v.pop()
        t.append(t_us)
        v.append(value)
        cutoff = t_us - self.horizon
        while self._head < len(t) - 1 and t[self._head] < cutoff:
            self._head += 1
        if self._head > 1024:
            del t[:self._head], v[:self._head]
            self._head = 0

    def min_over(self, now_us: int, window_us: float) -> float:
        i = bisect.bisect_left(self._t, now_us - window_us, lo=self._head)
        if i >= len(self._t):
            return math.inf
        return self._v[i]


@dataclass
class CopaState:
    delta: float = 0.5
    cwnd_pkts: float = 10.0
    velocity: float = 1.0
    srtt_us: Optional[float] = None
    rtt_min_us: float = math.inf
    rtt_standing_us: float = math.inf
    d_q_us: float = 0.0
    slow_start: bool = True
    direction: int = 0
    same_dir_windows: int = 0
    window_start_us: Optional[int] = None
    window_start_cwnd: float = 10.0
    mins: WindowedMin = field(default_factory=lambda: WindowedMin(RTT_MIN_WINDOW_US))

    @property
    def target_rate_pps(self) -> float:
        return target_rate(self.d_q_us, self.delta)

    @property
    def pacing_rate_pps(self) -> float:
        rtt = self.rtt_standing_us if math.isfinite(self.rtt_standing_us) else (self.srtt_us or 100_000)
        return 2.0 * self.cwnd_pkts * 1e6 / max(rtt, 1.0)


def target_rate(d_q_us: float, delta: float) -> float:
    """Packets/s; unbounded while there is no standing queue."""
    if d_q_us <= 0:
        return math.inf
    return 1e6 / (delta * d_q_us)


def copa_on_ack(state: CopaState, rtt_sample_us: float, now_us: int) -> float:
    """Fold one RTT sample into ``state`` and return the target rate in packets/s."""
    if rtt_sample_us <= 0:
        raise ValueError("rtt sample must be positive")
    s = state
    s.srtt_us = rtt_sample_us if s.srtt_us is None else 0.875 * s.srtt_us + 0.125 * rtt_sample_us
    s.mins.push(now_us, rtt_sample_us)
    s.rtt_min_us = s.mins.min_over(now_us, RTT_MIN_WINDOW_US)
    s.rtt_standing_us = s.mins.min_over(now_us, s.srtt_us)
    s.d_q_us = s.rtt_standing_us - s.rtt_min_us
    target = target_rate(s.d_q_us, s.delta)
    current = s.cwnd_pkts * 1e6 / s.rtt_standing_us

    if s.slow_start:
        if current > target:
            s.slow_start = False
        else:
            s.cwnd_pkts += 1.0          # one per ack: doubles every round trip
            return target

    step = s.velocity / (s.delta * s.cwnd_pkts)
    s.cwnd_pkts = max(1.0, s.cwnd_pkts + step if current <= target else s.cwnd_pkts - step)
    _update_velocity(s, now_us)
    return target


def _update_velocity(s: CopaState, now_us: int) -> None:
    # one direction sample per srtt-long window
    if s.window_start_us is None:
        s.window_start_us, s.window_start_cwnd = now_us, s.cwnd_pkts
        return
    if now_us - s.window_start_us < s.srtt_us:
        return
    new_dir = 1 if s.cwnd_pkts > s.window_start_cwnd else -1
    if new_dir == s.direction:
        s.same_dir_windows += 1
        if s.same_dir_windows >= 3:
            s.velocity *= 2
    else:
        s.direction = new_dir
        s.same_dir_windows = 1
        s.velocity = 1.0
    s.velocity = min(s.velocity, max(1.0, s.cwnd_pkts))
    s.window_start_us, s.window_start_cwnd = now_us, s.cwnd_pkts


class Copa:
    """Window-limited, paced sender driven by per-ack RTT samples."""

    kind = "copa"

    def __init__(self, delta: float = 0.5, init_cwnd: float = 10.0):
        self.state = CopaState(delta=delta, cwnd_pkts=init_cwnd, window_start_cwnd=init_cwnd)

    def on_send(self, pkt_id: int, now_us: int) -> None:
        pass

    def on_ack(self, rtt_us: float, now_us: int, pkt_id: Optional[int] = None) -> None:
        copa_on_ack(self.state, rtt_us, now_us)

    @property
    def cwnd(self) -> float:
        return self.state.cwnd_pkts

    @property
    def pacing_rate_pps(self) -> float:
        return self.state.pacing_rate_pps

    def log_fields(self) -> tuple[float, str, float]:
        s = self.state
        return s.d_q_us, "slow_start" if s.slow_start else "steady", self.pacing_rate_pps

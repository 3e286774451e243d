"""PCC Vivace-style rate prober.

Rates are tried in monitor intervals (MIs) at base*(1+eps) and base*(1-eps),
two of each in seeded random order. Each MI scores

    u(x) = x**0.9 - 900 * x * max(0, dRTT/dt) - 11.35 * x * loss      (x in Mbit/s)

and the base rate moves toward the better side by a step that grows while
decisions keep agreeing.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import IncompleteTrials

MSS_BYTES = 1400
RATE_FLOOR_MBPS = 0.05


def pps_to_mbps(pps: float, mss: int = MSS_BYTES) -> float:
    return pps * mss * 8 / 1e6


def mbps_to_pps(mbps: float, mss: int = MSS_BYTES) -> float:
    return mbps * 1e6 / (8 * mss)


@dataclass(frozen=True)
class UtilityParams:
    exponent: float = 0.9
    latency_coef: float = 900.0
    loss_coef: float = 11.35
    gradient_deadband: float = 0.0


@dataclass
class MiResult:
    rate_pps: float
    throughput_pps: float
    loss: float
    rtt_gradient: float
    is_up: bool


def utility(rate_pps: float, rtt_gradient: float, loss: float,
            params: UtilityParams = UtilityParams(), mss: int = MSS_BYTES) -> float:
    x = pps_to_mbps(rate_pps, mss)
    g = rtt_gradient if abs(rtt_gradient) > params.gradient_deadband else 0.0
    return x ** params.exponent - params.latency_coef * x * max(0.0, g) - params.loss_coef * x * loss


class Phase(str, enum.Enum):
    STARTING = "starting"
    PROBING = "probing"


@dataclass
class PccState:
    base_rate_pps: float
    epsilon: float = 0.05
    mi_duration_us: int = 0
    step_multiplier: int = 0
    max_multiplier: int = 0
    last_direction: int = 0
    trials: list = field(default_factory=list)
    utilities: list = field(default_factory=list)
    params: UtilityParams = field(default_factory=UtilityParams)
    mss: int = MSS_BYTES


def pcc_decide(state: PccState, trials: Sequence[MiResult]) -> float:
    """New base rate after a complete probing round (two up and two down MIs)."""
    ups = [m for m in trials if m.is_up]
    downs = [m for m in trials if not m.is_up]
    if len(trials) != 4 or len(ups) != 2 or len(downs) != 2:
        raise IncompleteTrials(f"need 2 up and 2 down MIs, got {len(ups)} up / {len(downs)} down")
    p = state.params
    u_up = np.mean([utility(m.rate_pps, m.rtt_gradient, m.loss, p, state.mss) for m in ups])
    u_dn = np.mean([utility(m.rate_pps, m.rtt_gradient, m.loss, p, state.mss) for m in downs])
    state.utilities.append((float(u_up), float(u_dn)))
    direction = 1 if u_up > u_dn else -1 if u_dn > u_up else 0
    if direction == 0:
        state.step_multiplier = 0
        state.last_direction = 0
        return state.base_rate_pps
    state.step_multiplier = state.step_multiplier + 1 if direction == state.last_direction else 1
    if state.max_multiplier:
        state.step_multiplier = min(state.step_multiplier, state.max_multiplier)
    state.last_direction = direction
    step = state.step_multiplier * state.epsilon * state.base_rate_pps
    floor = mbps_to_pps(RATE_FLOOR_MBPS, state.mss)
    state.base_rate_pps = max(floor, state.base_rate_pps + direction * step)
    return state.base_rate_pps


def rtt_gradient(times_us: Sequence[float], rtts_us: Sequence[float]) -> float:
    """Average slope of RTT over the interval (dimensionless, s/s): net change over elapsed time."""
    if len(times_us) < 2 or times_us[-1] == times_us[0]:
        return 0.0
    return float((rtts_us[-1] - rtts_us[0]) / (times_us[-1] - times_us[0]))


@dataclass
class _Mi:
    rate_pps: float
    is_up: bool
    start_us: int
    end_us: int
    round: int = 0
    closed: bool = False
    sent: int = 0
    acked: int = 0
    ack_t: list = field(default_factory=list)
    send_t: list = field(default_factory=list)
    rtt: list = field(default_factory=list)


def _delivery_rate(mi: _Mi) -> Optional[float]:
    if len(mi.ack_t) < 2 or mi.ack_t[-1] == mi.ack_t[0]:
        return None
    return (len(mi.ack_t) - 1) * 1e6 / (mi.ack_t[-1] - mi.ack_t[0])


class Pcc:
    """Rate-based sender; MIs are attributed by packet send time."""

    kind = "pcc"

    def __init__(self, init_rate_pps: float = 100.0, epsilon: float = 0.05, seed: int = 0,
                 params: UtilityParams = UtilityParams(gradient_deadband=0.01), min_mi_us: int = 150_000,
                 mss: int = MSS_BYTES, min_mi_packets: int = 10, max_multiplier: int = 2,
                 loss_timeout_us: int = 200_000):
        self.state = PccState(base_rate_pps=init_rate_pps, epsilon=epsilon, params=params, mss=mss,
                              max_multiplier=max_multiplier)
        self.phase = Phase.STARTING
        self.rng = np.random.default_rng(seed)
        self.min_mi = min_mi_us
        self.min_mi_packets = min_mi_packets
        self.srtt: Optional[float] = None
        self.rtt_min: Optional[float] = None
        self.loss_timeout = loss_timeout_us
        self._mis: list[_Mi] = []
        self._current: Optional[_Mi] = None
        self._plan: list[tuple[float, bool]] = []
        self._last_start_utility: Optional[float] = None
        self._pending: dict[int, _Mi] = {}
        self._done: list[MiResult] = []
        self._round = 0
        self.last_gradient = 0.0

    # ---- MI scheduling ------------------------------------------------------
    def _mi_length(self, rate_pps: float) -> int:
        by_count = self.min_mi_packets * 1e6 / max(rate_pps, 1e-9)
        return int(max(self.min_mi, self.srtt or 0.0, by_count))

    def _next_plan(self) -> None:
        r, e = self.state.base_rate_pps, self.state.epsilon
        if self.phase is Phase.STARTING:
            self._plan = [(r, True)]
            return
        plan = []
        for _ in range(2):
            pair = [(r * (1 + e), True), (r * (1 - e), False)]
            if self.rng.random() < 0.5:
                pair.reverse()
            plan += pair
        self._plan = plan

    def _open_mi(self, now_us: int) -> None:
        if not self._plan:
            self._next_plan()
        rate, up = self._plan.pop(0)
        self._current = _Mi(rate, up, now_us, now_us + self._mi_length(rate), self._round)
        self._mis.append(self._current)

    @property
    def pacing_rate_pps(self) -> float:
        return self._current.rate_pps if self._current else self.state.base_rate_pps

    cwnd = float("inf")

    def on_send(self, pkt_id: int, now_us: int) -> None:
        if self._current is None or now_us >= self._current.end_us:
            self._open_mi(now_us)
        self._current.sent += 1
        self._pending[pkt_id] = (self._current, now_us)
        self._collect(now_us)

    def on_ack(self, rtt_us: float, now_us: int, pkt_id: Optional[int] = None) -> None:
        self.srtt = rtt_us if self.srtt is None else 0.875 * self.srtt + 0.125 * rtt_us
        self.rtt_min = rtt_us if self.rtt_min is None else min(self.rtt_min, rtt_us)
        entry = self._pending.pop(pkt_id, None) if pkt_id is not None else None
        if entry is None:
            return
        mi, t_send = entry
        if mi.closed:
            return      # already scored; this packet counted as lost
        mi.acked += 1
        mi.ack_t.append(now_us)
        mi.send_t.append(t_send)
        mi.rtt.append(rtt_us)
        self._collect(now_us)

    def _collect(self, now_us: int) -> None:
        # MIs complete in order, once every packet is acked or the loss timeout has passed
        timeout = max(self.loss_timeout, 2 * (self.rtt_min or 0.0))
        while self._mis and self._mis[0] is not self._current:
            mi = self._mis[0]
            if mi.acked < mi.sent and now_us < mi.end_us + timeout:
                break
            self._mis.pop(0)
            mi.closed = True
            self._finish(mi)

    def _finish(self, mi: _Mi) -> None:
        if mi.round != self._round:
            return      # probed around a base rate that has since moved
        dur = max(mi.end_us - mi.start_us, 1)
        loss = 1.0 - mi.acked / mi.sent if mi.sent else 0.0
        res = MiResult(mi.rate_pps, mi.acked * 1e6 / dur, loss, rtt_gradient(mi.send_t, mi.rtt), mi.is_up)
        self.last_gradient = res.rtt_gradient
        if self.phase is Phase.STARTING:
            u = utility(res.rate_pps, res.rtt_gradient, res.loss, self.state.params, self.state.mss)
            if self._last_start_utility is None or u > self._last_start_utility:
                self._last_start_utility = u
                self.state.base_rate_pps = mi.rate_pps * 2
            else:
                # fall back to the last rate that improved, or the delivery rate if lower
                self.state.base_rate_pps = min(mi.rate_pps / 2, _delivery_rate(mi) or mi.rate_pps)
                self.phase = Phase.PROBING
            self._plan = []
            self._round += 1
            return
        self._done.append(res)
        if len(self._done) == 4:
            pcc_decide(self.state, self._done)
            self._done = []
            self._plan = []
            self._round += 1

    def log_fields(self) -> tuple[float, str, float]:
        return self.last_gradient, self.phase.value, self.state.base_rate_pps

"""Closed-loop runs: one paced controller driving the link simulator.

The sender sits at the server for downlink flows and at the UE for uplink
flows. COPA and PCC consume the round-trip time of each acked packet; GCC
consumes the data packet's one-way delay, fed back with its ack.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..csvio import write_table
from ..errors import ConfigError
from ..sim.link import LinkSimulator
from ..sim.records import PacketRecord, RetxEvent
from ..sim.scenario import LinkScenario
from .copa import Copa
from .gcc import Gcc
from .pcc import Pcc
from ..gandalf.filtering import FilterConfig
from .signal import CC_FILTER, STREAM_HOP_US, attach_signal, make_signal

CC_LOG_FIELDS = ("t_us", "pkt_id", "raw_us", "processed_us", "metric", "state", "rate_pps")
MAX_PACING_PPS = 1e6
WARMUP_US = 5_000_000


def make_controller(kind: str, seed: int = 0):
    kind = kind.strip().lower()
    if kind == "copa":
        return Copa()
    if kind == "pcc":
        return Pcc(seed=seed)
    if kind == "gcc":
        return Gcc()
    raise ConfigError(f"unknown controller {kind!r}; expected copa|pcc|gcc")


@dataclass
class CcRun:
    kind: str
    signal: str
    duration_us: int
    sent: list = field(default_factory=list)              # send times of data packets
    delivered: list = field(default_factory=list)         # receiver delivery times of data packets
    log: list = field(default_factory=list)
    events: list = field(default_factory=list)
    overuse_count: int = 0
    overuse_times: list = field(default_factory=list)

    def throughput_pps(self, t0_us: int, t1_us: int) -> float:
        d = np.asarray(self.delivered, dtype=np.int64)
        n = int(np.count_nonzero((d >= t0_us) & (d < t1_us)))
        return n * 1e6 / max(t1_us - t0_us, 1)

    def send_rate_pps(self, t0_us: int, t1_us: int) -> float:
        s = np.asarray(self.sent, dtype=np.int64)
        n = int(np.count_nonzero((s >= t0_us) & (s < t1_us)))
        return n * 1e6 / max(t1_us - t0_us, 1)

    def rtts(self, t0_us: int = 0) -> np.ndarray:
        return np.array([row[2] for row in self.log if row[0] >= t0_us], dtype=float)

    def write_log(self, path: "str | Path") -> None:
        write_table(path, CC_LOG_FIELDS, self.log,
                    meta={"controller": self.kind, "signal": self.signal})


def run_closed_loop(scenario: LinkScenario, kind: str, signal: str = "raw",
                    mss: int = 1400, seed: Optional[int] = None,
                    hop_us: int = STREAM_HOP_US, filter_cfg: FilterConfig = CC_FILTER) -> CcRun:
    """Run controller ``kind`` over ``scenario`` for its duration with the given signal source."""
    scenario.validate()
    sim = LinkSimulator(scenario, builtin_traffic=False)
    data_dir = scenario.direction
    cc = make_controller(kind, scenario.seed if seed is None else seed)
    source = make_signal(signal, scenario.tti_us, scenario.prop_delay_us, filter_cfg, hop_us)
    agent = attach_signal(cc, source)
    uses_owd = cc.kind == "gcc"
    run = CcRun(cc.kind, source.name, scenario.duration_us)

    pending: list[tuple[int, int, int, PacketRecord]] = []
    seq = 0
    data_by_id: dict[int, PacketRecord] = {}
    inflight = 0
    next_send = 0.0
    end = scenario.duration_us
    tti = scenario.tti_us
    last_state = None

    while sim.t < end:
        t = sim.t
        rate = min(max(agent.pacing_rate_pps, 1e-3), MAX_PACING_PPS)
        gap = 1e6 / rate
        if next_send < t - gap:
            next_send = float(t)      # no credit accumulates while idle or window-limited
        while next_send < t + tti and inflight < agent.cwnd:
            ts = max(int(next_send), t)
            pkt = sim.send(data_dir, mss, ts)
            data_by_id[pkt.pkt_id] = pkt
            agent.on_send(pkt.pkt_id, ts)
            run.sent.append(ts)
            inflight += 1
            next_send += gap
        done, events = sim.step()
        for ev in events:
            agent.on_event(ev)
            run.events.append(ev)
        for p in done:
            heapq.heappush(pending, (p.t_delivered, int(p.is_ack), seq, p))
            seq += 1
        now = sim.t
        while pending and pending[0][0] <= now:
            t_del, _, _, p = heapq.heappop(pending)
            owd = p.t_delivered - p.t_app_send
            if not p.is_ack:
                run.delivered.append(p.t_delivered)
                agent.on_leg(p.direction, p.t_app_send, owd, p.pkt_id)
                continue
            if not uses_owd:
                agent.on_leg(p.direction, p.t_app_send, owd, p.pkt_id)
            data = data_by_id.pop(p.pkt_id)
            inflight -= 1
            rtt = t_del - data.t_app_send
            if uses_owd:
                raw = data.t_delivered - data.t_app_send
                processed = agent.on_sample(data.t_app_send, raw, p.pkt_id, t_del, rtt_us=rtt)
            else:
                raw = rtt
                processed = agent.on_sample(data.t_app_send, raw, p.pkt_id, t_del)
            metric, state, rate_pps = cc.log_fields()
            run.log.append((t_del, p.pkt_id, raw, round(processed, 3), round(metric, 3), state,
                            round(rate_pps, 3)))
            if uses_owd and state == "Overuse" and last_state != "Overuse":
                run.overuse_times.append(t_del)
            last_state = state
    if uses_owd:
        run.overuse_count = cc.state.overuse_count
    return run


def utilization(run: CcRun, capacity_pps: float, warmup_us: int = WARMUP_US) -> float:
    if not capacity_pps or not math.isfinite(capacity_pps):
        raise ConfigError("utilization needs a finite capacity")
    return run.throughput_pps(warmup_us, run.duration_us) / capacity_pps

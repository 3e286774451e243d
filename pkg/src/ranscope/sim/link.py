"""TTI-stepped simulator of one UE <-> base-station link.

Packet path per direction::

    downlink  server -> [bottleneck] -> core propagation -> BS MAC queue -> PHY -> UE
    uplink    UE buffer -(BSR / grant)-> PHY -> BS -> [bottleneck] -> core propagation -> server

The bottleneck (capacity limit and congestion profile) sits only on the data
direction; acks bypass it. Delivery of a PDU sent in slot ``t`` happens at the
end of that slot, ``t + TTI``. A MAC error or RLC event opens a hold on the
receiver: every PDU sent while the hold is open is released at ``end + TTI``,
together with the retransmitted one.

All random draws are keyed by time (one uniform per direction per TTI, one
set per BSR instant, pre-drawn RLC trigger times), so a replay with holds
suppressed sees exactly the same error and grant decisions.
"""
from __future__ import annotations

from collections import deque
from typing import Callable, Iterable, Optional

import numpy as np

from ..errors import ConfigError, ReplayMismatch
from ..timing import Direction, mac_retx_delay, table_for
from .bsr import quantize_bsr
from .records import BsrLogEntry, Layer, LinkStats, PacketRecord, RetxEvent, Trace
from .scenario import LinkScenario

DL, UL = Direction.DOWNLINK, Direction.UPLINK
_DRAW_CHUNK = 8192
MAX_DRAIN_US = 10_000_000


class _Draws:
    """Uniform draws consumed by index, generated lazily in fixed-size chunks."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._buf = np.empty(0)

    def __getitem__(self, i: int) -> float:
        while i >= len(self._buf):
            self._buf = np.concatenate([self._buf, self._rng.random(_DRAW_CHUNK)])
        return float(self._buf[i])


class _RlcTriggers:
    """Poisson trigger times with their uniformly drawn hold durations."""

    def __init__(self, rng: np.random.Generator, rate_per_s: float, lo: int, hi: int):
        self._rng = rng
        self._rate = rate_per_s
        self._lo, self._hi = lo, hi
        self._t = 0.0
        self.next_time: Optional[int] = None
        self.next_duration = 0
        self.advance()

    def advance(self) -> None:
        if self._rate <= 0:
            self.next_time = None
            return
        self._t += self._rng.exponential(1e6 / self._rate)
        self.next_duration = int(self._rng.integers(self._lo, self._hi + 1))
        # vanishing rates push the next trigger past any representable run
        self.next_time = int(self._t) if self._t < 2.0 ** 62 else None


class _NetPath:
    """Core-network segment: optional bottleneck FIFO, added delay, propagation."""

    def __init__(self, sc: LinkScenario, tti: int, deliver: Callable[[PacketRecord, int], None],
                 shaped: bool):
        self.prop = sc.prop_delay_us
        self.tti = tti
        self.deliver = deliver
        self.cong = sc.congestion if shaped else None
        self.capacity = sc.capacity_pps if shaped else None
        self.queue: deque = deque()
        self.credit = 0.0
        self.last_exit = 0

    def push(self, pkt: PacketRecord, ready: int) -> None:
        if self.capacity is None:
            self._exit(pkt, ready)
        else:
            self.queue.append((ready, pkt))

    def _exit(self, pkt: PacketRecord, t: int) -> None:
        if self.cong is not None:
            t = max(self.last_exit, t + self.cong.extra_delay_us(t))
            self.last_exit = t
        self.deliver(pkt, t + self.prop)

    def tick(self, t: int) -> None:
        if self.capacity is None:
            return
        rate = max(0.0, self.capacity - self.cong.cross_pps(t))
        self.credit += rate * self.tti / 1e6
        horizon = t + self.tti
        while self.queue and self.credit >= 1.0 and self.queue[0][0] < horizon:
            ready, pkt = self.queue.popleft()
            self.credit -= 1.0
            self._exit(pkt, max(ready, t))
        if not self.queue:
            self.credit = min(self.credit, 1.0)

    @property
    def busy(self) -> bool:
        return bool(self.queue)


class LinkSimulator:
    """One simulation run. Drive it with :meth:`step` or use :func:`run_trace`.

    With ``builtin_traffic`` the scenario's application source feeds the data
    direction; otherwise callers inject packets through :meth:`send`.
    ``suppress_retx`` keeps every random draw but never opens a hold;
    ``ack_times`` pins each ack's send time (by pkt_id) instead of deriving it
    from the data packet's delivery.
    """

    def __init__(self, scenario: LinkScenario, suppress_retx: bool = False,
                 builtin_traffic: bool = True, ack_times: Optional[dict[int, int]] = None):
        self.sc = scenario
        self.suppress = suppress_retx
        self._ack_times = ack_times
        self.frame = scenario.frame
        self.table = table_for(self.frame)
        self.tti = scenario.tti_us
        self.t = 0
        self.k = 0

        seq = np.random.SeedSequence(scenario.seed)
        s_traffic, s_dl, s_ul, s_rlc_dl, s_rlc_ul, s_jitter, s_over = seq.spawn(7)
        self._traffic_rng = np.random.default_rng(s_traffic)
        self._mac_draws = {DL: _Draws(np.random.default_rng(s_dl)),
                           UL: _Draws(np.random.default_rng(s_ul))}
        lo, hi = scenario.rlc_delay_range_us
        rate = scenario.rlc_event_rate_per_s
        self._rlc = {DL: _RlcTriggers(np.random.default_rng(s_rlc_dl), rate, lo, hi),
                     UL: _RlcTriggers(np.random.default_rng(s_rlc_ul), rate, lo, hi)}
        self._jitter_draws = _Draws(np.random.default_rng(s_jitter))
        self._over_draws = _Draws(np.random.default_rng(s_over))

        n = self.frame.slots_per_frame
        self._data_slot = {d: [self.frame.role_allows(d, s) and s in self.table.data_slots(d)
                               for s in range(n)] for d in (DL, UL)}
        self._tm_us = {d: [mac_retx_delay(self.frame, self.table, d, s) * self.tti
                           if self._data_slot[d][s] else 0 for s in range(n)] for d in (DL, UL)}

        self.packets: list[PacketRecord] = []
        self.events: list[RetxEvent] = []
        self.bsr_log: list[BsrLogEntry] = []
        self.stats = LinkStats()
        self._next_id = 0
        self._completed: list[PacketRecord] = []
        self._last_completion = 0
        self._new_events: list[RetxEvent] = []

        self._bs_queue: deque[PacketRecord] = deque()
        self._ue_queue: deque[PacketRecord] = deque()
        self._grants: dict[int, int] = {}
        self._hold_end = {DL: -1, UL: -1}
        self._release = {DL: 0, UL: 0}
        self._last_delivery = {DL: 0, UL: 0}
        self._rlc_pending = {DL: None, UL: None}

        data_dir = scenario.direction
        self._dl_net = _NetPath(scenario, self.tti, self._bs_enqueue, shaped=data_dir is DL)
        self._ul_net = _NetPath(scenario, self.tti, self._server_receive, shaped=data_dir is UL)

        self._app_times: list[int] = []
        self._app_pos = 0
        self._traffic_t = 0.0
        self._builtin = builtin_traffic
        if builtin_traffic:
            self._gen_traffic()

    # ---- traffic ---------------------------------------------------------
    def _gen_traffic(self) -> None:
        sc = self.sc
        pps = sc.app_rate_mbps * 1e6 / (8 * sc.pkt_size_bytes)
        end = sc.duration_us
        if pps <= 0:
            return
        mean = 1e6 / pps
        times: list[int] = []
        t = 0.0
        while True:
            if sc.interarrival == "constant":
                t += mean
            else:
                t += float(self._traffic_rng.exponential(mean))
            if t >= end:
                break
            times.append(int(t))
        self._app_times = times

    def send(self, direction: Direction, size_bytes: int, t_us: int) -> PacketRecord:
        """Hand a data packet to the stack at ``t_us`` (must not precede the current TTI)."""
        pkt = PacketRecord(self._next_id, direction, size_bytes, t_us)
        self._next_id += 1
        self.packets.append(pkt)
        if direction is DL:
            self._dl_net.push(pkt, t_us)
        else:
            self._ue_enqueue(pkt, t_us)
        return pkt

    def _ack(self, data: PacketRecord, t: int) -> None:
        direction = UL if data.direction is DL else DL
        ack = PacketRecord(data.pkt_id, direction, self.sc.ack_size_bytes, t, is_ack=True)
        self.packets.append(ack)
        if direction is UL:
            self._ue_enqueue(ack, t)
        else:
            # acks bypass the bottleneck
            self._bs_enqueue(ack, t + self.sc.prop_delay_us)

    # ---- queue plumbing --------------------------------------------------
    def _bs_enqueue(self, pkt: PacketRecord, t: int) -> None:
        pkt.t_mac_enqueue = t
        self._bs_queue.append(pkt)

    def _ue_enqueue(self, pkt: PacketRecord, t: int) -> None:
        pkt.t_mac_enqueue = t
        self._ue_queue.append(pkt)

    def _complete(self, pkt: PacketRecord, t: int) -> None:
        pkt.t_delivered = t
        self._last_completion = max(self._last_completion, t)
        self._completed.append(pkt)
        if self.sc.acks and not pkt.is_ack:
            self._ack(pkt, t if self._ack_times is None else self._ack_times[pkt.pkt_id])

    def _server_receive(self, pkt: PacketRecord, t: int) -> None:
        self._complete(pkt, t)

    def _ran_deliver(self, direction: Direction, pdu: list[PacketRecord], t_release: int) -> None:
        self._last_delivery[direction] = t_release
        for pkt in pdu:
            if direction is DL:
                self._complete(pkt, t_release)
            elif pkt.is_ack:
                self._complete(pkt, t_release + self.sc.prop_delay_us)
            else:
                self._ul_net.push(pkt, t_release)

    # ---- HARQ / ARQ --------------------------------------------------------
    def _snap_rlc_end(self, direction: Direction, start: int, duration: int) -> int:
        lo, hi = self.sc.rlc_delay_range_us
        n = self.frame.slots_per_frame
        slot0 = self.k
        target = (start + duration) // self.tti - slot0
        lo_k = -(-lo // self.tti)
        hi_k = hi // self.tti
        for off in range(0, hi_k - lo_k + 1):
            for cand in (target + off, target - off):
                if lo_k <= cand <= hi_k and self._data_slot[direction][(slot0 + cand) % n]:
                    return start + cand * self.tti
        return start + max(lo_k, min(target, hi_k)) * self.tti

    def _transmit(self, direction: Direction, pdu: list[PacketRecord]) -> None:
        t, slot = self.t, self.k % self.frame.slots_per_frame
        for pkt in pdu:
            pkt.t_phy_first_tx = t
        self.stats.mac_pdus[direction] += 1
        error = self._mac_draws[direction][self.k] < (self.sc.p_mac_dl if direction is DL
                                                      else self.sc.p_mac_ul)
        if error:
            self.stats.mac_errors[direction] += 1

        trig = self._rlc[direction]
        while trig.next_time is not None and trig.next_time <= t:
            if self._rlc_pending[direction] is None:
                self._rlc_pending[direction] = trig.next_duration
            trig.advance()

        if not self.suppress and t > self._hold_end[direction]:
            event = None
            if self._rlc_pending[direction] is not None:
                end = self._snap_rlc_end(direction, t, self._rlc_pending[direction])
                event = RetxEvent(len(self.events), Layer.RLC, direction, t, end)
                self._rlc_pending[direction] = None
            elif error:
                event = RetxEvent(len(self.events), Layer.MAC, direction, t,
                                  t + self._tm_us[direction][slot])
            if event is not None:
                self.events.append(event)
                self._new_events.append(event)
                self._hold_end[direction] = event.end_us
                self._release[direction] = event.end_us + self.tti
        elif self.suppress:
            self._rlc_pending[direction] = None

        self._ran_deliver(direction, pdu, max(t + self.tti, self._release[direction]))

    def _downlink_slot(self) -> None:
        q, t = self._bs_queue, self.t
        if not q or q[0].t_mac_enqueue > t:
            return
        pdu = [q.popleft()]
        used = pdu[0].size_bytes
        while q and q[0].t_mac_enqueue <= t and used + q[0].size_bytes <= self.sc.tb_bytes:
            pkt = q.popleft()
            used += pkt.size_bytes
            pdu.append(pkt)
        self._transmit(DL, pdu)

    def _uplink_slot(self) -> None:
        grant = self._grants.pop(self.t, None)
        if grant is None:
            return
        q, t = self._ue_queue, self.t
        pdu: list[PacketRecord] = []
        used = 0
        # a packet goes out if its first byte fits; its tail segment rides along
        while q and q[0].t_mac_enqueue <= t and used < grant:
            pkt = q.popleft()
            used += pkt.size_bytes
            pdu.append(pkt)
        if pdu:
            self._transmit(UL, pdu)

    # ---- BSR / grants ------------------------------------------------------
    def _grant_slot(self, t_report: int, draw_index: int) -> int:
        T = self.sc.t_bsr_us
        desired = 1.5 * T
        if self.sc.t_r_policy == "jitter":
            u = self._jitter_draws[draw_index]
            desired += (2 * u - 1) * self.sc.jitter_frac * T
        lo_k = -(-T // self.tti)
        hi_k = (2 * T) // self.tti - 1
        target = min(max(desired / self.tti, lo_k), hi_k)
        n = self.frame.slots_per_frame
        base = t_report // self.tti
        best = None
        for k in range(lo_k, hi_k + 1):
            if self._data_slot[UL][(base + k) % n]:
                key = (abs(k - target), k)
                if best is None or key < best[0]:
                    best = (key, k)
        if best is None:
            raise ConfigError("no uplink data slot within [T_bsr, 2 T_bsr) of a BSR")
        return t_report + best[1] * self.tti

    def _bsr(self) -> None:
        t = self.t
        i = t // self.sc.t_bsr_us
        total = 0
        for pkt in self._ue_queue:
            if pkt.t_mac_enqueue > t:
                break
            total += pkt.size_bytes
        level = quantize_bsr(total)
        self.bsr_log.append(BsrLogEntry(t, level.index, level.range_low, level.range_high, total))
        over = self._over_draws[i] < self.sc.overalloc_prob
        slot = self._grant_slot(t, i)
        if total == 0:
            return
        pending = sum(self._grants.values())
        if over:
            size = level.range_high if level.range_high != float("inf") else 1 << 62
            self.stats.overallocations += 1
        else:
            size = total - pending
        if size <= 0:
            return
        self.stats.grants += 1
        self._grants[slot] = self._grants.get(slot, 0) + int(size)

    # ---- stepping ----------------------------------------------------------
    def step(self) -> tuple[list[PacketRecord], list[RetxEvent]]:
        """Advance one TTI; returns packets completed and events opened during it."""
        t, tti = self.t, self.tti
        if self._builtin:
            times, direction, size = self._app_times, self.sc.direction, self.sc.pkt_size_bytes
            while self._app_pos < len(times) and times[self._app_pos] < t + tti:
                self.send(direction, size, times[self._app_pos])
                self._app_pos += 1
        self._dl_net.tick(t)
        slot = self.k % self.frame.slots_per_frame
        if self._data_slot[DL][slot]:
            self._downlink_slot()
        if self._data_slot[UL][slot]:
            self._uplink_slot()
        self._ul_net.tick(t)
        if t % self.sc.t_bsr_us == 0:
            self._bsr()
        self.k += 1
        self.t = self.k * tti
        done, self._completed = self._completed, []
        new_events, self._new_events = self._new_events, []
        return done, new_events

    @property
    def idle(self) -> bool:
        return (not self._bs_queue and not self._ue_queue and not self._grants
                and not self._dl_net.busy and not self._ul_net.busy
                and self._app_pos >= len(self._app_times)
                and self._last_completion <= self.t)

    def run(self) -> Trace:
        end = self.sc.duration_us
        while self.t < end:
            self.step()
        limit = end + MAX_DRAIN_US
        while not self.idle and self.t < limit:
            self.step()
        packets = sorted(self.packets, key=lambda p: (p.pkt_id, p.is_ack))
        return Trace(packets, list(self.events), list(self.bsr_log),
                     self.sc.fingerprint(), self.stats)


def run_trace(scenario: LinkScenario) -> Trace:
    """Full deterministic simulation of ``scenario`` with its built-in traffic."""
    return LinkSimulator(scenario).run()


def counterfactual_replay(scenario: LinkScenario, trace: Trace) -> list[PacketRecord]:
    """Re-run ``scenario`` with every hold suppressed.

    Application arrivals, random draws and ack send times are those of the
    original run, so each packet sees the same scheduling minus the holds.
    """
    if trace.fingerprint != scenario.fingerprint():
        raise ReplayMismatch("trace was not produced by this scenario")
    ack_times = {p.pkt_id: p.t_app_send for p in trace.packets if p.is_ack}
    if scenario.acks and not ack_times and trace.packets:
        raise ReplayMismatch("trace has no acks but the scenario generates them")
    try:
        replay = LinkSimulator(scenario, suppress_retx=True, ack_times=ack_times).run()
    except KeyError as exc:
        raise ReplayMismatch(f"trace lacks the ack of packet {exc.args[0]}") from None
    orig = [(p.pkt_id, p.t_app_send) for p in trace.packets if not p.is_ack]
    new = [(p.pkt_id, p.t_app_send) for p in replay.packets if not p.is_ack]
    if orig != new:
        raise ReplayMismatch("replayed application arrivals differ from the trace")
    return replay.packets


def index_by_key(packets: Iterable[PacketRecord]) -> dict[tuple[int, bool], PacketRecord]:
    return {(p.pkt_id, p.is_ack): p for p in packets}


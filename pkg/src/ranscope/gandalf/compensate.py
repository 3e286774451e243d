"""Retransmission delay compensation.

For each retransmission event the error packet (first packet released at the
event end whose send time precedes the event start) loses the event duration;
every other packet released in the same burst is pulled down to that corrected
delay. Burst membership is a delivery within one TTI of the event end.

When the series is measured behind a queue the RAN does not see (uplink
delay taken at a remote receiver), the release instant reaches the series
late. ``late_us`` lets the error packet be found up to that much after the
event end; the burst is then anchored at its actual delivery.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from ..sim.records import RetxEvent
from .series import DelaySeries


@dataclass
class _Slot:
    event: RetxEvent
    corrected: Optional[float] = None
    anchor: Optional[int] = None
    members: list = field(default_factory=list)


class OnlineCompensator:
    """Incremental compensation core; feed samples in delivery order.

    Events may be added at any time before their burst is delivered.
    """

    def __init__(self, tti_us: float, floor_us: Optional[float] = None, late_us: int = 0):
        self.tol = tti_us
        self.floor = floor_us
        self.late = late_us
        self._ends: list[int] = []
        self._slots: list[_Slot] = []
        self.unmatched: list[RetxEvent] = []
        self.matched: dict[int, list[int]] = {}

    def add_event(self, event: RetxEvent) -> None:
        i = bisect.bisect_right(self._ends, event.end_us)
        self._ends.insert(i, event.end_us)
        self._slots.insert(i, _Slot(event))

    def _retire_first(self) -> None:
        slot = self._slots.pop(0)
        self._ends.pop(0)
        if slot.corrected is None:
            self.unmatched.append(slot.event)
        else:
            self.matched[slot.event.id] = slot.members

    def _closes(self, slot: _Slot) -> float:
        end = slot.event.end_us
        if slot.anchor is None:
            return end + self.tol + self.late
        return max(end, slot.anchor if slot.anchor > end + self.tol else end) + self.tol

    def process(self, t_send: float, delay: float, pkt_id: int) -> float:
        t_recv = t_send + delay
        slots, tol = self._slots, self.tol
        while slots and self._closes(slots[0]) < t_recv:
            self._retire_first()
        if not slots or slots[0].event.end_us - tol > t_recv:
            return delay
        slot = slots[0]
        ev = slot.event
        if slot.corrected is None:
            if t_send > ev.start_us:
                return delay
            corrected = delay - ev.duration_us
            if self.floor is not None:
                corrected = max(corrected, self.floor)
            slot.corrected = min(delay, corrected)
            slot.anchor = int(t_recv)
            slot.members.append(pkt_id)
            return slot.corrected
        slot.members.append(pkt_id)
        return min(delay, slot.corrected)

    def finish(self) -> None:
        while self._slots:
            self._retire_first()


@dataclass
class CompensationResult:
    series: DelaySeries
    unmatched: list[RetxEvent]
    bursts: dict[int, list[int]]

    @property
    def affected(self) -> set[int]:
        return {pid for members in self.bursts.values() for pid in members}


def compensate_retx(series: DelaySeries, events: Iterable[RetxEvent], tti_us: float,
                    floor_us: Optional[float] = None, late_us: int = 0) -> CompensationResult:
    """Subtract each event's added delay from its error packet and flatten its burst.

    ``events`` must already be on the series' clock (see :func:`synchronize`).
    Events with no qualifying packet at their end are returned as unmatched
    and otherwise skipped.
    """
    comp = OnlineCompensator(tti_us, floor_us, late_us)
    for ev in sorted(events, key=lambda e: (e.end_us, e.id)):
        comp.add_event(ev)
    out = series.delay.astype(float).copy()
    order = np.lexsort((series.pkt_id, series.t_recv))
    t_send, delay, ids = series.t_send, series.delay, series.pkt_id
    for i in order.tolist():
        out[i] = comp.process(int(t_send[i]), float(delay[i]), int(ids[i]))
    comp.finish()
    return CompensationResult(series.with_delay(out), comp.unmatched, comp.matched)

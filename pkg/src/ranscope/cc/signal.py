"""Delay-signal sources sitting between the link and a controller.

A source sees every retransmission event as it is reported and every
one-way delivery of the flow (data and ack legs). The controller only ever
receives the value returned by :meth:`process`, so its logic is unchanged
whichever source is attached.
"""
from __future__ import annotations

from typing import Optional

from ..errors import ConfigError
from ..gandalf.compensate import OnlineCompensator
from ..gandalf.filtering import FilterConfig, StreamingFilter
from ..gandalf.pipeline import UL_LATE_US, AblationMode
from ..sim.records import RetxEvent
from ..timing import Direction

CC_FILTER = FilterConfig(cutoff_hz=5.0, window_us=2_000_000, rolloff=0.9)
STREAM_HOP_US = 20_000


class RawSignal:
    name = "raw"

    def on_event(self, event: RetxEvent) -> None:
        pass

    def on_leg(self, direction: Direction, t_send: int, owd_us: float, pkt_id: int) -> None:
        pass

    def process(self, t_send: int, value_us: float, pkt_id: int) -> float:
        return value_us


class GandalfSignal:
    """Online compensation per leg, then the streaming RAN-aware filter.

    Uplink events are logged on the base-station clock and shifted by
    ``ul_shift_us`` before matching; downlink events apply as reported.
    """

    def __init__(self, mode: "AblationMode | str" = AblationMode.FULL, tti_us: int = 1000,
                 ul_shift_us: int = 0, filter_cfg: FilterConfig = CC_FILTER,
                 hop_us: int = STREAM_HOP_US, floor_us: Optional[float] = None,
                 ul_late_us: int = UL_LATE_US):
        self.mode = AblationMode.parse(mode)
        self.name = f"gandalf:{self.mode.value}"
        self.ul_shift = ul_shift_us
        self._comp = {d: OnlineCompensator(tti_us, floor_us, ul_late_us if d is Direction.UPLINK else 0)
                      for d in self.mode.compensates}
        self._removed: dict[int, float] = {}
        self._filter = StreamingFilter(filter_cfg, hop_us) if self.mode.filters else None

    def on_event(self, event: RetxEvent) -> None:
        comp = self._comp.get(event.direction)
        if comp is not None:
            comp.add_event(event.shifted(self.ul_shift) if event.direction is Direction.UPLINK
                           else event)

    def on_leg(self, direction: Direction, t_send: int, owd_us: float, pkt_id: int) -> None:
        """Feed one delivered leg; call in delivery order per direction."""
        comp = self._comp.get(direction)
        if comp is None:
            return
        removed = owd_us - comp.process(t_send, owd_us, pkt_id)
        if removed:
            self._removed[pkt_id] = self._removed.get(pkt_id, 0.0) + removed

    def process(self, t_send: int, value_us: float, pkt_id: int) -> float:
        value = value_us - self._removed.pop(pkt_id, 0.0)
        if self._filter is not None:
            value = self._filter.update(t_send, value)
        return value


def make_signal(spec: str, tti_us: int = 1000, ul_shift_us: int = 0,
                filter_cfg: FilterConfig = CC_FILTER, hop_us: int = STREAM_HOP_US):
    """Parse ``raw`` or ``gandalf:<mode>`` into a signal source."""
    spec = spec.strip().lower()
    if spec == "raw":
        return RawSignal()
    if spec.startswith("gandalf"):
        _, _, mode = spec.partition(":")
        return GandalfSignal(mode or AblationMode.FULL, tti_us, ul_shift_us, filter_cfg, hop_us)
    raise ConfigError(f"unknown signal {spec!r}; expected raw or gandalf:<mode>")


def attach_signal(controller, source):
    """Bind ``source`` to ``controller``; the controller object itself is not modified."""
    return AttachedController(controller, source)


class AttachedController:
    def __init__(self, controller, source):
        self.cc = controller
        self.source = source

    def __getattr__(self, name):
        return getattr(self.cc, name)

    def on_event(self, event: RetxEvent) -> None:
        self.source.on_event(event)

    def on_leg(self, direction: Direction, t_send: int, owd_us: float, pkt_id: int) -> None:
        self.source.on_leg(direction, t_send, owd_us, pkt_id)

    def on_sample(self, t_send: int, value_us: float, pkt_id: int, now_us: int, **extra) -> float:
        processed = self.source.process(t_send, value_us, pkt_id)
        self.cc.on_ack(processed, now_us, pkt_id, **extra)
        return processed

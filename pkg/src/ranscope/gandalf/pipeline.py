"""Compensation followed by RAN-aware filtering, with the ablation modes.

Event clocks: downlink events are on the UE clock, where downlink delivery is
timestamped, so they apply unshifted. Uplink events are logged at the base
station; ``ul_shift_us`` maps them onto the receiver's delivery clock (core
propagation plus any clock offset; a shift from :func:`synchronize`, which
aligns the event end with the burst instant, corresponds to that value plus
one TTI).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from ..errors import ConfigError
from ..sim.records import RetxEvent
from ..timing import Direction
from .compensate import compensate_retx
from .filtering import FilterConfig, ran_aware_filter
from .series import DelayKind, DelaySeries


class AblationMode(str, enum.Enum):
    FULL = "full"
    DL_RETX = "dl-retx"
    UL_RETX = "ul-retx"
    FILTER = "filter"
    OFF = "off"

    @classmethod
    def parse(cls, value: "str | AblationMode") -> "AblationMode":
        try:
            return cls(value if isinstance(value, AblationMode) else value.strip().lower())
        except ValueError:
            names = "|".join(m.value for m in cls)
            raise ConfigError(f"unknown mode {value!r}; expected {names}") from None

    @property
    def compensates(self) -> tuple[Direction, ...]:
        return {AblationMode.FULL: (Direction.DOWNLINK, Direction.UPLINK),
                AblationMode.DL_RETX: (Direction.DOWNLINK,),
                AblationMode.UL_RETX: (Direction.UPLINK,)}.get(self, ())

    @property
    def filters(self) -> bool:
        return self in (AblationMode.FULL, AblationMode.FILTER)


# uplink deliveries are timed at the far end, behind queues the base station
# never sees; bursts may reach the series this much after the event end
UL_LATE_US = 25_000


@dataclass(frozen=True)
class PipelineConfig:
    tti_us: int = 1000
    filter: FilterConfig = field(default_factory=FilterConfig)
    ul_shift_us: int = 0
    dl_shift_us: int = 0
    floor_us: Optional[float] = None
    ul_late_us: int = UL_LATE_US

    def late_for(self, direction: Direction) -> int:
        return self.ul_late_us if direction is Direction.UPLINK else 0

    def shift_for(self, direction: Direction) -> int:
        return self.ul_shift_us if direction is Direction.UPLINK else self.dl_shift_us


def _events_on_clock(events: Iterable[RetxEvent], direction: Direction, cfg: PipelineConfig):
    shift = cfg.shift_for(direction)
    return [e.shifted(shift) for e in events if e.direction is direction]


def leg_corrections(leg: DelaySeries, events: Iterable[RetxEvent],
                    cfg: PipelineConfig) -> dict[int, float]:
    """Per-pkt_id delay removed from one one-way leg by compensation."""
    if leg.direction is None:
        raise ConfigError("a compensation leg needs a direction")
    res = compensate_retx(leg, _events_on_clock(events, leg.direction, cfg), cfg.tti_us,
                          late_us=cfg.late_for(leg.direction))
    removed = leg.delay - res.series.delay
    nz = np.nonzero(removed)[0]
    return {int(leg.pkt_id[i]): float(removed[i]) for i in nz}


def pipeline(raw: DelaySeries, events: Iterable[RetxEvent], cfg: PipelineConfig,
             mode: "AblationMode | str", legs: Optional[Mapping[Direction, DelaySeries]] = None
             ) -> DelaySeries:
    """Apply the stages selected by ``mode`` to ``raw``.

    OWD series are compensated with events of their own direction. RTT
    series need the one-way ``legs`` (data and ack directions) so each leg's
    correction can be taken out of the round trip.
    """
    mode = AblationMode.parse(mode)
    if mode is AblationMode.OFF:
        return raw
    events = list(events)
    out = raw
    dirs = mode.compensates
    if dirs:
        if raw.kind is DelayKind.OWD:
            if raw.direction is None:
                raise ConfigError("OWD series without a direction cannot be compensated")
            if raw.direction in dirs:
                ev = _events_on_clock(events, raw.direction, cfg)
                out = compensate_retx(raw, ev, cfg.tti_us, cfg.floor_us,
                                      cfg.late_for(raw.direction)).series
        else:
            if legs is None:
                raise ConfigError("RTT compensation needs the one-way legs")
            delay = raw.delay.astype(float).copy()
            pos = {int(pid): i for i, pid in enumerate(raw.pkt_id.tolist())}
            for d in dirs:
                if d not in legs:
                    continue
                for pid, removed in leg_corrections(legs[d], events, cfg).items():
                    i = pos.get(pid)
                    if i is not None:
                        delay[i] -= removed
            if cfg.floor_us is not None:
                delay = np.minimum(raw.delay, np.maximum(delay, cfg.floor_us))
            out = raw.with_delay(delay)
    if mode.filters:
        out = ran_aware_filter(out, cfg.filter)
    return out

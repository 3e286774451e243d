from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from ..timing import Direction


class Layer(str, enum.Enum):
    MAC = "MAC"
    RLC = "RLC"


@dataclass(slots=True)
class PacketRecord:
    """Lifecycle of one packet; all times are integer microseconds.

    ``t_mac_enqueue`` is when the packet entered the transmitter's MAC queue
    (the UE uplink buffer for uplink). Acks reuse the pkt_id of the data
    packet they acknowledge, in the opposite direction.
    """

    pkt_id: int
    direction: Direction
    size_bytes: int
    t_app_send: int
    t_mac_enqueue: Optional[int] = None
    t_phy_first_tx: Optional[int] = None
    t_delivered: Optional[int] = None
    is_ack: bool = False

    @property
    def owd_us(self) -> int:
        return self.t_delivered - self.t_app_send


@dataclass(frozen=True, slots=True)
class RetxEvent:
    id: int
    layer: Layer
    direction: Direction
    start_us: int
    end_us: int

    @property
    def duration_us(self) -> int:
        return self.end_us - self.start_us

    def shifted(self, shift_us: int) -> "RetxEvent":
        return RetxEvent(self.id, self.layer, self.direction,
                         self.start_us + shift_us, self.end_us + shift_us)


@dataclass(frozen=True, slots=True)
class BsrLogEntry:
    t_report_us: int
    index: int
    range_low: float
    range_high: float
    true_buffer_bytes: int


@dataclass
class LinkStats:
    mac_pdus: dict = field(default_factory=lambda: {Direction.DOWNLINK: 0, Direction.UPLINK: 0})
    mac_errors: dict = field(default_factory=lambda: {Direction.DOWNLINK: 0, Direction.UPLINK: 0})
    grants: int = 0
    overallocations: int = 0

    def mper(self, direction: Direction) -> float:
        n = self.mac_pdus[direction]
        return self.mac_errors[direction] / n if n else 0.0


@dataclass
class Trace:
    packets: list[PacketRecord]
    events: list[RetxEvent]
    bsr: list[BsrLogEntry]
    fingerprint: str = ""
    stats: LinkStats = field(default_factory=LinkStats)

    def by_direction(self, direction: Direction, acks: Optional[bool] = None) -> list[PacketRecord]:
        out = [p for p in self.packets if p.direction is direction]
        if acks is not None:
            out = [p for p in out if p.is_ack == acks]
        return out

    def events_for(self, direction: Direction, layer: Optional[Layer] = None) -> list[RetxEvent]:
        return [e for e in self.events
                if e.direction is direction and (layer is None or e.layer is layer)]

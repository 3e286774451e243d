from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from ..csvio import DELAY_FIELDS, read_table, write_table
from ..errors import ConfigError
from ..sim.records import PacketRecord
from ..timing import Direction


class DelayKind(str, enum.Enum):
    OWD = "OWD"
    RTT = "RTT"


@dataclass(frozen=True, eq=False)
class DelaySeries:
    """Delay samples ordered by pkt_id: (t_send_us, delay_us, pkt_id).

    The receive instant of a sample is ``t_send + delay``; for RTT series
    that is when the ack reached the sender.
    """

    t_send: np.ndarray
    delay: np.ndarray
    pkt_id: np.ndarray
    kind: DelayKind = DelayKind.OWD
    direction: Optional[Direction] = None

    def __post_init__(self) -> None:
        t = np.asarray(self.t_send, dtype=np.int64)
        d = np.asarray(self.delay, dtype=np.float64)
        ids = np.asarray(self.pkt_id, dtype=np.int64)
        if not (len(t) == len(d) == len(ids)):
            raise ConfigError("t_send, delay and pkt_id must have equal length")
        if len(ids) > 1 and np.any(np.diff(ids) <= 0):
            raise ConfigError("samples must be ordered by strictly increasing pkt_id")
        if len(t) > 1 and np.any(np.diff(t) < 0):
            raise ConfigError("t_send must not decrease with pkt_id")
        for name, arr in (("t_send", t), ("delay", d), ("pkt_id", ids)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "kind", DelayKind(self.kind))

    def __len__(self) -> int:
        return len(self.t_send)

    @property
    def t_recv(self) -> np.ndarray:
        return self.t_send + self.delay

    @property
    def duration_us(self) -> int:
        return int(self.t_send[-1] - self.t_send[0]) if len(self) else 0

    def with_delay(self, delay: np.ndarray) -> "DelaySeries":
        return DelaySeries(self.t_send, delay, self.pkt_id, self.kind, self.direction)

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.pkt_id.tolist(), self.delay.tolist()))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DelaySeries):
            return NotImplemented
        return (self.kind is other.kind and self.direction is other.direction
                and np.array_equal(self.t_send, other.t_send)
                and np.array_equal(self.delay, other.delay)
                and np.array_equal(self.pkt_id, other.pkt_id))

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[int, float, int]], kind=DelayKind.OWD,
                     direction: Optional[Direction] = None) -> "DelaySeries":
        rows = sorted(samples, key=lambda s: s[2])
        if not rows:
            return cls(np.empty(0), np.empty(0), np.empty(0), kind, direction)
        t, d, ids = zip(*rows)
        return cls(np.array(t), np.array(d, dtype=float), np.array(ids), kind, direction)


def owd_series(packets: Iterable[PacketRecord], direction: Direction,
               acks: Optional[bool] = None) -> DelaySeries:
    """One-way delays of delivered packets travelling in ``direction``."""
    direction = Direction.parse(direction)
    rows = [(p.t_app_send, float(p.owd_us), p.pkt_id) for p in packets
            if p.direction is direction and p.t_delivered is not None
            and (acks is None or p.is_ack == acks)]
    return DelaySeries.from_samples(rows, DelayKind.OWD, direction)


def rtt_series(packets: Iterable[PacketRecord]) -> DelaySeries:
    """Round-trip delays of data packets, measured at their acks' arrival."""
    data: dict[int, PacketRecord] = {}
    acks: dict[int, PacketRecord] = {}
    for p in packets:
        (acks if p.is_ack else data)[p.pkt_id] = p
    rows = []
    direction = None
    for pid, p in data.items():
        a = acks.get(pid)
        if a is None or a.t_delivered is None:
            continue
        direction = p.direction
        rows.append((p.t_app_send, float(a.t_delivered - p.t_app_send), pid))
    return DelaySeries.from_samples(rows, DelayKind.RTT, direction)


def write_delays(path: str | Path, series: DelaySeries) -> None:
    meta = {"kind": series.kind.value}
    if series.direction is not None:
        meta["direction"] = series.direction.short
    delays = [int(d) if float(d).is_integer() else float(d) for d in series.delay.tolist()]
    rows = zip(series.t_send.tolist(), delays, series.pkt_id.tolist())
    write_table(path, DELAY_FIELDS, rows, meta)


def read_delays(path: str | Path) -> DelaySeries:
    rows, meta = read_table(path, DELAY_FIELDS)
    samples = []
    for r in rows:
        try:
            samples.append((int(r["t_send_us"]), float(r["delay_us"]), int(r["pkt_id"])))
        except ValueError:
            raise ConfigError(f"{path}:{r['_line']}: non-numeric delay sample") from None
    kind = DelayKind(meta.get("kind", "OWD").upper())
    direction = Direction.parse(meta["direction"]) if "direction" in meta else None
    return DelaySeries.from_samples(samples, kind, direction)

"""Cellular time base: frame numerology, TDD slot roles and MAC HARQ timing.

A TTI is one LTE subframe or one NR slot. Retransmission delay T_M is
expressed in TTIs and derived from per-slot K parameters::

    downlink  T_M = K0 + K1 + Kd
    uplink    T_M = K2 + Ku

Two commercial NR TDD profiles (0.5 ms slots) and the fixed LTE timing are
shipped as built-ins; other tables can be loaded from a small text format
(see :func:`parse_timing_table`).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .errors import ConfigError, InvalidSlot


class Rat(str, enum.Enum):
    LTE = "LTE"
    NR = "NR"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value.lower() == value.strip().lower():
                    return member
        return None


class Direction(str, enum.Enum):
    DOWNLINK = "Downlink"
    UPLINK = "Uplink"

    @property
    def short(self) -> str:
        return "dl" if self is Direction.DOWNLINK else "ul"

    @classmethod
    def parse(cls, value: "str | Direction") -> "Direction":
        if isinstance(value, Direction):
            return value
        v = value.strip().lower()
        if v in ("dl", "downlink"):
            return cls.DOWNLINK
        if v in ("ul", "uplink"):
            return cls.UPLINK
        raise ConfigError(f"unknown direction {value!r}")


class SlotRole(str, enum.Enum):
    DOWNLINK = "D"
    UPLINK = "U"
    FLEXIBLE = "F"


class TddProfile(str, enum.Enum):
    CONFIG1 = "Config1"
    CONFIG2 = "Config2"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value.lower() == value.strip().lower():
                    return member
        return None


# (slots_per_frame, tti_us) per NR subcarrier-spacing index
NUMEROLOGY: tuple[tuple[int, float], ...] = (
    (10, 1000.0),
    (20, 500.0),
    (40, 250.0),
    (80, 125.0),
    (160, 62.5),
    (320, 31.25),
    (640, 15.625),
)

FRAME_US = 10_000

# Measured commercial patterns, 20 slots of 0.5 ms. Slot 8/18 of Config1 has
# no published HARQ timing and is kept flexible.
_TDD_PATTERNS = {
    TddProfile.CONFIG1: "DDDDUDDDFU" * 2,
    TddProfile.CONFIG2: "DDDDDDDDUU" * 2,
}


@dataclass(frozen=True)
class FrameConfig:
    rat: Rat
    scs_index: int = 0
    tdd_profile: TddProfile | None = None
    tti_us: float = field(init=False)
    slots_per_frame: int = field(init=False)
    tdd_pattern: tuple[SlotRole, ...] | None = field(init=False)

    def __post_init__(self) -> None:
        rat = Rat(self.rat)
        object.__setattr__(self, "rat", rat)
        if rat is Rat.LTE:
            if self.tdd_profile is not None:
                raise ConfigError("LTE frames carry no TDD profile")
            object.__setattr__(self, "scs_index", 0)
            object.__setattr__(self, "tti_us", 1000.0)
            object.__setattr__(self, "slots_per_frame", 10)
            object.__setattr__(self, "tdd_pattern", None)
            return
        if not 0 <= self.scs_index < len(NUMEROLOGY):
            raise ConfigError(f"scs_index must be in 0..6, got {self.scs_index}")
        slots, tti = NUMEROLOGY[self.scs_index]
        object.__setattr__(self, "tti_us", tti)
        object.__setattr__(self, "slots_per_frame", slots)
        pattern = None
        if self.tdd_profile is not None:
            profile = TddProfile(self.tdd_profile)
            object.__setattr__(self, "tdd_profile", profile)
            if self.scs_index != 1:
                raise ConfigError("shipped TDD profiles use 0.5 ms slots (scs_index=1)")
            pattern = tuple(SlotRole(c) for c in _TDD_PATTERNS[profile])
            if len(pattern) != slots:
                raise ConfigError("tdd_pattern length must equal slots_per_frame")
        object.__setattr__(self, "tdd_pattern", pattern)

    @classmethod
    def lte(cls) -> "FrameConfig":
        return cls(Rat.LTE)

    @classmethod
    def nr(cls, profile: TddProfile | str = TddProfile.CONFIG1, scs_index: int = 1) -> "FrameConfig":
        return cls(Rat.NR, scs_index=scs_index, tdd_profile=TddProfile(profile))

    def slot_role(self, slot_index: int) -> SlotRole | None:
        """Role of a slot, or None when every slot carries both directions (LTE FDD)."""
        if not 0 <= slot_index < self.slots_per_frame:
            raise InvalidSlot(f"slot {slot_index} outside 0..{self.slots_per_frame - 1}")
        if self.tdd_pattern is None:
            return None
        return self.tdd_pattern[slot_index]

    def role_allows(self, direction: Direction, slot_index: int) -> bool:
        role = self.slot_role(slot_index)
        if role is None:
            return True
        if direction is Direction.UPLINK:
            return role is SlotRole.UPLINK
        # flexible slots count as downlink-capable
        return role in (SlotRole.DOWNLINK, SlotRole.FLEXIBLE)


def tti_duration(cfg: FrameConfig) -> float:
    """TTI length in microseconds (1000 for LTE, one slot for NR)."""
    return cfg.tti_us


@dataclass(frozen=True)
class RetxTimingTable:
    """Per-slot K parameters. Downlink rows hold (K0, K1, Kd), uplink rows (K2, Ku)."""

    name: str
    downlink: Mapping[int, tuple[int, int, int]]
    uplink: Mapping[int, tuple[int, int]]

    def __post_init__(self) -> None:
        for rows in (self.downlink, self.uplink):
            for slot, ks in rows.items():
                if slot < 0 or any((not isinstance(k, int)) or k < 0 for k in ks):
                    raise ConfigError(f"{self.name}: bad timing row for slot {slot}: {ks}")
        object.__setattr__(self, "downlink", MappingProxyType(dict(self.downlink)))
        object.__setattr__(self, "uplink", MappingProxyType(dict(self.uplink)))

    def k_values(self, direction: Direction, slot_index: int) -> tuple[int, ...]:
        rows = self.downlink if direction is Direction.DOWNLINK else self.uplink
        try:
            return rows[slot_index]
        except KeyError:
            raise InvalidSlot(
                f"{self.name}: no {direction.value.lower()} timing for slot {slot_index}"
            ) from None

    def data_slots(self, direction: Direction) -> frozenset[int]:
        rows = self.downlink if direction is Direction.DOWNLINK else self.uplink
        return frozenset(rows)


def _mirror(rows: dict[int, tuple]) -> dict[int, tuple]:
    # the measured tables list slot i and i+10 together
    out = dict(rows)
    out.update({s + 10: ks for s, ks in rows.items()})
    return out


LTE_TABLE = RetxTimingTable(
    name="lte",
    downlink={s: (0, 4, 4) for s in range(10)},
    uplink={s: (4, 4) for s in range(10)},
)

NR_CONFIG1_TABLE = RetxTimingTable(
    name="nr-config1",
    downlink=_mirror({
        0: (0, 4, 6), 1: (0, 8, 6), 2: (0, 7, 6), 3: (0, 6, 6),
        5: (0, 4, 6), 6: (0, 8, 6), 7: (0, 7, 6),
    }),
    uplink=_mirror({4: (4, 6), 9: (3, 7)}),
)

NR_CONFIG2_TABLE = RetxTimingTable(
    name="nr-config2",
    downlink=_mirror({
        0: (0, 8, 5), 1: (0, 7, 5), 2: (0, 7, 5), 3: (0, 6, 5),
        4: (0, 5, 5), 5: (0, 4, 5), 6: (0, 12, 5), 7: (0, 11, 5),
    }),
    uplink=_mirror({8: (3, 7), 9: (3, 6)}),
)

BUILTIN_TABLES: dict[str, RetxTimingTable] = {
    "lte": LTE_TABLE,
    "nr-config1": NR_CONFIG1_TABLE,
    "nr-config2": NR_CONFIG2_TABLE,
}


def table_for(cfg: FrameConfig) -> RetxTimingTable:
    if cfg.rat is Rat.LTE:
        return LTE_TABLE
    if cfg.tdd_profile is TddProfile.CONFIG1:
        return NR_CONFIG1_TABLE
    if cfg.tdd_profile is TddProfile.CONFIG2:
        return NR_CONFIG2_TABLE
    raise ConfigError("no built-in timing table for NR without a TDD profile")


def mac_retx_delay(cfg: FrameConfig, tbl: RetxTimingTable, direction: Direction, slot_index: int) -> int:
    """MAC retransmission delay T_M in TTIs for a first transmission in ``slot_index``.

    Raises InvalidSlot when the slot's role cannot carry data in ``direction``
    or the table has no row for it.
    """
    direction = Direction.parse(direction)
    if not cfg.role_allows(direction, slot_index):
        raise InvalidSlot(f"slot {slot_index} cannot carry {direction.value.lower()} data")
    return sum(tbl.k_values(direction, slot_index))


def parse_timing_table(text: str, name: str = "custom") -> RetxTimingTable:
    """Parse ``slot,k0,k1,kd`` (downlink) and ``slot,k2,ku`` (uplink) lines.

    Blank lines and ``#`` comments are ignored; the row width selects the
    direction.
    """
    dl: dict[int, tuple[int, int, int]] = {}
    ul: dict[int, tuple[int, int]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            fields = [int(f) for f in line.split(",")]
        except ValueError:
            raise ConfigError(f"{name}:{lineno}: non-integer field in {raw!r}") from None
        if len(fields) == 4:
            dl[fields[0]] = (fields[1], fields[2], fields[3])
        elif len(fields) == 3:
            ul[fields[0]] = (fields[1], fields[2])
        else:
            raise ConfigError(f"{name}:{lineno}: expected 3 or 4 fields, got {len(fields)}")
    return RetxTimingTable(name=name, downlink=dl, uplink=ul)


def format_timing_table(tbl: RetxTimingTable) -> str:
    lines = [f"# {tbl.name}", "# downlink: slot_index,k0,k1,kd"]
    lines += [f"{s},{k0},{k1},{kd}" for s, (k0, k1, kd) in sorted(tbl.downlink.items())]
    lines.append("# uplink: slot_index,k2,ku")
    lines += [f"{s},{k2},{ku}" for s, (k2, ku) in sorted(tbl.uplink.items())]
    return "\n".join(lines) + "\n"


def load_timing_table(source: str | Path) -> RetxTimingTable:
    """Load a built-in table by name or a table file by path."""
    key = str(source)
    if key in BUILTIN_TABLES:
        return BUILTIN_TABLES[key]
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"unknown timing table {key!r}")
    return parse_timing_table(path.read_text(), name=path.stem)

"""Versioned CSV formats shared by the simulator, the pipeline and the CLI.

Every file starts with ``# ranscope-csv v1``, may carry further ``# key=value``
metadata lines, then a header row. Times are integer microseconds.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import ConfigError
from .sim.records import BsrLogEntry, Layer, PacketRecord, RetxEvent
from .timing import Direction

VERSION_LINE = "# ranscope-csv v1"

PACKET_FIELDS = ("pkt_id", "direction", "size_bytes", "t_app_send", "t_mac_enqueue",
                 "t_phy_first_tx", "t_delivered")
EVENT_FIELDS = ("id", "layer", "direction", "start_us", "end_us", "duration_us")
BSR_FIELDS = ("t_report_us", "index", "range_low", "range_high", "true_buffer_bytes")
DELAY_FIELDS = ("t_send_us", "delay_us", "pkt_id")
SPECTRUM_FIELDS = ("frequency_hz", "power_db")
CANDIDATE_FIELDS = ("gap_start_us", "burst_us", "est_duration_us", "member_pkt_ids")


def _opt(v: Optional[int]) -> str:
    return "" if v is None else str(v)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if v != float("inf") else "inf"
    return str(v)


def write_table(path: str | Path, fields: Sequence[str], rows: Iterable[Sequence],
                meta: Optional[dict] = None) -> None:
    buf = io.StringIO()
    buf.write(VERSION_LINE + "\n")
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_table(path: str | Path, fields: Sequence[str]) -> tuple[list[dict], dict]:
    """Return (rows, metadata); rows are dicts of raw strings."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != VERSION_LINE:
        raise ConfigError(f"{path}:1: missing '{VERSION_LINE}' header")
    meta: dict[str, str] = {}
    body_start = 1
    while body_start < len(lines) and lines[body_start].startswith("#"):
        key, _, value = lines[body_start][1:].strip().partition("=")
        meta[key.strip()] = value.strip()
        body_start += 1
    reader = csv.DictReader(lines[body_start:])
    missing = [f for f in fields if f not in (reader.fieldnames or [])]
    if missing:
        raise ConfigError(f"{path}:{body_start + 1}: missing columns {missing}")
    rows = []
    for lineno, row in enumerate(reader, body_start + 2):
        if None in row.values() or None in row:
            raise ConfigError(f"{path}:{lineno}: wrong number of fields")
        row["_line"] = lineno
        rows.append(row)
    return rows, meta


def _int(row: dict, key: str, path, optional: bool = False) -> Optional[int]:
    raw = row[key].strip()
    if raw == "" and optional:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{path}:{row['_line']}: {key} must be an integer, got {raw!r}") from None


# ---- packets --------------------------------------------------------------
def write_packets(path: str | Path, packets: Iterable[PacketRecord]) -> None:
    rows = ((p.pkt_id, p.direction.value, p.size_bytes, p.t_app_send, _opt(p.t_mac_enqueue),
             _opt(p.t_phy_first_tx), _opt(p.t_delivered)) for p in packets)
    write_table(path, PACKET_FIELDS, rows)


def read_packets(path: str | Path) -> list[PacketRecord]:
    """Read packets.csv. A pkt_id seen in both directions is a data/ack pair;
    the later-sent row is marked as the ack."""
    rows, _ = read_table(path, PACKET_FIELDS)
    out = []
    for r in rows:
        try:
            direction = Direction.parse(r["direction"])
        except ConfigError:
            raise ConfigError(f"{path}:{r['_line']}: bad direction {r['direction']!r}") from None
        out.append(PacketRecord(
            pkt_id=_int(r, "pkt_id", path), direction=direction,
            size_bytes=_int(r, "size_bytes", path), t_app_send=_int(r, "t_app_send", path),
            t_mac_enqueue=_int(r, "t_mac_enqueue", path, True),
            t_phy_first_tx=_int(r, "t_phy_first_tx", path, True),
            t_delivered=_int(r, "t_delivered", path, True)))
    by_id: dict[int, list[PacketRecord]] = {}
    for p in out:
        by_id.setdefault(p.pkt_id, []).append(p)
    for pair in by_id.values():
        if len(pair) == 2 and pair[0].direction is not pair[1].direction:
            later = max(pair, key=lambda p: p.t_app_send)
            later.is_ack = True
    return out


# ---- events ---------------------------------------------------------------
def write_events(path: str | Path, events: Iterable[RetxEvent]) -> None:
    rows = ((e.id, e.layer.value, e.direction.value, e.start_us, e.end_us, e.duration_us)
            for e in events)
    write_table(path, EVENT_FIELDS, rows)


def read_events(path: str | Path) -> list[RetxEvent]:
    rows, _ = read_table(path, EVENT_FIELDS)
    out = []
    for r in rows:
        try:
            layer = Layer(r["layer"].strip().upper())
            direction = Direction.parse(r["direction"])
        except (ValueError, ConfigError):
            raise ConfigError(f"{path}:{r['_line']}: bad layer/direction") from None
        start, end = _int(r, "start_us", path), _int(r, "end_us", path)
        if end < start:
            raise ConfigError(f"{path}:{r['_line']}: end_us precedes start_us")
        out.append(RetxEvent(_int(r, "id", path), layer, direction, start, end))
    return out


# ---- BSR ------------------------------------------------------------------
def write_bsr(path: str | Path, entries: Iterable[BsrLogEntry]) -> None:
    rows = ((b.t_report_us, b.index, b.range_low, b.range_high, b.true_buffer_bytes)
            for b in entries)
    write_table(path, BSR_FIELDS, rows)


def read_bsr(path: str | Path) -> list[BsrLogEntry]:
    rows, _ = read_table(path, BSR_FIELDS)
    return [BsrLogEntry(_int(r, "t_report_us", path), _int(r, "index", path),
                        float(r["range_low"]), float(r["range_high"]),
                        _int(r, "true_buffer_bytes", path)) for r in rows]


# ---- spectrum -------------------------------------------------------------
def write_spectrum(path: str | Path, freqs, power_db) -> None:
    write_table(path, SPECTRUM_FIELDS, ((float(f), float(p)) for f, p in zip(freqs, power_db)))

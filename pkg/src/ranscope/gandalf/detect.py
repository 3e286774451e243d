"""Packet-side retransmission event detection and clock alignment against reported events."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..csvio import CANDIDATE_FIELDS, read_table, write_table
from ..errors import ConfigError, NoOverlap
from ..sim.records import RetxEvent
from .series import DelaySeries

MATCH_TOL_US = 2000
MIN_MATCH_RATIO = 0.2


@dataclass(frozen=True)
class CandidateEvent:
    gap_start_us: int
    burst_us: int
    est_duration_us: int
    member_pkt_ids: tuple[int, ...]


def detect_candidate_events(series: DelaySeries, expected_tm_us: int | Sequence[int],
                            tol_us: int, tti_us: int = 1000,
                            median_window_us: int = 200_000) -> list[CandidateEvent]:
    """Idle gap of about T_M followed by a near-simultaneous burst.

    A candidate needs an inter-delivery gap of at least 0.8 T_M, two or more
    deliveries within one TTI after it, and a first post-gap packet whose
    delay sits T_M +- tol above the median delay of a window centred on its
    send time. ``expected_tm_us`` may list several T_M values (NR tables).
    """
    tms = np.atleast_1d(np.asarray(expected_tm_us, dtype=float))
    if len(series) < 3:
        return []
    order = np.lexsort((series.pkt_id, series.t_recv))
    recv = series.t_recv[order]
    delay = series.delay[order]
    send = series.t_send[order]
    ids = series.pkt_id[order]
    gaps = np.diff(recv)
    idx = np.nonzero(gaps >= 0.8 * tms.min())[0] + 1
    if not len(idx):
        return []
    burst_end = np.searchsorted(recv, recv[idx] + tti_us, side="right")
    idx = idx[burst_end - idx >= 2]

    # local medians on the send-time axis, pkt_id order
    t_sorted, d_sorted = series.t_send, series.delay
    half = median_window_us // 2
    out = []
    for i in idx.tolist():
        lo = np.searchsorted(t_sorted, send[i] - half, side="left")
        hi = np.searchsorted(t_sorted, send[i] + half, side="right")
        excess = delay[i] - float(np.median(d_sorted[lo:hi]))
        hit = np.abs(excess - tms) <= tol_us
        if not hit.any():
            continue
        tm = tms[np.argmin(np.abs(excess - tms))]
        j = int(np.searchsorted(recv, recv[i] + tti_us, side="right"))
        out.append(CandidateEvent(int(recv[i - 1]), int(recv[i]), int(tm),
                                  tuple(int(x) for x in ids[i:j])))
    return out


@dataclass
class SyncResult:
    shift_us: int
    match_ratio: float
    matched_pairs: list[tuple[CandidateEvent, RetxEvent]] = field(default_factory=list)


def _interval_counts(lo: np.ndarray, hi: np.ndarray, rows: np.ndarray, n_rows: int,
                     n_shift: int) -> np.ndarray:
    """Per-row coverage of the shift grid by inclusive index intervals [lo, hi]."""
    diff = np.zeros((n_rows, n_shift + 1), dtype=np.int32)
    np.add.at(diff, (rows, lo), 1)
    np.add.at(diff, (rows, hi + 1), -1)
    return np.cumsum(diff[:, :-1], axis=1) > 0


def synchronize(candidates: Sequence[CandidateEvent], reported: Sequence[RetxEvent],
                max_shift_us: int = 500_000, granularity_us: int = 1000,
                tol_us: int = MATCH_TOL_US, delivery_offset_us: int = 0) -> SyncResult:
    """Shift s (added to reported times) that best aligns reported event ends with bursts.

    Candidate c matches reported r under s when |c.burst - (r.end + d + s)| <= tol,
    where d = ``delivery_offset_us`` is how long after the reported end the
    burst reaches the receiver (one TTI of decoding for a downlink trace).
    The ratio counts matched reported events among those whose shifted end
    falls inside the span covered by the candidates; shifts that leave fewer
    than half of the reported events in that span are not considered. Among
    equal ratios the smaller mean residual wins, then the smaller |s|, then
    the smaller s.
    """
    if not candidates or not reported:
        raise NoOverlap("synchronization needs candidates and reported events", 0.0)
    g = int(granularity_us)
    n_steps = int(max_shift_us // g)
    shifts = np.arange(-n_steps, n_steps + 1, dtype=np.int64) * g
    S = len(shifts)
    burst = np.sort(np.array([c.burst_us for c in candidates], dtype=np.int64))
    ends = np.array([r.end_us + delivery_offset_us for r in reported], dtype=np.int64)
    R = len(ends)

    # in-window coverage: burst.min - tol <= end + s <= burst.max + tol
    lo_s = burst[0] - tol_us - ends
    hi_s = burst[-1] + tol_us - ends
    lo_i = np.clip(np.ceil((lo_s - shifts[0]) / g).astype(np.int64), 0, S)
    hi_i = np.clip(np.floor((hi_s - shifts[0]) / g).astype(np.int64), -1, S - 1)
    ok = lo_i <= hi_i
    inwin = _interval_counts(lo_i[ok], hi_i[ok], np.nonzero(ok)[0], R, S).sum(axis=0)

    # candidate/reported pairs that can match at some shift in range
    d = burst[None, :] - ends[:, None]
    r_idx, c_idx = np.nonzero(np.abs(d) <= max_shift_us + tol_us)
    dd = d[r_idx, c_idx]
    p_lo = np.clip(np.ceil((dd - tol_us - shifts[0]) / g).astype(np.int64), 0, S)
    p_hi = np.clip(np.floor((dd + tol_us - shifts[0]) / g).astype(np.int64), -1, S - 1)
    keep = p_lo <= p_hi
    r_idx, c_idx, dd, p_lo, p_hi = r_idx[keep], c_idx[keep], dd[keep], p_lo[keep], p_hi[keep]
    covered = _interval_counts(p_lo, p_hi, r_idx, R, S)
    matched = covered.sum(axis=0)

    ratio = np.where(inwin > 0, matched / np.maximum(inwin, 1), 0.0)
    ratio[inwin < 0.5 * R] = 0.0

    # mean residual of best pairs, computed only where the ratio peaks
    best_ratio = float(ratio.max())
    if best_ratio < MIN_MATCH_RATIO:
        raise NoOverlap(f"best match ratio {best_ratio:.3f} below {MIN_MATCH_RATIO}", best_ratio)
    top = np.nonzero(np.isclose(ratio, best_ratio, rtol=0, atol=1e-12))[0]
    best_key = None
    for k in top.tolist():
        s = int(shifts[k])
        resid = np.abs(dd - s)
        sel = resid <= tol_us
        per_r: dict[int, float] = {}
        for r, e in zip(r_idx[sel].tolist(), resid[sel].tolist()):
            per_r[r] = min(e, per_r.get(r, e))
        mean_res = float(np.mean(list(per_r.values()))) if per_r else float(tol_us)
        key = (round(mean_res, 6), abs(s), s)
        if best_key is None or key < best_key:
            best_key, best_k = key, k
    s = int(shifts[best_k])
    by_burst: dict[int, CandidateEvent] = {}
    for c in candidates:
        by_burst.setdefault(c.burst_us, c)
    pairs = []
    for r, ev in enumerate(reported):
        target = ev.end_us + delivery_offset_us + s
        j = int(np.searchsorted(burst, target))
        near = [c for c in (j - 1, j) if 0 <= c < len(burst) and abs(burst[c] - target) <= tol_us]
        if near:
            c = min(near, key=lambda c: abs(burst[c] - target))
            pairs.append((by_burst[int(burst[c])], ev))
    return SyncResult(s, float(ratio[best_k]), pairs)



def write_candidates(path, candidates: Sequence[CandidateEvent], meta: Optional[dict] = None) -> None:
    rows = ((c.gap_start_us, c.burst_us, c.est_duration_us, " ".join(map(str, c.member_pkt_ids)))
            for c in candidates)
    write_table(path, CANDIDATE_FIELDS, rows, meta)


def read_candidates(path) -> list[CandidateEvent]:
    rows, _ = read_table(path, CANDIDATE_FIELDS)
    out = []
    for r in rows:
        try:
            members = tuple(int(x) for x in r["member_pkt_ids"].split())
            out.append(CandidateEvent(int(r["gap_start_us"]), int(r["burst_us"]),
                                      int(r["est_duration_us"]), members))
        except ValueError:
            raise ConfigError(f"{path}:{r['_line']}: non-integer candidate field") from None
    return out

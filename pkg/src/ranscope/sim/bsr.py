"""Buffer status report quantization and the uplink scheduling-buffer delay model."""
from __future__ import annotations

import math
from dataclasses import dataclass

BSR_LEVELS = 64
BSR_MIN_BYTES = 10.0
BSR_MAX_BYTES = 3_000_000.0
BSR_GROWTH = (BSR_MAX_BYTES / BSR_MIN_BYTES) ** (1.0 / (BSR_LEVELS - 1))


@dataclass(frozen=True)
class BsrLevel:
    index: int
    range_low: float
    range_high: float


def bsr_range(index: int) -> tuple[float, float]:
    """Byte range [low, high) represented by a quantization index."""
    if index == 0:
        return 0.0, BSR_MIN_BYTES
    if not 1 <= index < BSR_LEVELS:
        raise ValueError(f"BSR index out of range: {index}")
    low = BSR_MIN_BYTES * BSR_GROWTH ** (index - 1)
    high = BSR_MIN_BYTES * BSR_GROWTH ** index
    if index == 1:
        # sub-10-byte buffers still need a nonzero index
        low = 1.0
    if index == BSR_LEVELS - 1:
        high = math.inf
    return low, high


def quantize_bsr(buffer_bytes: float) -> BsrLevel:
    """Map a buffer occupancy to its exponential BSR level (index 0 only for empty)."""
    if buffer_bytes < 0:
        raise ValueError("buffer_bytes must be non-negative")
    if buffer_bytes == 0:
        return BsrLevel(0, *bsr_range(0))
    if buffer_bytes < BSR_MIN_BYTES:
        k = 1
    else:
        k = int(math.floor(math.log(buffer_bytes / BSR_MIN_BYTES) / math.log(BSR_GROWTH))) + 1
        k = min(max(k, 1), BSR_LEVELS - 1)
        # float log can land one level off right at a boundary
        while k > 1 and buffer_bytes < bsr_range(k)[0]:
            k -= 1
        while k < BSR_LEVELS - 1 and buffer_bytes >= bsr_range(k)[1]:
            k += 1
    low, high = bsr_range(k)
    return BsrLevel(k, low, high)


def uplink_buffer_delay(arrival_us: int, t_bsr_us: int, grant_offset_us: int,
                        bsr_phase_us: int = 0, flushed: bool = False) -> int:
    """Time a packet spends in the UE uplink buffer, T_U = t_b + (t_r + K2).

    ``grant_offset_us`` is t_r + K2, the lag from a BSR to the transmission it
    authorizes; it must satisfy T_bsr <= t_r + K2 <= 2 T_bsr. t_b runs from
    arrival to the next BSR instant; an arrival on a BSR instant is reported
    by it (t_b = 0). A packet flushed by an over-allocated grant sees zero.
    """
    if flushed:
        return 0
    if not t_bsr_us <= grant_offset_us <= 2 * t_bsr_us:
        raise ValueError("grant offset outside [T_bsr, 2 T_bsr]")
    t_b = (bsr_phase_us - arrival_us) % t_bsr_us
    return t_b + grant_offset_us

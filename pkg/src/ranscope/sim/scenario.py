"""Link scenario definition and its INI-style config format.

Every field has a key in one of the sections ``link``, ``mac``, ``rlc``,
``bsr``, ``congestion`` and ``run``::

    [link]
    rat = NR                  # LTE | NR
    tdd_profile = Config1     # NR only: Config1 | Config2
    prop_delay_us = 15000     # one-way core-network propagation
    capacity_pps = none       # bottleneck service rate on the data path
    tb_bytes = 25000          # downlink bytes per MAC PDU

    [mac]
    p_mac_dl = 0.0554
    p_mac_ul = 0.08

    [rlc]
    event_rate_per_s = 0.2    # per direction
    delay_min_us = 60000      # defaults: 60-100 ms LTE, 60-120 ms NR
    delay_max_us = 120000

    [bsr]
    t_bsr_us = 5000
    t_r_policy = fixed        # fixed | jitter
    jitter_frac = 0.4
    overalloc_prob = 0.05

    [congestion]
    kind = none               # none | sine | onoff | step | delay_step | delay_sine
    level_pps = 0             # cross traffic (rate kinds)
    delay_us = 0              # added queuing delay (delay kinds)
    freq_hz = 0.5
    duty = 0.5
    start_s = 0
    stop_s = none

    [run]
    seed = 1
    duration_s = 30
    direction = downlink      # data direction
    app_rate_mbps = 2.0
    pkt_size_bytes = 1400
    interarrival = exponential  # exponential | constant
    acks = true
    ack_size_bytes = 40
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..errors import ConfigError
from ..timing import Direction, FrameConfig, Rat, TddProfile

RLC_DEFAULT_RANGE_US = {Rat.LTE: (60_000, 100_000), Rat.NR: (60_000, 120_000)}

CONGESTION_KINDS = ("none", "sine", "onoff", "step", "delay_step", "delay_sine")


@dataclass(frozen=True)
class CongestionProfile:
    kind: str = "none"
    level_pps: float = 0.0
    delay_us: int = 0
    freq_hz: float = 0.5
    duty: float = 0.5
    start_s: float = 0.0
    stop_s: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in CONGESTION_KINDS:
            raise ConfigError(f"congestion kind must be one of {CONGESTION_KINDS}, got {self.kind!r}")
        if self.kind in ("sine", "onoff", "delay_sine") and not 0 < self.freq_hz <= 1.0:
            raise ConfigError("congestion waveforms are limited to 0 < freq_hz <= 1")
        if self.level_pps < 0 or self.delay_us < 0:
            raise ConfigError("congestion level and delay must be non-negative")
        if not 0 <= self.duty <= 1:
            raise ConfigError("duty must be in [0, 1]")

    def _active(self, t_s: float) -> bool:
        return t_s >= self.start_s and (self.stop_s is None or t_s < self.stop_s)

    def cross_pps(self, t_us: int) -> float:
        """Cross-traffic rate competing for the bottleneck at time t."""
        t = t_us / 1e6
        if not self._active(t):
            return 0.0
        if self.kind == "sine":
            return self.level_pps * 0.5 * (1.0 + math.sin(2 * math.pi * self.freq_hz * (t - self.start_s)))
        if self.kind == "onoff":
            phase = ((t - self.start_s) * self.freq_hz) % 1.0
            return self.level_pps if phase < self.duty else 0.0
        if self.kind == "step":
            return self.level_pps
        return 0.0

    def extra_delay_us(self, t_us: int) -> int:
        """Added queuing delay for a packet leaving the bottleneck at time t."""
        t = t_us / 1e6
        if not self._active(t):
            return 0
        if self.kind == "delay_step":
            return self.delay_us
        if self.kind == "delay_sine":
            return int(round(self.delay_us * 0.5 * (1.0 + math.sin(2 * math.pi * self.freq_hz * (t - self.start_s)))))
        return 0


@dataclass(frozen=True)
class LinkScenario:
    rat: Rat = Rat.LTE
    tdd_profile: Optional[TddProfile] = None
    prop_delay_us: int = 15_000
    capacity_pps: Optional[float] = None
    tb_bytes: int = 25_000
    p_mac_dl: float = 0.0554
    p_mac_ul: float = 0.08
    rlc_event_rate_per_s: float = 0.2
    rlc_delay_range_us: Optional[tuple[int, int]] = None
    t_bsr_us: int = 5_000
    t_r_policy: str = "fixed"
    jitter_frac: float = 0.4
    overalloc_prob: float = 0.05
    congestion: CongestionProfile = field(default_factory=CongestionProfile)
    seed: int = 1
    duration_s: float = 30.0
    direction: Direction = Direction.DOWNLINK
    app_rate_mbps: float = 2.0
    pkt_size_bytes: int = 1400
    interarrival: str = "exponential"
    acks: bool = True
    ack_size_bytes: int = 40

    def __post_init__(self) -> None:
        object.__setattr__(self, "rat", Rat(self.rat))
        if self.tdd_profile is not None:
            object.__setattr__(self, "tdd_profile", TddProfile(self.tdd_profile))
        if self.rat is Rat.NR and self.tdd_profile is None:
            object.__setattr__(self, "tdd_profile", TddProfile.CONFIG1)
        object.__setattr__(self, "direction", Direction.parse(self.direction))
        if self.rlc_delay_range_us is None:
            object.__setattr__(self, "rlc_delay_range_us", RLC_DEFAULT_RANGE_US[self.rat])
        else:
            object.__setattr__(self, "rlc_delay_range_us", tuple(int(v) for v in self.rlc_delay_range_us))
        self.validate()

    def validate(self) -> None:
        for name in ("p_mac_dl", "p_mac_ul", "overalloc_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be a probability, got {v}")
        if self.t_bsr_us < 5000:
            raise ConfigError("t_bsr_us must be at least 5000")
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        lo, hi = self.rlc_delay_range_us
        if not 0 < lo <= hi:
            raise ConfigError("rlc delay range must satisfy 0 < min <= max")
        if self.rlc_event_rate_per_s < 0:
            raise ConfigError("rlc_event_rate_per_s must be non-negative")
        if self.t_r_policy not in ("fixed", "jitter"):
            raise ConfigError("t_r_policy must be 'fixed' or 'jitter'")
        if not 0 <= self.jitter_frac <= 0.5:
            raise ConfigError("jitter_frac must be in [0, 0.5]")
        if self.capacity_pps is not None and self.capacity_pps <= 0:
            raise ConfigError("capacity_pps must be positive or none")
        if self.interarrival not in ("exponential", "constant"):
            raise ConfigError("interarrival must be 'exponential' or 'constant'")
        if self.prop_delay_us < 0 or self.tb_bytes <= 0 or self.pkt_size_bytes <= 0:
            raise ConfigError("prop_delay_us, tb_bytes and pkt_size_bytes must be positive")
        if self.app_rate_mbps < 0:
            raise ConfigError("app_rate_mbps must be non-negative")
        tti = self.frame.tti_us
        if tti != int(tti):
            raise ConfigError("simulation requires an integer-microsecond TTI")
        if self.t_bsr_us % int(tti):
            raise ConfigError("t_bsr_us must be a multiple of the TTI")

    @property
    def frame(self) -> FrameConfig:
        if self.rat is Rat.LTE:
            return FrameConfig.lte()
        return FrameConfig.nr(self.tdd_profile)

    @property
    def tti_us(self) -> int:
        return int(self.frame.tti_us)

    @property
    def duration_us(self) -> int:
        return int(round(self.duration_s * 1e6))

    def replace(self, **changes: Any) -> "LinkScenario":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["rat"] = self.rat.value
        d["tdd_profile"] = self.tdd_profile.value if self.tdd_profile else None
        d["direction"] = self.direction.short
        d["rlc_delay_range_us"] = list(self.rlc_delay_range_us)
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# (section, key, scenario field) for every LinkScenario field
_LAYOUT = {
    "link": ["rat", "tdd_profile", "prop_delay_us", "capacity_pps", "tb_bytes"],
    "mac": ["p_mac_dl", "p_mac_ul"],
    "rlc": ["event_rate_per_s", "delay_min_us", "delay_max_us"],
    "bsr": ["t_bsr_us", "t_r_policy", "jitter_frac", "overalloc_prob"],
    "congestion": ["kind", "level_pps", "delay_us", "freq_hz", "duty", "start_s", "stop_s"],
    "run": ["seed", "duration_s", "direction", "app_rate_mbps", "pkt_size_bytes",
            "interarrival", "acks", "ack_size_bytes"],
}

_INT = {"prop_delay_us", "tb_bytes", "delay_min_us", "delay_max_us", "t_bsr_us", "delay_us",
        "seed", "pkt_size_bytes", "ack_size_bytes"}
_FLOAT = {"capacity_pps", "p_mac_dl", "p_mac_ul", "event_rate_per_s", "jitter_frac",
          "overalloc_prob", "level_pps", "freq_hz", "duty", "start_s", "stop_s",
          "duration_s", "app_rate_mbps"}
_NULLABLE = {"tdd_profile", "capacity_pps", "stop_s", "delay_min_us", "delay_max_us"}


def _convert(key: str, raw: str, where: str) -> Any:
    value = raw.strip()
    if key in _NULLABLE and value.lower() in ("none", ""):
        return None
    try:
        if key in _INT:
            return int(float(value))
        if key in _FLOAT:
            return float(value)
        if key == "acks":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
    except ValueError:
        raise ConfigError(f"{where}: bad value {raw!r} for {key}") from None
    return value


def scenario_from_config(parser: configparser.ConfigParser, source: str = "<config>",
                         base: Optional[LinkScenario] = None) -> LinkScenario:
    """Build a scenario from parsed INI sections, starting from ``base`` defaults."""
    base = base or LinkScenario()
    kwargs: dict[str, Any] = {}
    cong = dataclasses.asdict(base.congestion)
    rlc_lo, rlc_hi = (None, None)
    if parser.has_section("rlc"):
        if parser.has_option("rlc", "delay_min_us") or parser.has_option("rlc", "delay_max_us"):
            rlc_lo, rlc_hi = base.rlc_delay_range_us
    for section, keys in _LAYOUT.items():
        if not parser.has_section(section):
            continue
        unknown = set(parser.options(section)) - set(keys)
        if unknown:
            raise ConfigError(f"{source}: [{section}] unknown keys {sorted(unknown)}")
        for key in keys:
            if not parser.has_option(section, key):
                continue
            value = _convert(key, parser.get(section, key), f"{source}: [{section}] {key}")
            if section == "congestion":
                cong[key] = value
            elif key == "event_rate_per_s":
                kwargs["rlc_event_rate_per_s"] = value
            elif key == "delay_min_us":
                rlc_lo = value
            elif key == "delay_max_us":
                rlc_hi = value
            else:
                kwargs[key] = value
    if rlc_lo is not None or rlc_hi is not None:
        kwargs["rlc_delay_range_us"] = (rlc_lo, rlc_hi)
    try:
        kwargs["congestion"] = CongestionProfile(**cong)
        return dataclasses.replace(base, **kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def read_config(path: str | Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parser


def load_scenario(path: str | Path, base: Optional[LinkScenario] = None) -> LinkScenario:
    return scenario_from_config(read_config(path), str(path), base)


def scenario_to_ini(sc: LinkScenario) -> str:
    values = {
        "rat": sc.rat.value,
        "tdd_profile": sc.tdd_profile.value if sc.tdd_profile else "none",
        "prop_delay_us": sc.prop_delay_us,
        "capacity_pps": "none" if sc.capacity_pps is None else sc.capacity_pps,
        "tb_bytes": sc.tb_bytes,
        "p_mac_dl": sc.p_mac_dl,
        "p_mac_ul": sc.p_mac_ul,
        "event_rate_per_s": sc.rlc_event_rate_per_s,
        "delay_min_us": sc.rlc_delay_range_us[0],
        "delay_max_us": sc.rlc_delay_range_us[1],
        "t_bsr_us": sc.t_bsr_us,
        "t_r_policy": sc.t_r_policy,
        "jitter_frac": sc.jitter_frac,
        "overalloc_prob": sc.overalloc_prob,
        "seed": sc.seed,
        "duration_s": sc.duration_s,
        "direction": sc.direction.short,
        "app_rate_mbps": sc.app_rate_mbps,
        "pkt_size_bytes": sc.pkt_size_bytes,
        "interarrival": sc.interarrival,
        "acks": str(sc.acks).lower(),
        "ack_size_bytes": sc.ack_size_bytes,
    }
    cong = dataclasses.asdict(sc.congestion)
    cong["stop_s"] = "none" if cong["stop_s"] is None else cong["stop_s"]
    lines = []
    for section, keys in _LAYOUT.items():
        lines.append(f"[{section}]")
        src = cong if section == "congestion" else values
        lines += [f"{k} = {src[k]}" for k in keys]
        lines.append("")
    return "\n".join(lines)

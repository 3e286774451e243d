"""Named scenarios.

Each entry records where its numbers come from: ``measured`` values follow the
published field setup (LTE/5G frame timing, MAC error rates, BSR period,
RLC rate), ``chosen`` values are settings of this artifact with no field
counterpart (capacities, traffic, over-allocation in the controller runs).
"""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError
from ..sim.scenario import CongestionProfile, LinkScenario
from ..timing import Rat, TddProfile


@dataclass(frozen=True)
class Builtin:
    scenario: LinkScenario
    controller: str
    about: str


BUILTINS: dict[str, Builtin] = {
    "fig10-lte": Builtin(
        LinkScenario(rat=Rat.LTE),
        "none",
        "LTE static UE, 2 Mbit/s downlink with acks. measured: MAC error rates 5.54%/8.00%, "
        "T_bsr 5 ms, RLC 0.2/s. chosen: 15 ms core propagation, traffic mix."),
    "fig10-5g": Builtin(
        LinkScenario(rat=Rat.NR, tdd_profile=TddProfile.CONFIG1),
        "none",
        "5G SA static UE on TDD config 1, otherwise as fig10-lte."),
    "copa-static": Builtin(
        LinkScenario(rat=Rat.LTE, capacity_pps=700.0, overalloc_prob=0.05),
        "copa",
        "No congestion, downlink flow through a 700 pkt/s bottleneck (7.8 Mbit/s at 1400 B). "
        "chosen: capacity, over-allocation 0.05."),
    "pcc-static": Builtin(
        LinkScenario(rat=Rat.LTE, capacity_pps=1000.0, direction="uplink", overalloc_prob=0.0),
        "pcc",
        "No congestion, uplink flow through a 1000 pkt/s bottleneck. chosen: capacity, "
        "over-allocation disabled (its dips are not a retransmission and survive the filter)."),
    "gcc-jitter": Builtin(
        LinkScenario(rat=Rat.LTE, direction="uplink", duration_s=60.0),
        "gcc",
        "Uplink media-style flow, no bottleneck, 60 s: every delay change is RAN-induced."),
    "spectrum-ul": Builtin(
        LinkScenario(rat=Rat.LTE, direction="uplink", app_rate_mbps=8.0, pkt_size_bytes=200,
                     congestion=CongestionProfile(kind="delay_sine", delay_us=10_000, freq_hz=0.5)),
        "none",
        "Dense uplink traffic (5000 pkt/s) with a 0.5 Hz, 10 ms queuing sinusoid; T_bsr 5 ms."),
}


def builtin(name: str) -> Builtin:
    try:
        return BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; built-ins: {', '.join(BUILTINS)}") from None


def congestion_step(scenario: LinkScenario, start_s: float, left_fraction: float = 0.05) -> LinkScenario:
    """Cross traffic from ``start_s`` on that leaves ``left_fraction`` of the capacity."""
    if scenario.capacity_pps is None:
        raise ConfigError("a congestion step needs a finite capacity")
    level = scenario.capacity_pps * (1.0 - left_fraction)
    return scenario.replace(congestion=CongestionProfile(kind="step", level_pps=level, start_s=start_s))

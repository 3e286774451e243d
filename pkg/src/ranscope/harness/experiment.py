"""Repeated trials of one scenario, optionally with a controller in the loop."""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..cc.runner import WARMUP_US, CcRun, run_closed_loop
from ..csvio import write_events, write_packets, write_spectrum, write_table
from ..errors import ConfigError, InsufficientData
from ..gandalf.filtering import FilterConfig, spectral_peaks, spectrum
from ..gandalf.pipeline import AblationMode, PipelineConfig, pipeline
from ..gandalf.series import DelaySeries, owd_series, read_delays, rtt_series, write_delays
from ..sim.link import run_trace
from ..sim.records import Trace
from ..sim.scenario import LinkScenario
from ..timing import Direction
from .metrics import REPORT_FIELDS, MetricsReport, aggregate

METRICS = ("throughput", "rtt", "utilization", "overuse", "spectrum")


class Controller(str, enum.Enum):
    NONE = "none"
    COPA = "copa"
    PCC = "pcc"
    GCC = "gcc"

    @classmethod
    def parse(cls, value: "str | Controller") -> "Controller":
        try:
            return cls(value if isinstance(value, Controller) else value.strip().lower())
        except ValueError:
            raise ConfigError(f"unknown controller {value!r}; expected none|copa|pcc|gcc") from None


def normalize_signal(signal: str) -> str:
    """``raw``, ``gandalf`` or ``gandalf:<mode>``; a bare mode name is accepted too."""
    s = signal.strip().lower()
    if s == "raw":
        return s
    if s.startswith("gandalf"):
        _, _, mode = s.partition(":")
        return f"gandalf:{AblationMode.parse(mode or 'full').value}"
    return f"gandalf:{AblationMode.parse(s).value}"


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: LinkScenario
    controller: Controller = Controller.NONE
    signal: str = "raw"
    trials: int = 5
    metrics: tuple[str, ...] = METRICS
    name: str = "experiment"

    def __post_init__(self) -> None:
        object.__setattr__(self, "controller", Controller.parse(self.controller))
        object.__setattr__(self, "signal", normalize_signal(self.signal))
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ConfigError(f"unknown metrics {sorted(unknown)}")

    def trial_scenario(self, i: int) -> LinkScenario:
        return self.scenario.replace(seed=self.scenario.seed + i)


@dataclass
class TrialResult:
    seed: int
    report: MetricsReport
    run: Optional[CcRun] = None
    trace: Optional[Trace] = None

    @property
    def event_digest(self) -> str:
        events = self.run.events if self.run is not None else self.trace.events
        h = hashlib.sha256()
        for e in events:
            h.update(f"{e.id},{e.layer.value},{e.direction.value},{e.start_us},{e.end_us}\n".encode())
        return h.hexdigest()


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    trials: list[TrialResult] = field(default_factory=list)

    @property
    def reports(self) -> list[MetricsReport]:
        return [t.report for t in self.trials]

    @property
    def summary(self) -> dict:
        return aggregate(self.reports)


def _mbps(n_pkts: int, pkt_bytes: int, span_us: int) -> float:
    return n_pkts * pkt_bytes * 8 / max(span_us, 1)


def _capacity_mbps(sc: LinkScenario, pkt_bytes: int) -> Optional[float]:
    return None if sc.capacity_pps is None else sc.capacity_pps * pkt_bytes * 8 / 1e6


def _pipeline_cfg(sc: LinkScenario) -> PipelineConfig:
    return PipelineConfig(tti_us=sc.tti_us, ul_shift_us=sc.prop_delay_us)


def processed_rtt(trace: Trace, sc: LinkScenario, signal: str) -> DelaySeries:
    """RTT series of the data flow after the selected signal pipeline (offline)."""
    raw = rtt_series(trace.packets)
    if signal == "raw":
        return raw
    mode = AblationMode.parse(signal.partition(":")[2])
    legs = {d: owd_series(trace.packets, d) for d in (Direction.DOWNLINK, Direction.UPLINK)}
    return pipeline(raw, trace.events, _pipeline_cfg(sc), mode, legs)


def _uplink_peaks(trace: Trace, sc: LinkScenario) -> list:
    series = owd_series(trace.packets, Direction.UPLINK, acks=sc.direction is not Direction.UPLINK)
    # retransmission spikes are broadband; take them out before looking for f_u
    series = pipeline(series, trace.events, _pipeline_cfg(sc), AblationMode.UL_RETX)
    try:
        f, p = spectrum(series, FilterConfig(t_bsr_us=sc.t_bsr_us))
        return spectral_peaks(f, p)[1]
    except InsufficientData:
        return []


def _open_loop_trial(spec: ExperimentSpec, sc: LinkScenario) -> TrialResult:
    trace = run_trace(sc)
    series = processed_rtt(trace, sc, spec.signal)
    data = [p for p in trace.packets if not p.is_ack and p.t_delivered is not None]
    thr = _mbps(len(data), sc.pkt_size_bytes, sc.duration_us)
    peaks = _uplink_peaks(trace, sc) if "spectrum" in spec.metrics else []
    report = MetricsReport.from_samples(series.delay, thr, _capacity_mbps(sc, sc.pkt_size_bytes),
                                        spectrum_peaks=peaks)
    return TrialResult(sc.seed, report, trace=trace)


def _closed_loop_trial(spec: ExperimentSpec, sc: LinkScenario) -> TrialResult:
    run = run_closed_loop(sc, spec.controller.value, spec.signal, mss=sc.pkt_size_bytes)
    warm = min(WARMUP_US, sc.duration_us // 2)
    thr = run.throughput_pps(warm, sc.duration_us) * sc.pkt_size_bytes * 8 / 1e6
    rtts = run.rtts(warm)
    overuse = run.overuse_count if spec.controller is Controller.GCC else None
    report = MetricsReport.from_samples(rtts, thr, _capacity_mbps(sc, sc.pkt_size_bytes),
                                        overuse_count=overuse)
    return TrialResult(sc.seed, report, run=run)


def run_trial(spec: ExperimentSpec, i: int) -> TrialResult:
    sc = spec.trial_scenario(i)
    if spec.controller is Controller.NONE:
        return _open_loop_trial(spec, sc)
    return _closed_loop_trial(spec, sc)


def write_trial(result: TrialResult, spec: ExperimentSpec, out_dir: Path, i: int) -> None:
    prefix = out_dir / f"trial{i}"
    if result.trace is not None:
        sc = spec.trial_scenario(i)
        write_packets(f"{prefix}_packets.csv", result.trace.packets)
        write_events(f"{prefix}_events.csv", result.trace.events)
        write_delays(f"{prefix}_rtt.csv", processed_rtt(result.trace, sc, spec.signal))
    if result.run is not None:
        result.run.write_log(f"{prefix}_cc.csv")
        write_events(f"{prefix}_events.csv", result.run.events)


def write_report(path: "str | Path", result: ExperimentResult) -> None:
    rows = []
    for t in result.trials:
        row = t.report.as_row()
        rows.append([t.seed] + [row[f] for f in REPORT_FIELDS])
    summary = result.summary
    rows.append(["mean"] + [summary.get(f, "") for f in REPORT_FIELDS])
    meta = {"name": result.spec.name, "controller": result.spec.controller.value,
            "signal": result.spec.signal, "scenario": result.spec.scenario.fingerprint()}
    write_table(path, ("seed",) + REPORT_FIELDS, ((_blank(v) for v in r) for r in rows), meta)


def _blank(v):
    return "" if v is None else v


def run_experiment(spec: ExperimentSpec, out_dir: "str | Path | None" = None) -> ExperimentResult:
    """Run ``spec.trials`` trials with seeds base, base+1, ...; write CSVs when ``out_dir`` is set."""
    result = ExperimentResult(spec)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for i in range(spec.trials):
        trial = run_trial(spec, i)
        result.trials.append(trial)
        if out is not None:
            write_trial(trial, spec, out, i)
    if out is not None:
        write_report(out / "report.csv", result)
    return result


ABLATION_MODES = (AblationMode.OFF, AblationMode.DL_RETX, AblationMode.UL_RETX,
                  AblationMode.FILTER, AblationMode.FULL)
ABLATION_FIELDS = ("mode", "throughput_mbps", "utilization", "rtt_p50_us", "variation_range_us",
                   "throughput_vs_full", "event_digest")


@dataclass
class AblationReport:
    results: dict[AblationMode, ExperimentResult]

    def throughput(self, mode: AblationMode) -> float:
        return self.results[mode].summary["throughput_mbps"]

    def rows(self) -> list[tuple]:
        full = self.throughput(AblationMode.FULL)
        out = []
        for mode, res in self.results.items():
            s = res.summary
            digest = hashlib.sha256("".join(t.event_digest for t in res.trials).encode()).hexdigest()[:16]
            out.append((mode.value, s["throughput_mbps"], s.get("utilization", ""), s["rtt_p50_us"],
                        s["variation_range_us"], s["throughput_mbps"] / full if full else "", digest))
        return out


def ablation_suite(base: ExperimentSpec, out_dir: "str | Path | None" = None,
                   modes: Sequence[AblationMode] = ABLATION_MODES) -> AblationReport:
    """Run ``base`` once per signal mode with the same seeds."""
    if base.controller not in (Controller.COPA, Controller.PCC):
        raise ConfigError("the ablation suite runs COPA or PCC")
    results = {}
    for mode in modes:
        spec = ExperimentSpec(base.scenario, base.controller, f"gandalf:{mode.value}", base.trials,
                              base.metrics, f"{base.name}-{mode.value}")
        sub = None if out_dir is None else Path(out_dir) / mode.value
        results[mode] = run_experiment(spec, sub)
    report = AblationReport(results)
    if out_dir is not None:
        write_table(Path(out_dir) / "ablation.csv", ABLATION_FIELDS, report.rows(),
                    {"controller": base.controller.value, "trials": base.trials})
    return report


@dataclass
class SpectrumReport:
    freqs: np.ndarray
    power_db: np.ndarray
    floor_db: float
    peaks: list[tuple[float, float]]


def report_spectrum(delay_files: Sequence["str | Path"], cfg: FilterConfig = FilterConfig(),
                    out_dir: "str | Path | None" = None) -> SpectrumReport:
    """Average the spectra of one or more delay traces and list the peaks above the floor."""
    if not delay_files:
        raise InsufficientData("no delay traces given")
    spectra = []
    for path in delay_files:
        f, p = spectrum(read_delays(path), cfg)
        spectra.append(p)
    n = min(len(p) for p in spectra)
    power = 10 * np.log10(np.mean([10 ** (p[:n] / 10) for p in spectra], axis=0))
    freqs = f[:n]
    floor, peaks = spectral_peaks(freqs, power)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_spectrum(out / "spectrum.csv", freqs, power)
        write_table(out / "peaks.csv", ("frequency_hz", "excess_db"), peaks, {"floor_db": round(floor, 3)})
    return SpectrumReport(freqs, power, floor, peaks)

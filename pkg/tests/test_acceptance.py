"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) and
then asserts, so a failing criterion is a failing test. Run on its own with
``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import bisect
import time

import numpy as np
import pytest

from ranscope.cc.runner import run_closed_loop
from ranscope.errors import NoOverlap
from ranscope.gandalf.compensate import compensate_retx
from ranscope.gandalf.detect import detect_candidate_events, synchronize
from ranscope.gandalf.filtering import FilterConfig, power_at, ran_aware_filter, spectral_peaks, spectrum
from ranscope.gandalf.pipeline import UL_LATE_US, AblationMode, PipelineConfig, pipeline
from ranscope.gandalf.series import owd_series
from ranscope.harness.experiment import ExperimentSpec, ablation_suite, report_spectrum, run_experiment
from ranscope.harness.scenarios import builtin, congestion_step
from ranscope.sim.link import counterfactual_replay, run_trace
from ranscope.sim.records import Layer
from ranscope.sim.scenario import CongestionProfile, LinkScenario
from ranscope.timing import (LTE_TABLE, NR_CONFIG1_TABLE, NR_CONFIG2_TABLE, Direction, FrameConfig, Rat,
                             TddProfile, mac_retx_delay)

pytestmark = [pytest.mark.acceptance]

DL, UL = Direction.DOWNLINK, Direction.UPLINK
RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# ---- 1 ---------------------------------------------------------------------------------
# (slot, K1 or K2, Kd or Ku, T_M) as published, slots listed once per half frame
DL_CONFIG1 = [(0, 4, 6, 10), (1, 8, 6, 14), (2, 7, 6, 13), (3, 6, 6, 12), (5, 4, 6, 10), (6, 8, 6, 14),
              (7, 7, 6, 13)]
DL_CONFIG2 = [(0, 8, 5, 13), (1, 7, 5, 12), (2, 7, 5, 12), (3, 6, 5, 11), (4, 5, 5, 10), (5, 4, 5, 9),
              (6, 12, 5, 17), (7, 11, 5, 16)]
UL_CONFIG1 = [(4, 4, 6, 10), (9, 3, 7, 10)]
UL_CONFIG2 = [(8, 3, 7, 10), (9, 3, 6, 9)]


def test_criterion_01_timing_tables():
    t0 = time.perf_counter()
    bad = []
    cases = [(TddProfile.CONFIG1, NR_CONFIG1_TABLE, DL, DL_CONFIG1),
             (TddProfile.CONFIG2, NR_CONFIG2_TABLE, DL, DL_CONFIG2),
             (TddProfile.CONFIG1, NR_CONFIG1_TABLE, UL, UL_CONFIG1),
             (TddProfile.CONFIG2, NR_CONFIG2_TABLE, UL, UL_CONFIG2)]
    n = 0
    for profile, table, direction, rows in cases:
        cfg = FrameConfig.nr(profile)
        for slot, ka, kb, tm in rows:
            for s in (slot, slot + 10):
                n += 1
                got = mac_retx_delay(cfg, table, direction, s)
                ks = table.k_values(direction, s)
                if got != tm or tuple(ks[-2:]) != (ka, kb):
                    bad.append((profile.value, direction.short, s, got, ks))
    lte = FrameConfig.lte()
    for direction in (DL, UL):
        for s in range(lte.slots_per_frame):
            n += 1
            if mac_retx_delay(lte, LTE_TABLE, direction, s) != 8:
                bad.append(("LTE", direction.short, s))
    elapsed = time.perf_counter() - t0
    record(1, not bad and elapsed < 1.0, f"{n} rows, {len(bad)} mismatches, {elapsed * 1000:.1f} ms")


# ---- 2 ---------------------------------------------------------------------------------

def _ul_buffer_stats(overalloc: float):
    t0 = time.perf_counter()
    sc = LinkScenario(direction="uplink", overalloc_prob=overalloc, duration_s=30.0, seed=1)
    tr = run_trace(sc)
    elapsed = time.perf_counter() - t0
    reports = [b.t_report_us for b in tr.bsr]
    T = sc.t_bsr_us
    pkts = [p for p in tr.by_direction(UL, acks=False) if p.t_phy_first_tx is not None]
    t_u = np.array([p.t_phy_first_tx - p.t_mac_enqueue for p in pkts])
    # an arrival on a report instant missed that report: intervals are (r_k, r_k+1]
    hops = np.array([(bisect.bisect_right(reports, p.t_phy_first_tx) - 1)
                     - (bisect.bisect_left(reports, p.t_mac_enqueue) - 1) for p in pkts])
    return t_u, hops, T, elapsed


def test_criterion_02_uplink_buffer():
    t_u, hops, T, e0 = _ul_buffer_stats(0.0)
    in_band = float(np.mean((t_u >= T) & (t_u <= 3 * T)))
    two = float(np.mean(hops == 2))
    t_u5, _, _, e5 = _ul_buffer_stats(0.05)
    dips = float(np.mean(t_u5 < T))
    ok = in_band == 1.0 and two == 1.0 and dips >= 0.01 and max(e0, e5) < 10.0
    record(2, ok, f"in [T,3T] {in_band:.2%}, i->i+2 {two:.2%}, T_U<T at 0.05: {dips:.2%}, "
                  f"sim {max(e0, e5):.2f} s")


# ---- 3 ---------------------------------------------------------------------------------

def test_criterion_03_variation_range():
    out, ok = [], True
    for name in ("fig10-lte", "fig10-5g"):
        res = run_experiment(ExperimentSpec(builtin(name).scenario, trials=5))
        vr = [r.variation_range_us / 1000 for r in res.reports]
        ok &= all(10 <= v <= 40 for v in vr)
        out.append(f"{name} " + "/".join(f"{v:.1f}" for v in vr) + " ms")
    record(3, ok, "; ".join(out))


# ---- 4 ---------------------------------------------------------------------------------

def _compensation_errors(sc: LinkScenario):
    tr = run_trace(sc)
    truth = {(p.pkt_id, p.is_ack): p.owd_us for p in counterfactual_replay(sc, tr)}
    checked = off = unmatched = n_events = 0
    for d, acks, shift, late in ((DL, False, 0, 0), (UL, True, sc.prop_delay_us, UL_LATE_US)):
        series = owd_series(tr.packets, d, acks=acks)
        evs = [e.shifted(shift) for e in tr.events_for(d)]
        res = compensate_retx(series, evs, sc.tti_us, late_us=late)
        n_events += len(evs)
        unmatched += len(res.unmatched)
        new = res.series.as_dict()
        for pid in res.affected:
            checked += 1
            off += abs(new[pid] - truth[(pid, acks)]) > sc.tti_us
    return checked, off, unmatched, n_events


def test_criterion_04_compensation_exactness():
    t0 = time.perf_counter()
    checked = off = unmatched = n_events = 0
    for rat in (Rat.LTE, Rat.NR):
        for seed in range(1, 11):
            c, o, u, n = _compensation_errors(LinkScenario(rat=rat, seed=seed, duration_s=30.0))
            checked, off, unmatched, n_events = checked + c, off + o, unmatched + u, n_events + n
    elapsed = time.perf_counter() - t0
    rate = unmatched / max(n_events, 1)
    ok = off == 0 and rate < 0.01 and elapsed < 60
    record(4, ok, f"20 traces: {off}/{checked} affected packets off by more than one TTI, "
                  f"unmatched {rate:.2%}, {elapsed:.1f} s")


# ---- 5 ---------------------------------------------------------------------------------

def _sine_amplitude(series, f_hz: float) -> float:
    t = series.t_send / 1e6
    X = np.column_stack([np.sin(2 * np.pi * f_hz * t), np.cos(2 * np.pi * f_hz * t), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(X, series.delay, rcond=None)
    return float(np.hypot(coef[0], coef[1]))


def test_criterion_05_spectrum():
    sc = builtin("spectrum-ul").scenario
    tr = run_trace(sc)
    raw = owd_series(tr.packets, UL, acks=False)
    comp = pipeline(raw, tr.events, PipelineConfig(tti_us=sc.tti_us, ul_shift_us=sc.prop_delay_us),
                    AblationMode.UL_RETX)
    cfg = FilterConfig(t_bsr_us=sc.t_bsr_us)
    f, p = spectrum(comp, cfg)
    floor, _ = spectral_peaks(f, p)
    filtered = ran_aware_filter(comp, cfg)
    f2, p2 = spectrum(filtered, cfg)
    excess = {h: power_at(f, p, h) - floor for h in (200, 400)}
    drop = {h: power_at(f, p, h) - power_at(f2, p2, h) for h in (200, 400)}
    kept = _sine_amplitude(filtered, sc.congestion.freq_hz) / _sine_amplitude(comp, sc.congestion.freq_hz)
    ok = min(excess.values()) >= 10 and min(drop.values()) >= 20 and kept >= 0.9
    record(5, ok, f"peaks 200/400 Hz +{excess[200]:.1f}/+{excess[400]:.1f} dB over floor, "
                  f"filter removes {drop[200]:.1f}/{drop[400]:.1f} dB, 0.5 Hz kept {kept:.1%}")


# ---- 6 ---------------------------------------------------------------------------------

def test_criterion_06_synchronization():
    shifts = (-200_000, -37_000, 0, 37_000, 200_000)
    worst, n_true, ok = 0, [], True
    for seed in (1, 2, 3):
        sc = LinkScenario(seed=seed, duration_s=30.0)
        tr = run_trace(sc)
        cands = detect_candidate_events(owd_series(tr.packets, DL), 8000, 2000, sc.tti_us)
        mac = [e for e in tr.events_for(DL) if e.layer is Layer.MAC]
        n_true.append(len(mac))
        ok &= len(mac) >= 10
        for s in shifts:
            # the log clock runs s behind the receiver: reported = true - s
            reported = [e.shifted(-s) for e in mac]
            got = synchronize(cands, reported, 500_000, delivery_offset_us=sc.tti_us).shift_us
            worst = max(worst, abs(got - s))
    ok &= worst <= 1000
    # reported events 20 s away from every candidate, far beyond the shift range
    far = [e.shifted(-20_000_000) for e in mac if e.end_us < 10_000_000]
    try:
        synchronize(cands, far, max_shift_us=500_000)
        disjoint = False
    except NoOverlap:
        disjoint = True
    record(6, ok and disjoint, f"worst error {worst} us over 3 traces x 5 shifts "
                               f"({min(n_true)}+ true MAC events), disjoint -> NoOverlap: {disjoint}")


# ---- 7 ---------------------------------------------------------------------------------

STEP_AT_S = 20.0


def _rate_at(run, t_us: int) -> float:
    rows = [r for r in run.log if r[0] <= t_us]
    return float(rows[-1][6])


def _step_cuts(name: str, seeds=range(1, 6)) -> dict[str, int]:
    b = builtin(name)
    cuts = {"raw": 0, "gandalf:full": 0}
    t_s = int(STEP_AT_S * 1e6)
    for seed in seeds:
        sc = congestion_step(b.scenario.replace(seed=seed, duration_s=STEP_AT_S + 4), STEP_AT_S)
        for sig in cuts:
            run = run_closed_loop(sc, b.controller, sig)
            cuts[sig] += _rate_at(run, t_s + 2_000_000) < _rate_at(run, t_s)
    return cuts


def test_criterion_07_protocol_improvement():
    lines, ok = [], True
    for name in ("copa-static", "pcc-static"):
        b = builtin(name)
        raw = run_experiment(ExperimentSpec(b.scenario, b.controller, "raw", 5)).summary
        gan = run_experiment(ExperimentSpec(b.scenario, b.controller, "gandalf", 5)).summary
        thr = gan["throughput_mbps"] / raw["throughput_mbps"]
        rtt = gan["rtt_p50_us"] / raw["rtt_p50_us"]
        cuts = _step_cuts(name)
        good = (thr >= 2 and gan["utilization"] >= 0.8 and raw["utilization"] <= 0.4 and rtt <= 1.1
                and all(v == 5 for v in cuts.values()))
        ok &= good
        lines.append(f"{b.controller}: thr x{thr:.2f}, util {gan['utilization']:.3f} vs {raw['utilization']:.3f}, "
                     f"rtt x{rtt:.3f}, step cut raw {cuts['raw']}/5 gandalf {cuts['gandalf:full']}/5")
    record(7, ok, "; ".join(lines))


# ---- 8 ---------------------------------------------------------------------------------

def test_criterion_08_gcc_overuse():
    b = builtin("gcc-jitter")
    raw = run_experiment(ExperimentSpec(b.scenario, "gcc", "raw", 5))
    gan = run_experiment(ExperimentSpec(b.scenario, "gcc", "gandalf", 5))
    per_min = 60e6 / b.scenario.duration_us
    raw_counts = [r.overuse_count * per_min for r in raw.reports]
    gan_counts = [r.overuse_count * per_min for r in gan.reports]
    missed = 0
    t_s = 10_000_000
    for seed in range(1, 6):
        sc = b.scenario.replace(seed=seed, duration_s=20.0,
                                congestion=CongestionProfile(kind="delay_step", delay_us=200_000, start_s=10.0))
        for sig in ("raw", "gandalf:full"):
            run = run_closed_loop(sc, "gcc", sig)
            missed += not any(t_s <= t <= t_s + 2_000_000 for t in run.overuse_times)
    ratio = sum(gan_counts) / max(sum(raw_counts), 1e-9)
    ok = min(raw_counts) >= 5 and ratio <= 0.2 and missed == 0
    record(8, ok, f"raw overuse/60 s {'/'.join(f'{c:.0f}' for c in raw_counts)}, gandalf "
                  f"{'/'.join(f'{c:.0f}' for c in gan_counts)} ({ratio:.0%} of raw), "
                  f"missed step detections {missed}/10")


# ---- 9 ---------------------------------------------------------------------------------

def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def _experiments(out):
    short = LinkScenario(duration_s=6.0, capacity_pps=500.0, seed=4)
    run_experiment(ExperimentSpec(short, signal="gandalf", trials=2), out / "open")
    run_experiment(ExperimentSpec(short, "gcc", "gandalf", 2), out / "gcc")
    ablation_suite(ExperimentSpec(short, "copa", trials=1), out / "ablate")
    ul = builtin("spectrum-ul").scenario.replace(duration_s=6.0)
    run_experiment(ExperimentSpec(ul, trials=1), out / "ul")
    report_spectrum([out / "ul" / "trial0_rtt.csv"], out_dir=out / "spectrum")


def test_criterion_09_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    _experiments(a)
    _experiments(b)
    ta, tb = _tree(a), _tree(b)
    diff = sorted(k for k in ta.keys() | tb.keys() if ta.get(k) != tb.get(k))
    record(9, bool(ta) and not diff, f"{len(ta)} CSV files, {len(diff)} differ")


# ---- 10 --------------------------------------------------------------------------------

def test_criterion_10_property_suites():
    import test_cc
    import test_gandalf
    import test_harness
    import test_sim
    suites = {"in-order delivery": test_sim.test_in_order_delivery,
              "event-delay exactness": test_sim.test_event_delay_exactness,
              "filter linearity": test_gandalf.test_filter_linearity,
              "COPA windowed minimum": test_cc.test_copa_windowed_min_oracle,
              "nearest-rank percentile": test_harness.test_nearest_rank_oracle}
    failed = []
    for name, fn in suites.items():
        if fn.hypothesis.inner_test is None or fn._hypothesis_internal_use_settings.max_examples < 1000:
            failed.append(f"{name} (<1000 cases)")
            continue
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - reported as a failing criterion
            failed.append(f"{name}: {type(exc).__name__}")
    record(10, not failed, f"{len(suites) - len(failed)}/{len(suites)} suites at 1000 cases"
                           + (f"; failed: {', '.join(failed)}" if failed else ""))


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))

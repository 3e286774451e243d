import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ranscope.csvio import read_bsr, read_events, read_packets, write_bsr, write_events, write_packets
from ranscope.errors import ConfigError, ReplayMismatch
from ranscope.sim.bsr import BSR_GROWTH, BSR_LEVELS, bsr_range, quantize_bsr, uplink_buffer_delay
from ranscope.sim.link import counterfactual_replay, index_by_key, run_trace
from ranscope.sim.records import Layer
from ranscope.sim.scenario import CongestionProfile, LinkScenario, load_scenario, scenario_to_ini
from ranscope.timing import Direction, Rat, TddProfile, mac_retx_delay, table_for

DL, UL = Direction.DOWNLINK, Direction.UPLINK
CLEAN = dict(p_mac_dl=0.0, p_mac_ul=0.0, rlc_event_rate_per_s=0.0)


# ---- BSR quantizer -----------------------------------------------------------

def test_quantize_empty():
    lvl = quantize_bsr(0)
    assert (lvl.index, lvl.range_low, lvl.range_high) == (0, 0.0, 10.0)


def test_quantize_ten_bytes():
    assert quantize_bsr(10).index == 1


def test_growth_constant():
    assert BSR_GROWTH == pytest.approx((3e6 / 10) ** (1 / 63))
    assert bsr_range(63)[0] == pytest.approx(3e6 / BSR_GROWTH)


@given(st.floats(0, 1e7, allow_nan=False), st.floats(0, 1e7, allow_nan=False))
def test_quantize_monotone(a, b):
    lo, hi = sorted((a, b))
    assert quantize_bsr(lo).index <= quantize_bsr(hi).index


@given(st.integers(0, 10**7))
def test_quantize_range_contains(b):
    lvl = quantize_bsr(b)
    assert lvl.range_low <= b < lvl.range_high
    assert (lvl.index == 0) == (b == 0)
    assert 0 <= lvl.index < BSR_LEVELS


def test_quantize_negative():
    with pytest.raises(ValueError):
        quantize_bsr(-1)


# ---- uplink scheduling-buffer delay --------------------------------------------

def test_uplink_delay_lower_boundary():
    assert uplink_buffer_delay(0, 5000, 5000) == 5000


def test_uplink_delay_upper_region():
    # arrival just after a report waits almost a full interval for the next one
    assert uplink_buffer_delay(1, 5000, 10_000) == 4999 + 10_000


def test_uplink_delay_flushed():
    assert uplink_buffer_delay(1234, 5000, 7500, flushed=True) == 0


def test_uplink_delay_bad_offset():
    with pytest.raises(ValueError):
        uplink_buffer_delay(0, 5000, 12_000)


@given(st.integers(0, 10**7), st.integers(5000, 10_000))
def test_uplink_delay_band(arrival, offset):
    assert 5000 <= uplink_buffer_delay(arrival, 5000, offset) <= 15_000


# ---- scenario config -------------------------------------------------------------

def test_scenario_validation():
    with pytest.raises(ConfigError):
        LinkScenario(p_mac_dl=1.5)
    with pytest.raises(ConfigError):
        LinkScenario(t_bsr_us=4000)
    with pytest.raises(ConfigError):
        LinkScenario(duration_s=0)
    with pytest.raises(ConfigError):
        CongestionProfile(kind="sine", freq_hz=3.0)


def test_ini_round_trip(tmp_path):
    sc = LinkScenario(rat=Rat.NR, tdd_profile=TddProfile.CONFIG2, capacity_pps=500.0, seed=9,
                      congestion=CongestionProfile(kind="onoff", level_pps=100, freq_hz=0.25))
    p = tmp_path / "s.ini"
    p.write_text(scenario_to_ini(sc))
    assert load_scenario(p) == sc


def test_ini_unknown_key(tmp_path):
    p = tmp_path / "s.ini"
    p.write_text("[link]\nbogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_scenario(p)


# ---- stepping and traces -------------------------------------------------------

def test_error_free_downlink_baseline():
    sc = LinkScenario(duration_s=3.0, seed=2, overalloc_prob=0.0, **CLEAN)
    tr = run_trace(sc)
    assert not tr.events
    for p in tr.by_direction(DL, acks=False):
        assert sc.prop_delay_us + sc.tti_us <= p.owd_us <= sc.prop_delay_us + 2 * sc.tti_us


def test_error_free_uplink_baseline():
    sc = LinkScenario(duration_s=3.0, seed=2, direction="uplink", overalloc_prob=0.0, **CLEAN)
    tr = run_trace(sc)
    T = sc.t_bsr_us
    for p in tr.by_direction(UL, acks=False):
        t_u = p.t_phy_first_tx - p.t_mac_enqueue
        assert T <= t_u <= 3 * T
        assert p.owd_us == t_u + sc.tti_us + sc.prop_delay_us


def test_mac_error_adds_exactly_tm():
    sc = LinkScenario(duration_s=5.0, seed=4, rlc_event_rate_per_s=0.0, p_mac_ul=0.0)
    tr = run_trace(sc)
    cf = index_by_key(counterfactual_replay(sc, tr))
    mac = tr.events_for(DL, Layer.MAC)
    assert mac
    for ev in mac:
        assert ev.duration_us == 8000
        err = [p for p in tr.by_direction(DL, acks=False) if p.t_phy_first_tx == ev.start_us]
        assert err
        for p in err:
            assert p.owd_us - cf[(p.pkt_id, False)].owd_us == 8000


def test_rlc_event_releases_one_burst():
    sc = LinkScenario(duration_s=10.0, seed=5, p_mac_dl=0.0, p_mac_ul=0.0,
                      rlc_event_rate_per_s=0.5, rlc_delay_range_us=(80_000, 80_000))
    tr = run_trace(sc)
    rlc = tr.events_for(DL, Layer.RLC)
    assert rlc
    for ev in rlc:
        assert ev.duration_us == 80_000
        held = [p for p in tr.by_direction(DL, acks=False) if ev.start_us <= p.t_phy_first_tx < ev.end_us]
        assert len(held) >= 2
        assert {p.t_delivered for p in held} == {ev.end_us + sc.tti_us}


def test_run_trace_deterministic(tmp_path):
    sc = LinkScenario(duration_s=5.0, seed=11, direction="uplink")
    a, b = run_trace(sc), run_trace(sc)
    for tr, name in ((a, "a"), (b, "b")):
        write_packets(tmp_path / f"{name}_p.csv", tr.packets)
        write_events(tmp_path / f"{name}_e.csv", tr.events)
        write_bsr(tmp_path / f"{name}_b.csv", tr.bsr)
    for kind in ("p", "e", "b"):
        assert (tmp_path / f"a_{kind}.csv").read_bytes() == (tmp_path / f"b_{kind}.csv").read_bytes()


def test_csv_round_trip(tmp_path, ul_trace):
    _, tr = ul_trace
    write_packets(tmp_path / "p.csv", tr.packets)
    write_events(tmp_path / "e.csv", tr.events)
    write_bsr(tmp_path / "b.csv", tr.bsr)
    assert [(p.pkt_id, p.direction, p.t_delivered) for p in read_packets(tmp_path / "p.csv")] == \
        [(p.pkt_id, p.direction, p.t_delivered) for p in tr.packets]
    assert read_events(tmp_path / "e.csv") == tr.events
    assert read_bsr(tmp_path / "b.csv") == tr.bsr


def test_csv_header_line(tmp_path, lte_trace):
    _, tr = lte_trace
    write_events(tmp_path / "e.csv", tr.events)
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "# ranscope-csv v1"
    (tmp_path / "bad.csv").write_text("id,layer\n")
    with pytest.raises(ConfigError):
        read_events(tmp_path / "bad.csv")


def test_empirical_mper():
    sc = LinkScenario(duration_s=60.0, seed=3, app_rate_mbps=4.0)
    tr = run_trace(sc)
    assert tr.stats.mac_pdus[DL] >= 10_000
    assert abs(tr.stats.mper(DL) - 0.0554) <= 0.005


def test_bsr_log_invariants(ul_trace):
    _, tr = ul_trace
    assert tr.bsr
    for e in tr.bsr:
        assert e.range_low <= e.true_buffer_bytes < e.range_high
        assert (e.index == 0) == (e.true_buffer_bytes == 0)


def test_overallocation_flushes(ul_trace):
    sc, tr = ul_trace
    t_u = [p.t_phy_first_tx - p.t_mac_enqueue for p in tr.by_direction(UL, acks=False)]
    assert min(t_u) < sc.t_bsr_us
    assert max(t_u) <= 3 * sc.t_bsr_us
    assert any(e.index == 0 for e in tr.bsr[100:])


def test_conservation(lte_trace):
    sc, tr = lte_trace
    data = [p for p in tr.packets if not p.is_ack]
    acks = [p for p in tr.packets if p.is_ack]
    assert all(p.t_delivered is not None for p in tr.packets)
    assert len({p.pkt_id for p in data}) == len(data) == len(acks)


def test_idle_period(lte_trace):
    sc, tr = lte_trace
    by_dir = {d: sorted(p.t_delivered for p in tr.packets if p.direction is d and
                        (d is DL or not p.is_ack)) for d in (DL,)}
    for ev in tr.events_for(DL):
        queued = [p for p in tr.by_direction(DL) if ev.start_us <= p.t_phy_first_tx < ev.end_us]
        assert all(not ev.start_us < p.t_delivered < ev.end_us for p in queued)


# ---- counterfactual replay -------------------------------------------------------

def test_replay_without_events_is_identity():
    sc = LinkScenario(duration_s=3.0, seed=8, **CLEAN)
    tr = run_trace(sc)
    assert not tr.events
    cf = counterfactual_replay(sc, tr)
    assert [(p.pkt_id, p.is_ack, p.t_delivered) for p in cf] == \
        [(p.pkt_id, p.is_ack, p.t_delivered) for p in tr.packets]


def test_replay_burst_members_earlier(lte_trace):
    sc, tr = lte_trace
    cf = index_by_key(counterfactual_replay(sc, tr))
    for ev in tr.events_for(DL):
        for p in tr.by_direction(DL, acks=False):
            if p.t_delivered == ev.end_us + sc.tti_us and p.t_phy_first_tx < ev.end_us:
                assert cf[(p.pkt_id, False)].t_delivered < p.t_delivered


def test_replay_mismatch(lte_trace):
    sc, tr = lte_trace
    with pytest.raises(ReplayMismatch):
        counterfactual_replay(sc.replace(seed=99), tr)


# ---- properties --------------------------------------------------------------------

scenarios = st.builds(
    LinkScenario,
    rat=st.sampled_from([Rat.LTE, Rat.NR]),
    tdd_profile=st.sampled_from([None, TddProfile.CONFIG1, TddProfile.CONFIG2]),
    p_mac_dl=st.floats(0, 0.3), p_mac_ul=st.floats(0, 0.3),
    rlc_event_rate_per_s=st.floats(0, 3),
    overalloc_prob=st.floats(0, 0.2),
    t_r_policy=st.sampled_from(["fixed", "jitter"]),
    seed=st.integers(0, 2**31),
    duration_s=st.floats(0.3, 1.5),
    direction=st.sampled_from(["downlink", "uplink"]),
    app_rate_mbps=st.floats(0.5, 6),
    capacity_pps=st.one_of(st.none(), st.floats(100, 1000)),
).filter(lambda sc: sc.rat is Rat.NR or sc.tdd_profile is None)


@settings(max_examples=1000)
@given(scenarios)
def test_in_order_delivery(sc):
    tr = run_trace(sc)
    for d in (DL, UL):
        for acks in (False, True):
            pkts = [p for p in tr.by_direction(d, acks) if p.t_phy_first_tx is not None]
            pkts.sort(key=lambda p: (p.t_delivered, p.pkt_id))
            ids = [p.pkt_id for p in pkts]
            assert ids == sorted(ids)
    for p in tr.packets:
        assert p.t_app_send <= p.t_mac_enqueue <= p.t_phy_first_tx <= p.t_delivered
        assert p.owd_us >= sc.prop_delay_us


@settings(max_examples=1000)
@given(scenarios)
def test_event_delay_exactness(sc):
    tr = run_trace(sc)
    frame, table = sc.frame, table_for(sc.frame)
    lo, hi = sc.rlc_delay_range_us
    last_end = {}
    for ev in tr.events:
        if ev.layer is Layer.MAC:
            slot = (ev.start_us // sc.tti_us) % frame.slots_per_frame
            assert ev.duration_us == mac_retx_delay(frame, table, ev.direction, slot) * sc.tti_us
        else:
            assert lo <= ev.duration_us <= hi
        key = ev.direction
        assert ev.start_us > last_end.get(key, -1)
        last_end[key] = ev.end_us

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ranscope.cc.copa import RTT_MIN_WINDOW_US, Copa, CopaState, WindowedMin, copa_on_ack, target_rate
from ranscope.cc.gcc import BETA, BwState, Gcc, GccState, PacketGroup, gcc_update
from ranscope.cc.pcc import (MiResult, Pcc, PccState, UtilityParams, mbps_to_pps, pcc_decide, rtt_gradient,
                             utility)
from ranscope.cc.runner import run_closed_loop, utilization
from ranscope.cc.signal import GandalfSignal, RawSignal, attach_signal, make_signal
from ranscope.errors import ConfigError, IncompleteTrials
from ranscope.sim.scenario import LinkScenario

# ---- COPA ------------------------------------------------------------------------------


def test_copa_no_standing_queue():
    s = CopaState()
    for i in range(5):
        copa_on_ack(s, 40_000, i * 1000)
    assert s.d_q_us == 0
    assert math.isinf(s.target_rate_pps)
    assert s.slow_start


def test_copa_target_rate_values():
    assert target_rate(10_000, 1.0) == 100.0
    assert target_rate(10_000, 0.5) == 200.0


@given(st.floats(1, 1e6), st.sampled_from([0.5, 1.0, 0.25]))
def test_copa_inverse_proportional(dq, delta):
    assert target_rate(2 * dq, delta) == target_rate(dq, delta) / 2


def test_copa_rejects_nonpositive():
    with pytest.raises(ValueError):
        copa_on_ack(CopaState(), 0.0, 0)


def test_windowed_min_expiry():
    w = WindowedMin(10_000)
    w.push(0, 5.0)
    w.push(5000, 7.0)
    assert w.min_over(5000, 10_000) == 5.0
    w.push(10_001, 9.0)
    assert w.min_over(10_001, 10_000) == 7.0
    assert w.min_over(10_001, 1) == 9.0


streams = st.lists(st.tuples(st.integers(0, 3_000_000), st.floats(1000, 500_000)), min_size=1, max_size=300)


@settings(max_examples=1000)
@given(streams)
def test_copa_windowed_min_oracle(samples):
    s = CopaState()
    t = 0
    srtt = None
    seen = []
    for dt, rtt in samples:
        t += dt
        copa_on_ack(s, rtt, t)
        srtt = rtt if srtt is None else 0.875 * srtt + 0.125 * rtt
        seen.append((t, rtt))
        rtt_min = min(v for ts, v in seen if ts >= t - RTT_MIN_WINDOW_US)
        standing = min(v for ts, v in seen if ts >= t - srtt)
        assert s.rtt_min_us == rtt_min
        assert s.rtt_standing_us == standing
        assert s.d_q_us == standing - rtt_min
        assert s.d_q_us >= 0 and s.cwnd_pkts >= 1


# ---- PCC -------------------------------------------------------------------------------

def _round(up_grad=0.0, down_grad=0.0, up_loss=0.0, down_loss=0.0, base=1000.0, eps=0.05):
    up, dn = base * (1 + eps), base * (1 - eps)
    return [MiResult(up, up, up_loss, up_grad, True), MiResult(dn, dn, down_loss, down_grad, False),
            MiResult(up, up, up_loss, up_grad, True), MiResult(dn, dn, down_loss, down_grad, False)]


def test_pcc_clean_round_increases():
    st_ = PccState(base_rate_pps=1000.0)
    assert pcc_decide(st_, _round()) > 1000.0


def test_pcc_gradient_on_up_decreases():
    st_ = PccState(base_rate_pps=1000.0)
    assert pcc_decide(st_, _round(up_grad=0.05)) < 1000.0


def test_pcc_incomplete():
    with pytest.raises(IncompleteTrials):
        pcc_decide(PccState(base_rate_pps=100.0), _round()[:3])
    with pytest.raises(IncompleteTrials):
        pcc_decide(PccState(base_rate_pps=100.0), [m for m in _round() if m.is_up] * 2)


def test_pcc_rate_floor():
    st_ = PccState(base_rate_pps=mbps_to_pps(0.051), epsilon=0.5)
    pcc_decide(st_, _round(up_grad=1.0, base=st_.base_rate_pps, eps=0.5))
    assert st_.base_rate_pps == pytest.approx(mbps_to_pps(0.05))


def test_pcc_step_grows_with_agreement():
    st_ = PccState(base_rate_pps=1000.0)
    pcc_decide(st_, _round())
    first = st_.base_rate_pps - 1000.0
    before = st_.base_rate_pps
    pcc_decide(st_, _round(base=before))
    assert st_.base_rate_pps - before == pytest.approx(2 * 0.05 * before)
    assert first == pytest.approx(50.0)


def test_utility_values():
    # 10 Mbit/s, no gradient or loss
    assert utility(mbps_to_pps(10), 0.0, 0.0) == pytest.approx(10 ** 0.9)
    assert utility(mbps_to_pps(10), 0.01, 0.1) == pytest.approx(10 ** 0.9 - 900 * 10 * 0.01 - 11.35 * 10 * 0.1)
    assert utility(mbps_to_pps(10), -0.5, 0.0) == pytest.approx(10 ** 0.9)
    assert utility(mbps_to_pps(10), 0.005, 0.0, UtilityParams(gradient_deadband=0.01)) == \
        pytest.approx(10 ** 0.9)


def test_rtt_gradient():
    assert rtt_gradient([0, 1_000_000], [40_000, 90_000]) == pytest.approx(0.05)
    assert rtt_gradient([5], [1.0]) == 0.0


mi_stats = st.tuples(st.floats(0, 0.2), st.floats(0, 0.5))


@settings(max_examples=1000)
@given(st.floats(50, 5000), st.lists(mi_stats, min_size=4, max_size=4))
def test_pcc_symmetry(base, stats):
    e = 0.05
    up, dn = base * (1 + e), base * (1 - e)
    rates = [up, dn, up, dn]
    flags = [True, False, True, False]
    trials = [MiResult(r, r, loss, g, f) for r, (g, loss), f in zip(rates, stats, flags)]
    a, b = PccState(base_rate_pps=base), PccState(base_rate_pps=base)
    ra, rb = pcc_decide(a, trials), pcc_decide(b, trials)
    assert ra == rb
    swapped = [MiResult(m.rate_pps, m.throughput_pps, m.loss, m.rtt_gradient, not m.is_up) for m in trials]
    c = PccState(base_rate_pps=base)
    rc = pcc_decide(c, swapped)
    assert np.sign(rc - base) == -np.sign(ra - base)


def test_pcc_mi_length_respects_srtt():
    p = Pcc(min_mi_us=10_000, min_mi_packets=0)
    p.srtt = 80_000
    assert p._mi_length(1000.0) >= 80_000


def test_pcc_probes_around_base():
    p = Pcc(init_rate_pps=200.0, seed=3)
    p.phase = p.phase.PROBING
    p._next_plan()
    rates = sorted(r for r, _ in p._plan)
    assert rates == pytest.approx([190.0, 190.0, 210.0, 210.0])


# ---- GCC -------------------------------------------------------------------------------

def _groups(delays_us, span=5000, t0=0):
    return [PacketGroup(t0 + i * span, t0 + i * span + 4000, t0 + i * span + 4000 + d, 1400 * 4)
            for i, d in enumerate(delays_us)]


def test_gcc_flat_delay_stays_normal():
    s = GccState()
    rates = []
    for g in _groups([30_000] * 400):
        gcc_update(s, [g], incoming_bps=1e6)
        rates.append(s.a_r_bps)
        assert s.state is BwState.NORMAL and s.d_t == 0
    assert all(b >= a for a, b in zip(rates, rates[1:]))


def test_gcc_rising_delay_overuses():
    s = GccState(a_r_bps=2e6)
    delays = [30_000] * 40 + [30_000 + 2000 * i for i in range(100)]
    seen = False
    for g in _groups(delays):
        before = s.a_r_bps
        prev = s.state
        gcc_update(s, [g], incoming_bps=1.5e6)
        if s.state is BwState.OVERUSE and prev is not BwState.OVERUSE:
            seen = True
            assert s.a_r_bps == pytest.approx(min(before, BETA * 1.5e6))
    assert seen and s.overuse_count >= 1


@settings(max_examples=300)
@given(st.lists(st.floats(-3000, 3000), min_size=30, max_size=400), st.integers(20_000, 60_000))
def test_gcc_overuse_needs_threshold(steps, base):
    s = GccState()
    delays = np.clip(base + np.cumsum(steps), 1000, None)
    gcc_update(s, _groups(delays.tolist()), incoming_bps=1e6)
    for t, d_m, d_t, gamma, state, rate in s.trace:
        if state == "Overuse":
            assert d_t > gamma
        assert 6000 <= gamma <= 600_000


# ---- signal sources and closed loop --------------------------------------------------

def test_make_signal():
    assert isinstance(make_signal("raw"), RawSignal)
    sig = make_signal("gandalf:ul-retx")
    assert isinstance(sig, GandalfSignal) and sig.name == "gandalf:ul-retx"
    with pytest.raises(ConfigError):
        make_signal("gandalf:nope")


def test_attach_does_not_modify_controller():
    cc = Copa()
    agent = attach_signal(cc, RawSignal())
    assert agent.cc is cc and not hasattr(cc, "source")
    agent.on_sample(0, 40_000.0, 1, 40_000)
    assert cc.state.srtt_us == 40_000


SHORT = LinkScenario(capacity_pps=500.0, duration_s=6.0, seed=2)


@pytest.mark.parametrize("kind", ["copa", "pcc", "gcc"])
def test_raw_equals_gandalf_off(kind):
    a = run_closed_loop(SHORT, kind, "raw")
    b = run_closed_loop(SHORT, kind, "gandalf:off")
    assert a.log == b.log and a.sent == b.sent


def test_controller_sees_only_processed_stream():
    run = run_closed_loop(SHORT, "copa", "gandalf:full")
    replay = Copa()
    for t, pid, raw, processed, metric, state, rate in run.log:
        replay.on_ack(processed, t, pid)
        assert replay.state.d_q_us == pytest.approx(metric, abs=1e-2)


def test_closed_loop_deterministic(tmp_path):
    for name in ("a", "b"):
        run_closed_loop(SHORT, "pcc", "gandalf:full").write_log(tmp_path / f"{name}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_utilization_needs_capacity():
    run = run_closed_loop(SHORT, "copa", "raw")
    assert 0 < utilization(run, 500.0) <= 1.05
    with pytest.raises(ConfigError):
        utilization(run, float("inf"))

from types import SimpleNamespace

import pytest

from ccsim.bbr1 import (
    FULL_BW_COUNT,
    FULL_BW_THRESH,
    PROBE_BW,
    PROBE_BW_GAINS,
    PROBE_RTT,
    PROBE_RTT_DURATION,
    Bbr1,
    full_pipe_check,
)
from ccsim.core import MSS, ms


def stalled_rounds_oracle(trace):
    """Index of the round on which Startup would exit, by direct counting."""
    best, stalled = 0.0, 0
    for i, bw in enumerate(trace):
        if bw >= 1.25 * best:
            best, stalled = bw, 0
        else:
            stalled += 1
            if stalled == 3:
                return i
    return None


def test_startup_exit_trace():
    trace = [10, 19, 36, 37.5, 37.9, 38.0]
    full_bw, count, filled = 0.0, 0, False
    exits = []
    for i, bw in enumerate(trace):
        full_bw, count, filled = full_pipe_check(full_bw, count, bw)
        if filled:
            exits.append(i)
    assert exits[0] == stalled_rounds_oracle(trace) == 5
    assert full_bw == 36
    assert (FULL_BW_THRESH, FULL_BW_COUNT) == (1.25, 3)


def test_probe_bw_gain_sequence_over_eight_rtprops():
    cc = Bbr1(randomize_cycle_start=False)
    cc.rtprop = ms(40)
    cc._enter_probe_bw(SimpleNamespace(now=0), None)
    assert cc.state == PROBE_BW
    gains = [cc.pacing_gain]
    for k in range(1, 8):
        cc._update_cycle(SimpleNamespace(now=k * ms(40)), None)
        gains.append(cc.pacing_gain)
    assert gains == [1.25, 0.75, 1, 1, 1, 1, 1, 1]
    assert list(PROBE_BW_GAINS) == gains


def test_randomized_cycle_start_never_begins_draining():
    import random

    for seed in range(30):
        cc = Bbr1(rng=random.Random(seed))
        cc._enter_probe_bw(SimpleNamespace(now=0), None)
        assert cc.pacing_gain != 0.75


def test_probe_rtt_dwell():
    cc = Bbr1()
    cc.rtprop = ms(40)
    cc.filled_pipe = True
    cc.btlbw_filter.update(5e6, 0)
    flow = SimpleNamespace(inflight=0, sampler=SimpleNamespace(delivered=0))
    cc._enter_probe_rtt(SimpleNamespace(now=0), flow)
    assert cc.state == PROBE_RTT
    ack = lambda t: SimpleNamespace(now=t, rate_sample=SimpleNamespace(prior_delivered=0))
    cc._handle_probe_rtt(ack(0), flow)
    assert PROBE_RTT_DURATION == max(ms(40), ms(200))
    cc._handle_probe_rtt(ack(ms(199)), flow)
    assert cc.state == PROBE_RTT
    cc._handle_probe_rtt(ack(ms(200)), flow)
    assert cc.state == PROBE_BW


def test_bdp_needs_a_model():
    cc = Bbr1()
    assert cc.bdp() is None
    cc.rtprop = ms(40)
    cc.btlbw_filter.update(5e6, 0)
    assert cc.bdp() == pytest.approx(5e6 * 0.04)
    assert cc.cwnd >= 4 * MSS

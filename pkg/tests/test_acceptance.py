"""Quantitative acceptance criteria 1-9.

Each test records one ``criterion N: PASS|FAIL ...`` line (printed in the
terminal summary) and then asserts the criterion at its stated tolerance.
"""

import functools
import random
import statistics
import time

import pytest

from ccsim.bbr2 import PROBE_CRUISE
from ccsim.bbr2plus import ETA1, LAMBDA1, MODE_PLUS, MU, TRY_GAIN, compensated_bdp, dual_mode_step
from ccsim.core import NS_PER_S, WindowedFilter, from_mbps, ms, seconds
from ccsim.experiments import jain_index, run_suite, tput_gain
from ccsim.netsim import ConstantRate, FlowConfig, SimConfig, StepSchedule, simulate

from conftest import ACCEPTANCE_LINES

LINK_MBPS = 40.0
RTT_MS = 40.0
BDP_40 = from_mbps(LINK_MBPS) * RTT_MS / 1000  # bytes


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


@functools.lru_cache(maxsize=None)
def single(cca, rate_mbps, rtt_ms, buffer_bytes, duration_s=30.0, loss=0.0, jitter_ms=0.0, seed=1, params=()):
    cfg = SimConfig(
        seconds(duration_s),
        ConstantRate(from_mbps(rate_mbps)),
        int(buffer_bytes),
        [FlowConfig(cca, ms(rtt_ms), params=dict(params))],
        loss_prob=loss,
        jitter_mean=ms(jitter_ms),
        seed=seed,
    )
    return simulate(cfg).flows[0]


@functools.lru_cache(maxsize=None)
def versus_cubic(cca, params, buffer_bdp, duration_s=180.0, seed=1):
    cfg = SimConfig(
        seconds(duration_s),
        ConstantRate(from_mbps(LINK_MBPS)),
        int(buffer_bdp * BDP_40),
        [FlowConfig(cca, ms(RTT_MS), params=dict(params)), FlowConfig("cubic", ms(RTT_MS))],
        seed=seed,
    )
    return simulate(cfg).flows


SHALLOW_CELLS = ((100, 40), (150, 50))


@pytest.mark.slow
def test_criterion_1_shallow_buffer_throughput_gap():
    parts, ok = [], True
    for rate, rtt in SHALLOW_CELLS:
        assert from_mbps(rate) * rtt / 1000 > 400_000
        t0 = time.perf_counter()
        t_bbr = single("bbr", rate, rtt, 100_000).mean_throughput_mbps
        t_v2 = single("bbr2", rate, rtt, 100_000).mean_throughput_mbps
        elapsed = time.perf_counter() - t0
        gain = tput_gain(t_bbr, t_v2)
        cell_ok = 0.08 <= gain <= 0.22 and elapsed < 120
        ok &= cell_ok
        parts.append(f"{rate}Mbps/{rtt}ms gain={gain:.3f} ({t_bbr:.1f} vs {t_v2:.1f}, {elapsed:.0f}s)")
    record(1, ok, "Tput_Gain(BBR,BBRv2) in [0.08,0.22]: " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_2_retransmission_reduction():
    parts, ok = [], True
    for rate, rtt in SHALLOW_CELLS:
        r = {c: single(c, rate, rtt, 100_000).retransmission_rate for c in ("bbr", "bbr2", "bbr2plus")}
        cell_ok = r["bbr2"] < 0.5 * r["bbr"] and r["bbr2plus"] < 0.5 * r["bbr"]
        ok &= cell_ok
        parts.append(f"{rate}/{rtt}: bbr={r['bbr']:.4f} bbr2={r['bbr2']:.4f} bbr2plus={r['bbr2plus']:.4f}")
    record(2, ok, "retx < 0.5x BBR: " + "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_3_loss_resilience():
    buf = 32 * BDP_40

    def tput(cca, **params):
        return single(cca, LINK_MBPS, RTT_MS, buf, loss=0.1, params=tuple(sorted(params.items()))).mean_throughput_mbps

    v2 = tput("bbr2", alpha=0.02, beta=0.3)
    v2_a20 = tput("bbr2", alpha=0.2, beta=0.3)
    v2_a20_b0 = tput("bbr2", alpha=0.2, beta=0.0)
    plus = tput("bbr2plus")
    bbr = tput("bbr")
    checks = {
        "bbr2(2%)<15%": v2 < 0.15 * LINK_MBPS,
        "bbr2(20%)>=35%": v2_a20 >= 0.35 * LINK_MBPS,
        "bbr2plus>=35%": plus >= 0.35 * LINK_MBPS,
        "bbr2(20%,0)~bbr": abs(v2_a20_b0 - bbr) <= 0.2 * bbr,
    }
    ok = all(checks.values())
    record(
        3,
        ok,
        f"10% loss: bbr2(2%)={v2:.1f} bbr2(20%)={v2_a20:.1f} bbr2(20%,0)={v2_a20_b0:.1f} "
        f"bbr={bbr:.1f} bbr2plus={plus:.1f} Mbps; failed={[k for k, v in checks.items() if not v]}",
    )
    assert ok


STEP_BUFFER = 1_500_000
STEP_RTT = ms(RTT_MS)


def step_run(cca, before, after, step_s, duration_s, seed=1):
    cfg = SimConfig(
        seconds(duration_s),
        StepSchedule([(0, from_mbps(before)), (int(step_s * NS_PER_S), from_mbps(after))]),
        STEP_BUFFER,
        [FlowConfig(cca, STEP_RTT)],
        seed=seed,
        sample_interval=ms(10),
    )
    return simulate(cfg).flows[0].rows


def lag_text(lag):
    return "not within the run" if lag == float("inf") else f"after {lag:.2f}s"


def first_row(rows, after_s, pred):
    return next((r for r in rows if r["time_s"] >= after_s and pred(r)), None)


@pytest.mark.slow
def test_criterion_4_responsiveness_to_decrease():
    step = 20.0
    limit = 1.1 * 35.0
    plus = step_run("bbr2plus", 40, 35, step, step + 6)
    v2 = step_run("bbr2", 40, 35, step, step + 6)
    at_step = first_row(plus, step, lambda r: True)
    ten_rtt = 10 * at_step["srtt_ms"] / 1000
    p = first_row(plus, step, lambda r: r["btlbw_est_mbps"] < limit)
    v = first_row(v2, step, lambda r: r["btlbw_est_mbps"] < limit)
    plus_lag = p["time_s"] - step if p else float("inf")
    v2_lag = v["time_s"] - step if v else float("inf")
    ok = plus_lag <= ten_rtt and v2_lag > 1.5
    record(
        4,
        ok,
        f"40->35 Mbps: bbr2plus below {limit:.1f} {lag_text(plus_lag)} (10 RTT={ten_rtt:.2f}s), "
        f"bbr2 {lag_text(v2_lag)} (need >1.5s)",
    )
    assert ok


def rounds_between(rows, t0, t1):
    start = first_row(rows, t0, lambda r: True)["round_count"]
    end = first_row(rows, t1, lambda r: True)["round_count"]
    return end - start


@pytest.mark.slow
def test_criterion_5_responsiveness_to_increase():
    # BBRv2 only notices more bandwidth when it next probes, so the step is
    # placed just after it settles into a cruise; identical seeds make the
    # pre-step trajectory of the real run match this pilot run.
    pilot = step_run("bbr2", 40, 40, 1000.0, 25.0)
    entries = [
        b["time_s"]
        for a, b in zip(pilot, pilot[1:])
        if b["time_s"] >= 15.0 and a["state"] != PROBE_CRUISE and b["state"] == PROBE_CRUISE
    ]
    step = round(entries[0] + 0.05, 2)
    target = 0.95 * 45.0
    v2 = step_run("bbr2", 40, 45, step, step + 6)
    plus = step_run("bbr2plus", 40, 45, step, step + 6)
    p = first_row(plus, step, lambda r: r["btlbw_est_mbps"] >= target)
    v = first_row(v2, step, lambda r: r["btlbw_est_mbps"] >= target)
    plus_rounds = rounds_between(plus, step, p["time_s"]) if p else float("inf")
    v2_lag = v["time_s"] - step if v else float("inf")
    ok = plus_rounds <= 12 and v2_lag > 2.0
    record(
        5,
        ok,
        f"40->45 Mbps at t={step}s: bbr2plus reached {target:.2f} in {plus_rounds} rounds (<=12), "
        f"bbr2 {lag_text(v2_lag)} (need >2s)",
    )
    assert ok


JITTER_SEEDS = (1, 2, 3, 4, 5)


def jitter_stats(cca, jitter_ms, seeds):
    runs = [single(cca, LINK_MBPS, RTT_MS, 32 * BDP_40, jitter_ms=jitter_ms, seed=s) for s in seeds]
    tput = statistics.fmean(f.mean_throughput_mbps for f in runs)
    inflight = statistics.fmean(statistics.fmean(f.column("inflight_bytes")) for f in runs)
    return tput, inflight


@pytest.mark.slow
def test_criterion_6_jitter_resilience():
    plus_tput, _ = jitter_stats("bbr2plus", 120, JITTER_SEEDS)
    v2_tput, _ = jitter_stats("bbr2", 120, JITTER_SEEDS[:3])
    inflight = [jitter_stats("bbr2plus", j, JITTER_SEEDS[:3])[1] for j in (0, 40, 80, 120)]
    monotone = all(a < b for a, b in zip(inflight, inflight[1:]))
    ok = plus_tput >= 0.8 * LINK_MBPS and v2_tput <= 0.5 * LINK_MBPS and monotone
    record(
        6,
        ok,
        f"120ms jitter: bbr2plus={plus_tput:.1f} Mbps ({plus_tput / LINK_MBPS:.0%}), "
        f"bbr2={v2_tput:.1f} Mbps ({v2_tput / LINK_MBPS:.0%}); bbr2plus mean inflight at 0/40/80/120ms "
        f"= {[round(x / 1000) for x in inflight]} KB, monotone={monotone}",
    )
    assert ok


@pytest.mark.slow
def test_criterion_7_dual_mode_efficacy():
    off = versus_cubic("bbr2plus", (("dual_mode", False),), 8)
    on = versus_cubic("bbr2plus", (), 8)
    j_off = jain_index(off[0].mean_throughput_mbps, off[1].mean_throughput_mbps)
    j_on = jain_index(on[0].mean_throughput_mbps, on[1].mean_throughput_mbps)
    switched_to_v2 = any(r["probe_bw_mode"] == "BBRv2" for r in on[0].rows)
    ok = j_off <= 0.7 and j_on >= 0.8 and on[0].mode_switches >= 1 and switched_to_v2
    record(
        7,
        ok,
        f"8 BDP vs Cubic: Jain disabled={j_off:.3f} (<=0.7), enabled={j_on:.3f} (>=0.8), "
        f"switches={on[0].mode_switches}",
    )
    assert ok


@pytest.mark.slow
def test_criterion_8_shallow_buffer_fairness():
    plus = versus_cubic("bbr2plus", (), 0.2)
    v2 = versus_cubic("bbr2", (("alpha", 0.2), ("beta", 0.3)), 0.2)
    j_plus = jain_index(plus[0].mean_throughput_mbps, plus[1].mean_throughput_mbps)
    j_v2 = jain_index(v2[0].mean_throughput_mbps, v2[1].mean_throughput_mbps)
    stayed = plus[0].mode_switches == 0 and all(r["probe_bw_mode"] == MODE_PLUS for r in plus[0].rows)
    ok = j_plus >= j_v2 - 0.05 and stayed
    record(
        8,
        ok,
        f"0.2 BDP vs Cubic: Jain bbr2plus={j_plus:.3f} "
        f"({plus[0].mean_throughput_mbps:.1f}/{plus[1].mean_throughput_mbps:.1f}), "
        f"bbr2(20%,0.3)={j_v2:.3f}, need >= {j_v2 - 0.05:.3f}; stayed in BBRv2+ mode={stayed}",
    )
    assert ok


def test_criterion_9_property_suites(tmp_path):
    failures = []

    # windowed filter vs brute force over 10^4 random sequences
    r = random.Random(9)
    for _ in range(10_000):
        window = r.randint(1, 6)
        mode = r.choice(("max", "min"))
        pick = max if mode == "max" else min
        f = WindowedFilter(mode, window)
        hist, now = [], 0
        for _ in range(r.randint(1, 25)):
            now += r.randint(0, 2)
            v = r.randint(0, 100)
            hist.append((v, now))
            if f.update(v, now) != pick(x for x, t in hist if now - t < window):
                failures.append("filter")
                break
        if failures:
            break

    # dual-mode hysteresis on injected cruise minima
    rtprop = ms(40)
    for _ in range(2000):
        minima = [ms(r.choice((41, 43, 44, 45, 46, 50))) for _ in range(r.randint(1, 12))]
        mode, fill, empty, run, first = MODE_PLUS, 0, 0, 0, None
        for i, m in enumerate(minima):
            mode, fill, empty, switched = dual_mode_step(mode, fill, empty, m, rtprop)
            if switched and first is None:
                first = i
        for i, m in enumerate(minima):
            run = run + 1 if m > LAMBDA1 * rtprop else 0
            if run >= ETA1:
                expected = i
                break
        else:
            expected = None
        if first != expected:
            failures.append("hysteresis")
            break

    # jitter-compensated BDP: monotone, exact at the threshold
    for _ in range(2000):
        bw, rt = r.uniform(1e4, 1e8), r.randint(ms(1), ms(300))
        j1, j2 = sorted((r.uniform(0, ms(300)), r.uniform(0, ms(300))))
        if compensated_bdp(bw, rt, j1) > compensated_bdp(bw, rt, j2):
            failures.append("compensation monotone")
            break
    threshold = MU * ms(40)
    if compensated_bdp(5e6, ms(40), threshold) != 5e6 * 0.04:
        failures.append("compensation threshold")
    if not compensated_bdp(5e6, ms(40), threshold + 1) > 5e6 * 0.04:
        failures.append("compensation above threshold")

    # conservation is checked inside every run; determinism across reruns
    a = run_suite("responsiveness", tmp_path / "a", base_seed=5, repeats=2, duration_s=2.0)
    b = run_suite("responsiveness", tmp_path / "b", base_seed=5, repeats=2, duration_s=2.0)
    if a.read_bytes() != b.read_bytes():
        failures.append("determinism")

    # ProbeTry abort: a failed trial's cycle peaks at the trial gain
    from ccsim.bbr2plus import PROBE_TRY, Bbr2Plus

    peaks = []
    original = Bbr2Plus._enter_probe_down

    def spy(self, ack, flow, gain=0.75):
        if self.state == PROBE_TRY:
            peaks.append(self.cycle_max_gain)
        original(self, ack, flow, gain)

    Bbr2Plus._enter_probe_down = spy
    try:
        simulate(
            SimConfig(
                seconds(20),
                ConstantRate(from_mbps(LINK_MBPS)),
                200_000,
                [FlowConfig("bbr2plus", ms(40)), FlowConfig("bbr2plus", ms(40), start_time=seconds(2))],
                seed=1,
            )
        )
    finally:
        Bbr2Plus._enter_probe_down = original
    if not peaks or any(p != TRY_GAIN for p in peaks):
        failures.append("probe-try abort gain")

    ok = not failures
    record(9, ok, f"filter/hysteresis/compensation/conservation/determinism/abort-gain; failed={failures}")
    assert ok

import csv
import statistics
import warnings
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccsim.cli import default_seed, main
from ccsim.experiments import (
    SUITES,
    build_suite,
    jain_index,
    load_scenario,
    normalize_tput_delay,
    parse_scenario,
    run_suite,
    tput_gain,
)
from ccsim.experiments.suites import HEATMAP_RATES_FULL, HEATMAP_RTTS_MS, JITTER_MEANS_MS

REPO = Path(__file__).resolve().parents[1]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- metrics --------------------------------------------------------------------


def test_jain_equal_shares():
    assert jain_index(20, 20) == 1.0


def test_jain_one_starved_flow():
    assert jain_index(13.7, 0) == 0.5


def test_jain_formula():
    assert jain_index(30, 10) == pytest.approx((30 + 10) ** 2 / (2 * (30**2 + 10**2))) == pytest.approx(0.8)


def test_jain_undefined_for_all_zero():
    assert jain_index(0, 0) is None


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_jain_two_flow_range(a, b):
    j = jain_index(a, b)
    if a + b == 0:
        assert j is None
    else:
        assert 0.5 - 1e-9 <= j <= 1 + 1e-9


def test_tput_gain():
    assert tput_gain(40, 32) == pytest.approx((40 - 32) / 32) == pytest.approx(0.25)
    assert tput_gain(17.5, 17.5) == 0
    assert tput_gain(10, 0) is None


def test_normalized_throughput_single_trace():
    out = normalize_tput_delay({"t0": {"A": (30, 12.0), "B": (40, 6.0)}})
    assert out["A"]["throughput"] == pytest.approx(0.75)
    assert out["B"]["delay"] == 1.0
    assert out["A"]["delay"] == pytest.approx(2.0)


def test_normalized_throughput_averages_traces():
    out = normalize_tput_delay(
        {"t0": {"A": (30, 5.0), "B": (40, 5.0)}, "t1": {"A": (85, 5.0), "B": (100, 5.0)}}
    )
    assert out["A"]["throughput"] == pytest.approx(statistics.fmean([0.75, 0.85])) == pytest.approx(0.8)


def test_degenerate_trace_excluded_with_warning():
    with pytest.warns(RuntimeWarning):
        out = normalize_tput_delay({"dead": {"A": (0, 0), "B": (0, 0)}, "ok": {"A": (1, 1), "B": (2, 2)}})
    assert out["A"]["throughput"] == 0.5


def test_normalization_needs_two_ccas():
    with pytest.raises(ValueError):
        normalize_tput_delay({"t0": {"A": (1, 1)}})


# -- scenarios -------------------------------------------------------------------


def test_shipped_scenarios_load():
    for path in sorted((REPO / "scenarios").glob("*.toml")):
        sc = load_scenario(path)
        assert sc.duration_s > 0 and sc.buffer_bytes() > 0
        sc.to_sim_config()


def base_doc(**bottleneck):
    return {
        "name": "x",
        "duration_s": 1,
        "bottleneck": {"rate_mbps": 40, "buffer_bdp": 1, **bottleneck},
        "flows": [{"cca": "bbr", "base_rtt_ms": 40}],
    }


def test_buffer_in_bdp_multiples():
    sc = parse_scenario(base_doc(buffer_bdp=2))
    assert sc.buffer_bytes() == pytest.approx(2 * 40e6 / 8 * 0.04, abs=1)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d["flows"][0].update(cca="vegas"),
        lambda d: d.update(duration_s=0),
        lambda d: d["bottleneck"].update(buffer_bdp=0),
        lambda d: d["bottleneck"].update(buffer_bytes=1000),
        lambda d: d["bottleneck"].update(loss_prob=2),
        lambda d: d["bottleneck"].pop("rate_mbps"),
    ],
)
def test_invalid_scenarios_rejected(mutate):
    doc = base_doc()
    mutate(doc)
    with pytest.raises(ValueError):
        parse_scenario(doc)


# -- suites ------------------------------------------------------------------------


def test_unknown_suite():
    with pytest.raises(ValueError):
        build_suite("nope")


def test_all_suites_build():
    for name in SUITES:
        cells = build_suite(name)
        assert cells and len({c.name for c in cells}) == len(cells)


def test_heatmap_grid_coverage():
    cells = build_suite("retx_heatmap", full_grid=True)
    seen = Counter((c.tags["variant"], c.tags["rate_mbps"], c.tags["rtt_ms"]) for c in cells)
    for cca in ("bbr", "bbr2", "bbr2plus"):
        for rate in HEATMAP_RATES_FULL:
            for rtt in HEATMAP_RTTS_MS:
                assert seen[(cca, rate, rtt)] == 1
    assert sum(seen.values()) == 3 * len(HEATMAP_RATES_FULL) * len(HEATMAP_RTTS_MS)
    desk = build_suite("retx_heatmap")
    assert max(c.tags["rate_mbps"] for c in desk) <= 200


def test_suite_grids():
    fair = build_suite("inter_fairness")
    assert sorted({c.tags["buffer_bdp"] for c in fair}) == [0.2, 0.5, 1, 1.5, 2, 4, 8, 16, 32]
    assert all([f.cca for f in c.flows][1] == "cubic" for c in fair)
    assert all(c.duration_s == 180 for c in fair)
    rtt = build_suite("rtt_fairness")
    assert all(sorted(f.base_rtt_ms for f in c.flows) == [40, 150] for c in rtt)
    jit = build_suite("jitter")
    assert sorted({c.tags["jitter_mean_ms"] for c in jit}) == list(JITTER_MEANS_MS)
    assert all(c.bottleneck.buffer_bdp == 32 for c in jit)


def run_small_suite(out, **kw):
    return run_suite("responsiveness", out, base_seed=3, repeats=2, duration_s=1.0, **kw)


def test_suite_rerun_is_bit_identical(tmp_path):
    a = run_small_suite(tmp_path / "a")
    b = run_small_suite(tmp_path / "b", jobs=2)
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a" / "runs.csv").read_bytes() == (tmp_path / "b" / "runs.csv").read_bytes()


def test_summary_is_mean_of_seeds(tmp_path):
    summary = run_suite("loss_resilience", tmp_path, base_seed=0, repeats=5, duration_s=1.0, telemetry=False)
    runs = read_csv(tmp_path / "runs.csv")
    for row in read_csv(summary):
        per_seed = [float(r["mean_throughput_mbps"]) for r in runs if r["cell"] == row["cell"]]
        assert len(per_seed) == 5 == int(row["seeds"])
        assert float(row["mean_throughput_mbps"]) == pytest.approx(statistics.fmean(per_seed))
        rr = [float(r["retransmission_rate"]) for r in runs if r["cell"] == row["cell"]]
        assert 0 <= float(row["retransmission_rate"]) <= 1
        assert float(row["retransmission_rate"]) == pytest.approx(statistics.fmean(rr))


# -- cli -----------------------------------------------------------------------------


def test_cli_run(tmp_path, capsys):
    rc = main(["run", "--scenario", str(REPO / "scenarios" / "step_down.toml"), "--seed", "2", "--out", str(tmp_path)])
    assert rc == 0
    rows = read_csv(tmp_path / "telemetry.csv")
    assert rows[0].keys() >= {"time_s", "cca", "btlbw_est_mbps", "probe_bw_mode"}
    assert read_csv(tmp_path / "summary.csv")[0]["seed"] == "2"
    assert "Mbit/s" in capsys.readouterr().out


def test_cli_suite_and_reports(tmp_path, monkeypatch):
    monkeypatch.setenv("CCSIM_SEED", "11")
    out = tmp_path / "s"
    assert main(["suite", "step_traces", "--out", str(out), "--repeats", "1", "--duration", "1", "--no-telemetry"]) == 0
    assert {r["seed"] for r in read_csv(out / "runs.csv")} == {"11"}
    assert main(["metrics", "--in", str(out), "--report", "normalized"]) == 0
    report = read_csv(out / "report_normalized.csv")
    assert {r["variant"] for r in report} == {"cubic", "bbr", "bbr2", "bbr2plus"}


def test_cli_reports_need_matching_suite(tmp_path):
    out = tmp_path / "h"
    run_suite("responsiveness", out, repeats=1, duration_s=0.5, telemetry=False)
    assert main(["metrics", "--in", str(out), "--report", "fairness"]) == 0
    with pytest.raises(SystemExit):
        main(["metrics", "--in", str(out), "--report", "heatmap"])


def test_cli_heatmap_report(tmp_path, monkeypatch):
    import ccsim.experiments.suites as suites

    monkeypatch.setattr(suites, "HEATMAP_RATES_DESK", (10,))
    monkeypatch.setattr(suites, "HEATMAP_RTTS_MS", (20,))
    out = tmp_path / "hm"
    run_suite("retx_heatmap", out, repeats=1, duration_s=0.5, telemetry=False)
    assert main(["metrics", "--in", str(out), "--report", "heatmap"]) == 0
    (row,) = read_csv(out / "report_heatmap.csv")
    assert row["tput_gain_bbr_over_bbr2"] != ""
    assert float(row["rate_mbps"]) == 10


def test_default_seed(monkeypatch):
    monkeypatch.delenv("CCSIM_SEED", raising=False)
    assert default_seed(None, 4) == 4
    monkeypatch.setenv("CCSIM_SEED", "9")
    assert default_seed(None) == 9
    assert default_seed(1) == 1
    monkeypatch.setenv("CCSIM_SEED", "x")
    with pytest.raises(SystemExit):
        default_seed(None)

"""Scenario grids for the reproduction studies and a parallel runner.

Every cell runs once per seed (``base_seed``, ``base_seed + 1``, ...).  Workers
only simulate; the parent process writes every file, in a fixed order, so a
rerun with the same base seed yields byte-identical CSVs.
"""

from __future__ import annotations

import csv
import multiprocessing
import random
from dataclasses import replace
from pathlib import Path
from statistics import mean, pstdev
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from ..netsim import TELEMETRY_COLUMNS, simulate
from .metrics import SummaryMetrics, mean_or_none, summarize_run
from .scenario import Bottleneck, FlowSpec, Scenario

REPEATS = 5
BBR_FAMILY = ("bbr", "bbr2", "bbr2plus")
ALL_CCAS = ("cubic",) + BBR_FAMILY

FAIRNESS_BUFFERS_BDP = (0.2, 0.5, 1, 1.5, 2, 4, 8, 16, 32)
FAIRNESS_DURATION_S = 180.0
HEATMAP_DURATION_S = 30.0
HEATMAP_BUFFER_BYTES = 100_000
# axis ticks of the published heatmaps; the desk grid stops at 200 Mbit/s
HEATMAP_RATES_FULL = (10, 50, 100, 150, 200, 300, 400, 500, 750)
HEATMAP_RATES_DESK = tuple(r for r in HEATMAP_RATES_FULL if r <= 200)
HEATMAP_RTTS_MS = (5, 10, 20, 40, 50, 80, 100, 150)
LOSS_RATES = (0.0, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
LOSS_VARIANTS = (
    ("cubic", "cubic", {}),
    ("bbr", "bbr", {}),
    ("bbr2", "bbr2", {}),
    ("bbr2_a20", "bbr2", {"alpha": 0.2}),
    ("bbr2_a20_b0", "bbr2", {"alpha": 0.2, "beta": 0.0}),
    ("bbr2plus", "bbr2plus", {}),
)
JITTER_MEANS_MS = (0, 20, 40, 60, 80, 100, 120)
STEP_BUFFER_BYTES = 1_500_000
STEP_RTT_MS = 40.0
STEP_AT_S = 20.0
STEP_TRACE_COUNT = 3
STEP_TRACE_SEGMENT_S = 5.0
STEP_TRACE_RANGE_MBPS = (10, 50)

RUN_COLUMNS = (
    "flow_id",
    "cca",
    "mean_throughput_mbps",
    "retransmission_rate",
    "mean_queuing_delay_ms",
    "p95_queuing_delay_ms",
    "mean_inflight_bytes",
    "mode_switches",
    "jain_index",
)
AVERAGED = RUN_COLUMNS[2:]


def _single(name, cca, params, rtt_ms, bottleneck, duration_s, tags) -> Scenario:
    return Scenario(
        name=name,
        duration_s=duration_s,
        flows=(FlowSpec(cca, rtt_ms, params=dict(params)),),
        bottleneck=bottleneck,
        tags=tags,
    )


def _inter_fairness(full_grid: bool) -> List[Scenario]:
    out = []
    for cca in BBR_FAMILY:
        for buf in FAIRNESS_BUFFERS_BDP:
            out.append(
                Scenario(
                    name=f"inter_{cca}_vs_cubic_{buf}bdp",
                    duration_s=FAIRNESS_DURATION_S,
                    flows=(FlowSpec(cca, 40.0), FlowSpec("cubic", 40.0)),
                    bottleneck=Bottleneck(rate_mbps=40.0, buffer_bdp=buf),
                    tags={"variant": cca, "buffer_bdp": buf},
                )
            )
    return out


def _rtt_fairness(full_grid: bool) -> List[Scenario]:
    out = []
    for cca in ALL_CCAS:
        for buf in FAIRNESS_BUFFERS_BDP:
            out.append(
                Scenario(
                    name=f"rtt_{cca}_{buf}bdp",
                    duration_s=FAIRNESS_DURATION_S,
                    flows=(FlowSpec(cca, 40.0), FlowSpec(cca, 150.0)),
                    # buffer sized on the long path's BDP
                    bottleneck=Bottleneck(rate_mbps=40.0, buffer_bdp=buf, bdp_rtt_ms=150.0),
                    tags={"variant": cca, "buffer_bdp": buf},
                )
            )
    return out


def _retx_heatmap(full_grid: bool) -> List[Scenario]:
    rates = HEATMAP_RATES_FULL if full_grid else HEATMAP_RATES_DESK
    out = []
    for cca in BBR_FAMILY:
        for rate in rates:
            for rtt in HEATMAP_RTTS_MS:
                out.append(
                    _single(
                        f"heatmap_{cca}_{rate}mbps_{rtt}ms",
                        cca,
                        {},
                        float(rtt),
                        Bottleneck(rate_mbps=float(rate), buffer_bytes=HEATMAP_BUFFER_BYTES),
                        HEATMAP_DURATION_S,
                        {"variant": cca, "rate_mbps": rate, "rtt_ms": rtt},
                    )
                )
    return out


def _loss_resilience(full_grid: bool) -> List[Scenario]:
    out = []
    for label, cca, params in LOSS_VARIANTS:
        for loss in LOSS_RATES:
            out.append(
                _single(
                    f"loss_{label}_{loss:g}",
                    cca,
                    params,
                    40.0,
                    Bottleneck(rate_mbps=40.0, buffer_bdp=32, loss_prob=loss),
                    30.0,
                    {"variant": label, "loss_prob": loss},
                )
            )
    return out


def _responsiveness(full_grid: bool) -> List[Scenario]:
    out = []
    for after in (35.0, 45.0):
        steps = ((0.0, 40.0), (STEP_AT_S, after))
        for cca in BBR_FAMILY:
            out.append(
                _single(
                    f"step_{cca}_40to{after:g}",
                    cca,
                    {},
                    STEP_RTT_MS,
                    Bottleneck(steps=steps, buffer_bytes=STEP_BUFFER_BYTES),
                    STEP_AT_S + 20.0,
                    {"variant": cca, "rate_before_mbps": 40.0, "rate_after_mbps": after},
                )
            )
    return out


def _jitter(full_grid: bool) -> List[Scenario]:
    out = []
    for cca in ALL_CCAS:
        for j in JITTER_MEANS_MS:
            out.append(
                _single(
                    f"jitter_{cca}_{j}ms",
                    cca,
                    {},
                    40.0,
                    Bottleneck(rate_mbps=40.0, buffer_bdp=32, jitter_mean_ms=float(j)),
                    30.0,
                    {"variant": cca, "jitter_mean_ms": j},
                )
            )
    return out


def synthetic_step_trace(index: int, duration_s: float) -> Tuple[Tuple[float, float], ...]:
    """A reproducible piecewise-constant rate schedule standing in for a cellular trace."""
    rng = random.Random(f"step-trace-{index}")
    lo, hi = STEP_TRACE_RANGE_MBPS
    steps = []
    t = 0.0
    while t < duration_s:
        steps.append((t, float(rng.randint(lo, hi))))
        t += STEP_TRACE_SEGMENT_S
    return tuple(steps)


def _step_traces(full_grid: bool) -> List[Scenario]:
    duration = 60.0
    out = []
    for k in range(STEP_TRACE_COUNT):
        steps = synthetic_step_trace(k, duration)
        for cca in ALL_CCAS:
            out.append(
                _single(
                    f"trace{k}_{cca}",
                    cca,
                    {},
                    STEP_RTT_MS,
                    Bottleneck(steps=steps, buffer_bytes=STEP_BUFFER_BYTES),
                    duration,
                    {"variant": cca, "trace": k},
                )
            )
    return out


SUITES: Dict[str, Callable[[bool], List[Scenario]]] = {
    "inter_fairness": _inter_fairness,
    "rtt_fairness": _rtt_fairness,
    "retx_heatmap": _retx_heatmap,
    "loss_resilience": _loss_resilience,
    "responsiveness": _responsiveness,
    "jitter": _jitter,
    "step_traces": _step_traces,
}


def build_suite(name: str, full_grid: bool = False, duration_s: Optional[float] = None) -> List[Scenario]:
    try:
        builder = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}") from None
    cells = builder(full_grid)
    if duration_s is not None:
        cells = [replace(c, duration_s=duration_s) for c in cells]
    return cells


def _run_one(job: Tuple[Scenario, int]) -> Tuple[SummaryMetrics, List[dict]]:
    scenario, seed = job
    run = simulate(scenario.with_seed(seed).to_sim_config())
    rows = [row for f in run.flows for row in f.rows]
    rows.sort(key=lambda r: (r["time_s"], r["flow_id"]))
    return summarize_run(run), rows


def run_jobs(jobs: Sequence[Tuple[Scenario, int]], workers: int = 1) -> Iterable:
    if workers <= 1:
        return map(_run_one, jobs)
    pool = multiprocessing.get_context("spawn").Pool(workers)

    def _results():
        with pool:
            yield from pool.imap(_run_one, jobs)

    return _results()


def write_telemetry(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TELEMETRY_COLUMNS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def _tag_columns(cells: Sequence[Scenario]) -> List[str]:
    cols: List[str] = []
    for c in cells:
        for k in c.tags:
            if k not in cols:
                cols.append(k)
    return cols


def summarize_seeds(run_rows: Sequence[dict], tag_cols: Sequence[str]) -> List[dict]:
    """Average per-seed rows into one row per (cell, flow)."""
    groups: Dict[Tuple[str, int], List[dict]] = {}
    for row in run_rows:
        groups.setdefault((row["cell"], row["flow_id"]), []).append(row)
    out = []
    for (cell, fid), rows in groups.items():
        first = rows[0]
        summary = {"suite": first["suite"], "cell": cell, "seeds": len(rows)}
        summary.update({k: first.get(k, "") for k in tag_cols})
        summary["flow_id"] = fid
        summary["cca"] = first["cca"]
        for col in AVERAGED:
            summary[col] = mean_or_none([r[col] for r in rows])
        summary["sd_throughput_mbps"] = pstdev([r["mean_throughput_mbps"] for r in rows])
        out.append(summary)
    return out


def run_suite(
    name: str,
    out_dir,
    base_seed: int = 0,
    repeats: int = REPEATS,
    jobs: int = 1,
    full_grid: bool = False,
    duration_s: Optional[float] = None,
    telemetry: bool = True,
) -> Path:
    """Run every cell of a suite ``repeats`` times; returns the summary CSV path.

    Layout under ``out_dir``: ``cells/<cell>/seed_<n>.csv`` (telemetry),
    ``runs.csv`` (one row per cell, seed and flow) and ``summary.csv``
    (seed-averaged).
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = build_suite(name, full_grid, duration_s)
    tag_cols = _tag_columns(cells)
    seeds = [base_seed + i for i in range(repeats)]
    work = [(cell, seed) for cell in cells for seed in seeds]

    run_rows: List[dict] = []
    for (cell, seed), (summary, rows) in zip(work, run_jobs(work, jobs)):
        if telemetry:
            write_telemetry(out / "cells" / cell.name / f"seed_{seed}.csv", rows)
        for flow_row in summary.as_rows():
            row = {"suite": name, "cell": cell.name, "seed": seed}
            row.update({k: cell.tags.get(k, "") for k in tag_cols})
            row.update(flow_row)
            run_rows.append(row)

    head = ["suite", "cell", "seed", *tag_cols, *RUN_COLUMNS]
    _write_rows(out / "runs.csv", head, run_rows)
    summary_rows = summarize_seeds(run_rows, tag_cols)
    summary_head = ["suite", "cell", "seeds", *tag_cols, *RUN_COLUMNS, "sd_throughput_mbps"]
    path = out / "summary.csv"
    _write_rows(path, summary_head, summary_rows)
    return path


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(header), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})

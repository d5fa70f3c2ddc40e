"""Command-line entry point: ``ccsim run | suite | metrics``."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from collections import defaultdict
from pathlib import Path
from statistics import mean
from typing import Dict, List, Optional, Sequence

from .experiments.metrics import jain_index, mean_or_none, normalize_tput_delay, summarize_run, tput_gain
from .experiments.scenario import load_scenario
from .experiments.suites import RUN_COLUMNS, SUITES, _write_rows, run_suite, write_telemetry
from .netsim import simulate

SEED_ENV = "CCSIM_SEED"


def default_seed(explicit: Optional[int], fallback: int = 0) -> int:
    if explicit is not None:
        return explicit
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise SystemExit(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return fallback


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    scenario = scenario.with_seed(default_seed(args.seed, scenario.seed))
    run = simulate(scenario.to_sim_config())
    out = Path(args.out)
    rows = sorted((r for f in run.flows for r in f.rows), key=lambda r: (r["time_s"], r["flow_id"]))
    write_telemetry(out / "telemetry.csv", rows)
    summary = summarize_run(run)
    head = ["scenario", "seed", *RUN_COLUMNS]
    _write_rows(
        out / "summary.csv",
        head,
        [{"scenario": scenario.name, "seed": scenario.seed, **r} for r in summary.as_rows()],
    )
    for f in summary.flows:
        print(
            f"flow {f.flow_id} {f.cca}: {f.mean_throughput_mbps:.2f} Mbit/s, "
            f"retx {f.retransmission_rate:.4f}, queue {f.mean_queuing_delay_ms:.1f} ms"
        )
    if summary.jain_index is not None:
        print(f"jain index: {summary.jain_index:.3f}")
    return 0


def cmd_suite(args) -> int:
    path = run_suite(
        args.name,
        args.out,
        base_seed=default_seed(args.seed),
        repeats=args.repeats,
        jobs=args.jobs,
        full_grid=args.full_grid,
        duration_s=args.duration,
        telemetry=not args.no_telemetry,
    )
    print(f"wrote {path}")
    return 0


def _read_runs(in_dir: Path) -> List[dict]:
    path = in_dir / "runs.csv"
    if not path.exists():
        raise SystemExit(f"{path} not found; run a suite first")
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _f(value: str) -> Optional[float]:
    return float(value) if value not in ("", None) else None


def report_fairness(runs: Sequence[dict]) -> List[dict]:
    """Per cell: Jain index averaged over seeds, plus each flow's mean throughput."""
    per_seed: Dict[str, Dict[str, List[float]]] = defaultdict(lambda: defaultdict(list))
    meta: Dict[str, dict] = {}
    for r in runs:
        per_seed[r["cell"]][r["seed"]].append(float(r["mean_throughput_mbps"]))
        meta.setdefault(r["cell"], {"variant": r.get("variant", ""), "buffer_bdp": r.get("buffer_bdp", "")})
    out = []
    for cell, seeds in per_seed.items():
        jains = [jain_index(t) for t in seeds.values() if len(t) > 1]
        n_flows = max(len(t) for t in seeds.values())
        row = {"cell": cell, **meta[cell], "jain_index": mean_or_none(jains)}
        for i in range(n_flows):
            row[f"flow{i}_mbps"] = mean(t[i] for t in seeds.values() if len(t) > i)
        out.append(row)
    return out


def report_heatmap(runs: Sequence[dict]) -> List[dict]:
    """Per (rate, RTT): retransmission rate of each variant and Tput_Gain(bbr, bbr2)."""
    acc: Dict[tuple, Dict[str, Dict[str, List[float]]]] = defaultdict(lambda: defaultdict(lambda: defaultdict(list)))
    for r in runs:
        key = (float(r["rate_mbps"]), float(r["rtt_ms"]))
        slot = acc[key][r["variant"]]
        slot["tput"].append(float(r["mean_throughput_mbps"]))
        slot["retx"].append(float(r["retransmission_rate"]))
    out = []
    for (rate, rtt), by_var in sorted(acc.items()):
        row = {"rate_mbps": rate, "rtt_ms": rtt}
        for var, vals in sorted(by_var.items()):
            row[f"{var}_mbps"] = mean(vals["tput"])
            row[f"{var}_retx"] = mean(vals["retx"])
        if "bbr" in by_var and "bbr2" in by_var:
            row["tput_gain_bbr_over_bbr2"] = tput_gain(mean(by_var["bbr"]["tput"]), mean(by_var["bbr2"]["tput"]))
        out.append(row)
    return out


def report_normalized(runs: Sequence[dict]) -> List[dict]:
    """Throughput and queuing delay normalized per trace, averaged over traces."""
    acc: Dict[str, Dict[str, List[tuple]]] = defaultdict(lambda: defaultdict(list))
    for r in runs:
        trace = r.get("trace") or r["cell"]
        acc[trace][r["variant"]].append(
            (float(r["mean_throughput_mbps"]), float(r["mean_queuing_delay_ms"]), float(r["p95_queuing_delay_ms"]))
        )
    per_trace = {
        t: {v: tuple(mean(x[i] for x in xs) for i in range(3)) for v, xs in by_var.items()}
        for t, by_var in acc.items()
    }
    norm = normalize_tput_delay(per_trace)
    return [{"variant": v, **vals} for v, vals in sorted(norm.items())]


REPORTS = {"fairness": report_fairness, "heatmap": report_heatmap, "normalized": report_normalized}
REPORT_COLUMNS = {"heatmap": ("rate_mbps", "rtt_ms")}


def cmd_metrics(args) -> int:
    in_dir = Path(args.in_dir)
    runs = _read_runs(in_dir)
    missing = [c for c in REPORT_COLUMNS.get(args.report, ()) if runs and c not in runs[0]]
    if missing:
        raise SystemExit(f"the {args.report} report needs columns {missing}; run the matching suite")
    rows = REPORTS[args.report](runs)
    if not rows:
        print("no rows")
        return 1
    head: List[str] = []
    for r in rows:
        head.extend(k for k in r if k not in head)
    path = in_dir / f"report_{args.report}.csv"
    _write_rows(path, head, rows)
    w = csv.DictWriter(sys.stdout, fieldnames=head, extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else ("" if v is None else v)) for k, v in r.items()})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one scenario file")
    run.add_argument("--scenario", required=True, help="TOML scenario file")
    run.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV}, then the file's seed")
    run.add_argument("--out", required=True, help="output directory")
    run.set_defaults(func=cmd_run)

    suite = sub.add_parser("suite", help="run a reproduction suite")
    suite.add_argument("name", choices=sorted(SUITES))
    suite.add_argument("--out", required=True)
    suite.add_argument("--seed", type=int, default=None, help=f"base seed; default ${SEED_ENV} or 0")
    suite.add_argument("--repeats", type=int, default=5)
    suite.add_argument("--jobs", type=int, default=1, help="worker processes")
    suite.add_argument("--full-grid", action="store_true", help="heatmap bandwidths up to 750 Mbit/s")
    suite.add_argument("--duration", type=float, default=None, help="override every cell's duration (s)")
    suite.add_argument("--no-telemetry", action="store_true", help="skip per-cell time series")
    suite.set_defaults(func=cmd_suite)

    met = sub.add_parser("metrics", help="summarize a suite's runs.csv")
    met.add_argument("--in", dest="in_dir", required=True)
    met.add_argument("--report", choices=sorted(REPORTS), required=True)
    met.set_defaults(func=cmd_metrics)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

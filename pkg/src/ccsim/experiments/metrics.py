"""Fairness, throughput-gain and normalized throughput/delay metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from statistics import mean
from typing import Dict, List, Mapping, Optional, Sequence

from ..netsim import RunResult


def jain_index(*throughputs: float) -> Optional[float]:
    """(sum x)^2 / (n * sum x^2); None when every flow got nothing."""
    if len(throughputs) == 1 and isinstance(throughputs[0], (list, tuple)):
        throughputs = tuple(throughputs[0])
    if not throughputs:
        raise ValueError("need at least one throughput")
    if any(t < 0 for t in throughputs):
        raise ValueError("throughput must be non-negative")
    top = max(throughputs)
    if top == 0:
        return None
    scaled = [t / top for t in throughputs]  # avoids underflow in the squares
    return sum(scaled) ** 2 / (len(scaled) * sum(x * x for x in scaled))


def tput_gain(t_bbr: float, t_bbr2: float) -> Optional[float]:
    """Relative throughput advantage of the first flow over the second."""
    if t_bbr2 == 0:
        return None
    return (t_bbr - t_bbr2) / t_bbr2


@dataclass
class FlowSummary:
    flow_id: int
    cca: str
    mean_throughput_mbps: float
    retransmission_rate: float
    mean_queuing_delay_ms: float
    p95_queuing_delay_ms: float
    mean_inflight_bytes: float
    mode_switches: int


@dataclass
class SummaryMetrics:
    flows: List[FlowSummary]
    jain_index: Optional[float]

    def as_rows(self) -> List[dict]:
        rows = []
        for f in self.flows:
            row = asdict(f)
            row["jain_index"] = self.jain_index
            rows.append(row)
        return rows


def summarize_run(run: RunResult) -> SummaryMetrics:
    flows = []
    for f in run.flows:
        inflight = f.column("inflight_bytes")
        flows.append(
            FlowSummary(
                flow_id=f.flow_id,
                cca=f.cca,
                mean_throughput_mbps=f.mean_throughput_mbps,
                retransmission_rate=f.retransmission_rate,
                mean_queuing_delay_ms=f.mean_queuing_delay_ms,
                p95_queuing_delay_ms=f.p95_queuing_delay_ms,
                mean_inflight_bytes=mean(inflight) if inflight else 0.0,
                mode_switches=f.mode_switches,
            )
        )
    tputs = [f.mean_throughput_mbps for f in flows]
    return SummaryMetrics(flows, jain_index(tputs) if len(tputs) > 1 else None)


def normalize_tput_delay(
    per_trace: Mapping[str, Mapping[str, Sequence[float]]],
) -> Dict[str, Dict[str, float]]:
    """Normalize each CCA against the best CCA on every trace, then average.

    ``per_trace[trace][cca]`` is ``(mean_throughput, mean_delay)`` or
    ``(mean_throughput, mean_delay, p95_delay)``.  Throughput is divided by
    the trace's best throughput and delay by its lowest delay.  Traces where
    every throughput is zero, or the lowest delay is zero, cannot be
    normalized and are skipped with a warning.
    """
    acc: Dict[str, Dict[str, List[float]]] = {}
    for trace, by_cca in per_trace.items():
        if len(by_cca) < 2:
            raise ValueError("normalization needs at least two CCAs per trace")
        vals = {c: tuple(v) for c, v in by_cca.items()}
        best_t = max(v[0] for v in vals.values())
        best_d = min(v[1] for v in vals.values())
        has_p95 = all(len(v) > 2 for v in vals.values())
        best_p = min(v[2] for v in vals.values()) if has_p95 else None
        if best_t <= 0 or best_d <= 0 or (has_p95 and best_p <= 0):
            warnings.warn(f"trace {trace!r} is degenerate and was excluded", RuntimeWarning)
            continue
        for cca, v in vals.items():
            slot = acc.setdefault(cca, {"throughput": [], "delay": [], "delay_p95": []})
            slot["throughput"].append(v[0] / best_t)
            slot["delay"].append(v[1] / best_d)
            if has_p95:
                slot["delay_p95"].append(v[2] / best_p)
    out: Dict[str, Dict[str, float]] = {}
    for cca, slot in acc.items():
        out[cca] = {k: mean(xs) for k, xs in slot.items() if xs}
    return out


def mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    kept = [v for v in values if v is not None and not math.isnan(v)]
    return mean(kept) if kept else None

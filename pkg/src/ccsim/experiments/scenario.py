"""Scenario description and its TOML file format.

A scenario file looks like::

    name = "fairness-8bdp"
    duration_s = 180
    seed = 1                  # optional; CLI --seed / CCSIM_SEED override
    sample_interval_ms = 100  # optional

    [bottleneck]
    rate_mbps = 40            # or: steps = [[0, 40], [20, 35]]  (seconds, Mbit/s)
                              # or: trace = "uplink.trace"        (ms opportunities)
    buffer_bdp = 8            # or: buffer_bytes = 100000
    bdp_rtt_ms = 40           # optional RTT for buffer_bdp; default: first flow's
    loss_prob = 0.0
    jitter_mean_ms = 0

    [[flows]]
    cca = "bbr2plus"
    base_rtt_ms = 40
    start_time_s = 0          # optional
    params = { dual_mode = true }   # optional controller overrides

Relative ``trace`` paths resolve against the scenario file's directory.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..cca import CCA_NAMES
from ..core import from_mbps, ms, seconds
from ..netsim import ConstantRate, DeliveryTrace, FlowConfig, SimConfig, StepSchedule, TraceRate


@dataclass(frozen=True)
class FlowSpec:
    cca: str
    base_rtt_ms: float
    start_time_s: float = 0.0
    params: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Bottleneck:
    rate_mbps: Optional[float] = None
    steps: Optional[Tuple[Tuple[float, float], ...]] = None  # (time_s, Mbit/s)
    trace: Optional[str] = None
    buffer_bytes: Optional[int] = None
    buffer_bdp: Optional[float] = None
    bdp_rtt_ms: Optional[float] = None
    loss_prob: float = 0.0
    jitter_mean_ms: float = 0.0

    def rate_source(self):
        if self.trace is not None:
            return TraceRate(DeliveryTrace.from_file(self.trace))
        if self.steps is not None:
            return StepSchedule([(seconds(t), from_mbps(r)) for t, r in self.steps])
        return ConstantRate(from_mbps(self.rate_mbps))


@dataclass(frozen=True)
class Scenario:
    name: str
    duration_s: float
    flows: Tuple[FlowSpec, ...]
    bottleneck: Bottleneck
    seed: int = 0
    sample_interval_ms: float = 100.0
    tags: Dict[str, Any] = field(default_factory=dict)  # suite bookkeeping, copied to CSV

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        if not self.flows:
            raise ValueError("a scenario needs at least one flow")
        for f in self.flows:
            if f.cca not in CCA_NAMES:
                raise ValueError(f"unknown CCA {f.cca!r}; expected one of {CCA_NAMES}")
            if f.base_rtt_ms <= 0:
                raise ValueError("base RTT must be positive")
        b = self.bottleneck
        sources = sum(x is not None for x in (b.rate_mbps, b.steps, b.trace))
        if sources != 1:
            raise ValueError("bottleneck needs exactly one of rate_mbps, steps, trace")
        if (b.buffer_bytes is None) == (b.buffer_bdp is None):
            raise ValueError("bottleneck needs exactly one of buffer_bytes, buffer_bdp")
        if self.buffer_bytes() <= 0:
            raise ValueError("buffer must be positive")
        if not 0.0 <= b.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def buffer_bytes(self) -> int:
        b = self.bottleneck
        if b.buffer_bytes is not None:
            return int(b.buffer_bytes)
        rtt_ms = b.bdp_rtt_ms if b.bdp_rtt_ms is not None else self.flows[0].base_rtt_ms
        rate = b.rate_source().mean_rate() if b.rate_mbps is None else from_mbps(b.rate_mbps)
        return int(round(b.buffer_bdp * rate * rtt_ms / 1000))

    def to_sim_config(self) -> SimConfig:
        b = self.bottleneck
        return SimConfig(
            duration=seconds(self.duration_s),
            rate_source=b.rate_source(),
            buffer_bytes=self.buffer_bytes(),
            flows=[
                FlowConfig(
                    f.cca, ms(f.base_rtt_ms), start_time=seconds(f.start_time_s), params=dict(f.params)
                )
                for f in self.flows
            ],
            loss_prob=b.loss_prob,
            jitter_mean=ms(b.jitter_mean_ms),
            seed=self.seed,
            sample_interval=ms(self.sample_interval_ms),
        )


def _steps(raw: Optional[Sequence]) -> Optional[Tuple[Tuple[float, float], ...]]:
    if raw is None:
        return None
    out = tuple((float(t), float(r)) for t, r in raw)
    if not out:
        raise ValueError("steps must not be empty")
    return out


def parse_scenario(doc: Dict[str, Any], base_dir: Optional[Path] = None) -> Scenario:
    """Build a Scenario from an already-parsed TOML document."""
    try:
        bn = dict(doc["bottleneck"])
        raw_flows = doc["flows"]
        name = doc["name"]
        duration = float(doc["duration_s"])
    except KeyError as exc:
        raise ValueError(f"scenario is missing {exc.args[0]!r}") from None
    trace = bn.get("trace")
    if trace is not None and base_dir is not None and not Path(trace).is_absolute():
        trace = str(base_dir / trace)
    bottleneck = Bottleneck(
        rate_mbps=bn.get("rate_mbps"),
        steps=_steps(bn.get("steps")),
        trace=trace,
        buffer_bytes=bn.get("buffer_bytes"),
        buffer_bdp=bn.get("buffer_bdp"),
        bdp_rtt_ms=bn.get("bdp_rtt_ms"),
        loss_prob=float(bn.get("loss_prob", 0.0)),
        jitter_mean_ms=float(bn.get("jitter_mean_ms", 0.0)),
    )
    flows = tuple(
        FlowSpec(
            cca=f["cca"],
            base_rtt_ms=float(f["base_rtt_ms"]),
            start_time_s=float(f.get("start_time_s", 0.0)),
            params=dict(f.get("params", {})),
        )
        for f in raw_flows
    )
    return Scenario(
        name=name,
        duration_s=duration,
        flows=flows,
        bottleneck=bottleneck,
        seed=int(doc.get("seed", 0)),
        sample_interval_ms=float(doc.get("sample_interval_ms", 100.0)),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    with path.open("rb") as fh:
        doc = tomllib.load(fh)
    return parse_scenario(doc, path.parent)

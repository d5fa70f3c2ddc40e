"""Deterministic discrete-event simulation of a single-bottleneck dumbbell.

Senders sit directly in front of a shared droptail bottleneck.  After
service a packet propagates for half its flow's base RTT (plus optional
Gaussian jitter, which may reorder packets the way netem does) to the
receiver, whose ACK returns over the other half.

The bottleneck is FIFO, so a packet's service-completion time is known the
moment it is enqueued.  That keeps the event count at roughly two or three
heap operations per packet.
"""

from __future__ import annotations

import bisect
import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cca import make_cca
from .core import MSS, NS_PER_MS, NS_PER_S, mbps, ms, seconds, to_ms
from .transport import Packet, Receiver, TransportFlow

# -- rate sources -----------------------------------------------------------


class ConstantRate:
    def __init__(self, rate: float) -> None:
        if rate <= 0:
            raise ValueError("link rate must be positive")
        self.rate = rate  # bytes/s

    def rate_at(self, t: int) -> float:
        return self.rate

    def mean_rate(self) -> float:
        return self.rate

    def completion(self, start: int, size: int) -> int:
        return start + math.ceil(size * NS_PER_S / self.rate)


def step_rate_at(schedule: Sequence[Tuple[int, float]], t: int) -> float:
    """Rate of the latest step whose start is <= t (first step before it)."""
    if not schedule:
        raise ValueError("empty step schedule")
    times = [step[0] for step in schedule]
    idx = bisect.bisect_right(times, t) - 1
    return schedule[max(idx, 0)][1]


class StepSchedule:
    """Piecewise-constant rate: [(start_ns, bytes/s), ...], closed on the left."""

    def __init__(self, steps: Sequence[Tuple[int, float]]) -> None:
        if not steps:
            raise ValueError("empty step schedule")
        steps = sorted(steps)
        if any(rate < 0 for _, rate in steps):
            raise ValueError("negative rate in step schedule")
        if all(rate == 0 for _, rate in steps[-1:]):
            raise ValueError("schedule must end with a positive rate")
        self.steps = list(steps)
        self.times = [t for t, _ in self.steps]

    def rate_at(self, t: int) -> float:
        return step_rate_at(self.steps, t)

    def mean_rate(self) -> float:
        return self.steps[0][1] if self.steps[0][1] > 0 else self.steps[-1][1]

    def completion(self, start: int, size: int) -> int:
        remaining = float(size)
        t = start
        idx = max(bisect.bisect_right(self.times, t) - 1, 0)
        while True:
            rate = self.steps[idx][1]
            nxt = self.times[idx + 1] if idx + 1 < len(self.times) else None
            if rate > 0:
                done = t + remaining * NS_PER_S / rate
                if nxt is None or done <= nxt:
                    return math.ceil(done)
                remaining -= (nxt - t) * rate / NS_PER_S
            t = nxt
            idx += 1


@dataclass
class DeliveryTrace:
    """Millisecond delivery opportunities, one MSS each, looped forever."""

    opportunities: List[int]

    def __post_init__(self) -> None:
        ops = self.opportunities
        if not ops:
            raise ValueError("delivery trace is empty")
        if any(b < a for a, b in zip(ops, ops[1:])):
            raise ValueError("trace timestamps must be non-decreasing")
        if ops[-1] <= 0:
            raise ValueError("trace must span a positive duration")
        self._ns = [t * NS_PER_MS for t in ops]
        self.loop_ns = ops[-1] * NS_PER_MS

    @classmethod
    def from_file(cls, path) -> "DeliveryTrace":
        with open(path) as fh:
            ops = [int(line) for line in fh if line.strip()]
        return cls(ops)

    def time_of(self, n: int) -> int:
        q, i = divmod(n, len(self._ns))
        return self._ns[i] + q * self.loop_ns

    def first_index_at_or_after(self, now: int) -> int:
        n_ops = len(self._ns)
        q = max(now // self.loop_ns - 1, 0)
        while True:
            i = bisect.bisect_left(self._ns, now - q * self.loop_ns)
            if i < n_ops:
                return q * n_ops + i
            q += 1

    def mean_rate(self) -> float:
        return len(self._ns) * MSS * NS_PER_S / self.loop_ns


def trace_next_opportunity(trace: DeliveryTrace, now: int) -> int:
    """Earliest opportunity time >= now (ns), following the loop."""
    return trace.time_of(trace.first_index_at_or_after(now))


class TraceRate:
    """Link driven by a delivery trace; unused opportunities are wasted."""

    def __init__(self, trace: DeliveryTrace) -> None:
        self.trace = trace
        self.cursor = 0

    def mean_rate(self) -> float:
        return self.trace.mean_rate()

    def rate_at(self, t: int) -> float:
        return self.trace.mean_rate()

    def completion(self, start: int, size: int) -> int:
        n = max(self.trace.first_index_at_or_after(start), self.cursor)
        self.cursor = n + 1
        return self.trace.time_of(n)


# -- bottleneck -------------------------------------------------------------


class DroptailQueue:
    """Byte-capacity FIFO; occupancy counts the packet in service too."""

    def __init__(self, capacity_bytes: int) -> None:
        if capacity_bytes <= 0:
            raise ValueError("buffer must be positive")
        self.capacity_bytes = int(capacity_bytes)
        self.occupancy_bytes = 0
        self.drop_counter = 0
        self._pending: Deque[Tuple[int, int]] = deque()  # (completion, size)

    def drain(self, now: int) -> None:
        pending = self._pending
        while pending and pending[0][0] <= now:
            self.occupancy_bytes -= pending.popleft()[1]

    def admits(self, size: int) -> bool:
        return self.occupancy_bytes + size <= self.capacity_bytes

    def push(self, completion: int, size: int) -> None:
        self._pending.append((completion, size))
        self.occupancy_bytes += size

    def still_queued(self, now: int) -> int:
        return sum(1 for done, _ in self._pending if done > now)


class Link:
    """The shared bottleneck: random loss, droptail buffer, rate source."""

    def __init__(
        self,
        rate_source,
        capacity_bytes: int,
        loss_prob: float = 0.0,
        loss_rng: Optional[random.Random] = None,
    ) -> None:
        if not 0.0 <= loss_prob <= 1.0:
            raise ValueError("loss probability must lie in [0, 1]")
        self.rate_source = rate_source
        self.queue = DroptailQueue(capacity_bytes)
        self.loss_prob = loss_prob
        self.loss_rng = loss_rng or random.Random(0)
        self.busy_until = 0
        self.injected = 0
        self.dropped_random = 0
        self.dropped_droptail = 0

    @property
    def delivered(self) -> int:
        return self.injected - self.dropped_random - self.dropped_droptail


def enqueue(link: Link, pkt: Packet, now: int) -> Optional[Tuple[int, int]]:
    """Admit ``pkt`` at ``now``.

    Returns (service_start, service_done) or None when the packet is dropped.
    """
    if pkt.size > MSS:
        raise ValueError("packet larger than MSS")
    link.injected += 1
    if link.loss_prob > 0.0 and link.loss_rng.random() < link.loss_prob:
        link.dropped_random += 1
        return None
    q = link.queue
    q.drain(now)
    if not q.admits(pkt.size):
        link.dropped_droptail += 1
        q.drop_counter += 1
        return None
    start = now if now > link.busy_until else link.busy_until
    done = link.rate_source.completion(start, pkt.size)
    link.busy_until = done
    q.push(done, pkt.size)
    return start, done


# -- run configuration and results ---------------------------------------------


@dataclass
class FlowConfig:
    cca: str
    base_rtt: int  # ns
    start_time: int = 0
    params: dict = field(default_factory=dict)
    app_bytes: Optional[int] = None


@dataclass
class SimConfig:
    duration: int  # ns
    rate_source: object
    buffer_bytes: int
    flows: List[FlowConfig]
    loss_prob: float = 0.0
    jitter_mean: int = 0  # ns
    jitter_sd: Optional[int] = None  # ns, default mean/4
    seed: int = 0
    sample_interval: int = ms(100)
    check_conservation: bool = True


TELEMETRY_COLUMNS = (
    "time_s",
    "flow_id",
    "cca",
    "state",
    "throughput_mbps",
    "srtt_ms",
    "rtprop_est_ms",
    "btlbw_est_mbps",
    "pacing_rate_mbps",
    "cwnd_bytes",
    "inflight_bytes",
    "retx_cum",
    "queue_len_bytes",
    "probe_bw_mode",
)


@dataclass
class FlowResult:
    flow_id: int
    cca: str
    rows: List[dict]
    mean_throughput_mbps: float
    retransmission_rate: float
    mean_queuing_delay_ms: float
    p95_queuing_delay_ms: float
    bytes_received: int
    packets_sent: int
    packets_retransmitted: int
    spurious_losses: int
    rto_count: int
    mode_switches: int = 0

    def column(self, name: str) -> List:
        return [row[name] for row in self.rows]


@dataclass
class RunResult:
    flows: List[FlowResult]
    queue_series: List[Tuple[float, int]]
    link_stats: Dict[str, int]
    duration_s: float

    def flow(self, flow_id: int) -> FlowResult:
        return self.flows[flow_id]


# -- simulator ------------------------------------------------------------------

_START, _WAKE, _RX, _ACK, _RTO, _TICK = range(6)


def component_rng(seed: int, name: str) -> random.Random:
    """Independent, reproducible stream for one stochastic component."""
    return random.Random(f"{seed}:{name}")


class Simulator:
    def __init__(self, cfg: SimConfig) -> None:
        if cfg.duration < 0:
            raise ValueError("duration must be non-negative")
        if not cfg.flows:
            raise ValueError("scenario has no flows")
        if cfg.sample_interval <= 0:
            raise ValueError("sample interval must be positive")
        if cfg.jitter_mean < 0:
            raise ValueError("jitter mean must be non-negative")
        self.cfg = cfg
        self.link = Link(
            cfg.rate_source, cfg.buffer_bytes, cfg.loss_prob, component_rng(cfg.seed, "loss")
        )
        self.jitter_rng = component_rng(cfg.seed, "jitter")
        self.jitter_mean = cfg.jitter_mean
        self.jitter_sd = cfg.jitter_sd if cfg.jitter_sd is not None else cfg.jitter_mean / 4
        self.flows: List[TransportFlow] = []
        self.receivers: List[Receiver] = []
        for i, fc in enumerate(cfg.flows):
            if fc.base_rtt <= 0:
                raise ValueError("base RTT must be positive")
            if fc.start_time < 0:
                raise ValueError("flow start time must be non-negative")
            cc = make_cca(fc.cca, rng=component_rng(cfg.seed, f"cca{i}"), **fc.params)
            self.flows.append(TransportFlow(i, cc, MSS, fc.app_bytes))
            self.receivers.append(Receiver(i))
        n_bins = max(1, -(-cfg.duration // cfg.sample_interval))
        self.rx_bins = [[0] * n_bins for _ in cfg.flows]
        self.sojourn: List[List[int]] = [[] for _ in cfg.flows]
        self.active = [False] * len(cfg.flows)
        self._heap: list = []
        self._seq = 0
        self._wake_at: List[Optional[int]] = [None] * len(cfg.flows)
        self._rto_at: List[Optional[int]] = [None] * len(cfg.flows)
        self._queue_points: List[Tuple[float, int]] = []

    def _push(self, t: int, kind: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, payload))

    def _jitter(self) -> int:
        if self.jitter_mean <= 0:
            return 0
        return max(0, int(self.jitter_rng.gauss(self.jitter_mean, self.jitter_sd)))

    # -- packet path

    def _receive(self, fid: int, pkt: Packet, t_rx: int) -> None:
        ack, is_new = self.receivers[fid].receive(pkt)
        if is_new:
            b = t_rx // self.cfg.sample_interval
            bins = self.rx_bins[fid]
            if b < len(bins):
                bins[b] += pkt.size
        base = self.cfg.flows[fid].base_rtt
        self._push(t_rx + base - base // 2, _ACK, ack)

    def _send(self, fid: int, now: int) -> None:
        flow = self.flows[fid]
        sent = flow.maybe_send(now)
        if sent:
            half = self.cfg.flows[fid].base_rtt // 2
            jittered = self.jitter_mean > 0
            sojourn = self.sojourn[fid]
            for pkt in sent:
                res = enqueue(self.link, pkt, now)
                if res is None:
                    continue
                start, done = res
                sojourn.append(start - now)
                if jittered:
                    self._push(done + half + self._jitter(), _RX, pkt)
                else:
                    # FIFO all the way: the receiver can be updated right away
                    self._receive(fid, pkt, done + half)
        self._arm_timers(fid, now)

    def _arm_timers(self, fid: int, now: int) -> None:
        flow = self.flows[fid]
        if flow.has_data() and flow.next_send_time > now and flow.inflight + MSS <= flow.cwnd:
            t = flow.next_send_time
            pending = self._wake_at[fid]
            if pending is None or pending > t or pending < now:
                self._wake_at[fid] = t
                self._push(t, _WAKE, fid)
        deadline = flow.rto_deadline
        if deadline is not None:
            pending = self._rto_at[fid]
            if pending is None or pending < now:
                self._rto_at[fid] = deadline
                self._push(deadline, _RTO, fid)

    # -- main loop

    def run(self) -> RunResult:
        cfg = self.cfg
        end = cfg.duration
        for i, fc in enumerate(cfg.flows):
            if fc.start_time <= end:
                self._push(fc.start_time, _START, i)
        tick = cfg.sample_interval
        rows: List[List[dict]] = [[] for _ in cfg.flows]
        if end >= tick:
            self._push(tick, _TICK, None)
        heap = self._heap
        flows = self.flows
        pop = heapq.heappop
        while heap:
            t, _, kind, payload = heap[0]
            if t > end:
                break
            pop(heap)
            if kind == _ACK:
                fid = payload.flow_id
                flows[fid].on_ack(payload, t)
                self._send(fid, t)
            elif kind == _WAKE:
                if self._wake_at[payload] == t:
                    self._wake_at[payload] = None
                self._send(payload, t)
            elif kind == _RX:
                self._receive(payload.flow_id, payload, t)
            elif kind == _RTO:
                flow = flows[payload]
                if self._rto_at[payload] == t:
                    self._rto_at[payload] = None
                deadline = flow.rto_deadline
                if deadline is not None and deadline <= t:
                    flow.on_rto(t)
                self._send(payload, t)
            elif kind == _START:
                self.active[payload] = True
                self.flows[payload].cc.on_flow_start(t, cfg.flows[payload].base_rtt)
                self._send(payload, t)
            else:
                self._sample(t, rows)
                if t + tick <= end:
                    self._push(t + tick, _TICK, None)
        self.link.queue.drain(end)
        if cfg.check_conservation:
            for flow in flows:
                flow.check_conservation()
        return self._finish(rows)

    def _sample(self, t: int, rows: List[List[dict]]) -> None:
        q = self.link.queue
        q.drain(t)
        self._queue_points.append((t / NS_PER_S, q.occupancy_bytes))
        for fid, flow in enumerate(self.flows):
            if not self.active[fid]:
                continue
            tel = flow.cc.telemetry()
            rtprop = tel.get("rtprop_est")
            btlbw = tel.get("btlbw_est")
            row = {
                "time_s": round(t / NS_PER_S, 6),
                "flow_id": fid,
                "cca": self.cfg.flows[fid].cca,
                "state": tel.get("state", ""),
                "throughput_mbps": 0.0,
                "srtt_ms": round(to_ms(flow.rtt.srtt), 3) if flow.rtt.srtt else None,
                "rtprop_est_ms": round(to_ms(rtprop), 3) if rtprop else None,
                "btlbw_est_mbps": round(mbps(btlbw), 4) if btlbw else None,
                "pacing_rate_mbps": round(mbps(flow.cc.pacing_rate), 4),
                "cwnd_bytes": int(flow.cc.cwnd),
                "inflight_bytes": flow.inflight,
                "retx_cum": flow.packets_retransmitted,
                "queue_len_bytes": q.occupancy_bytes,
                "probe_bw_mode": tel.get("probe_bw_mode", ""),
                # extras kept in memory only
                "round_count": flow.round_count,
                "btlbw_bps": btlbw,
                "telemetry": tel,
            }
            rows[fid].append(row)

    def _finish(self, rows) -> RunResult:
        cfg = self.cfg
        tick = cfg.sample_interval
        results = []
        for fid, fc in enumerate(cfg.flows):
            bins = self.rx_bins[fid]
            for row in rows[fid]:
                b = int(round(row["time_s"] * NS_PER_S)) // tick - 1
                if 0 <= b < len(bins):
                    row["throughput_mbps"] = round(mbps(bins[b] * NS_PER_S / tick), 4)
            flow = self.flows[fid]
            active = max(cfg.duration - fc.start_time, 0)
            received = sum(bins)  # unique bytes that reached the receiver before the end
            mean_tput = mbps(received * NS_PER_S / active) if active > 0 else 0.0
            soj = self.sojourn[fid]
            if soj:
                arr = np.asarray(soj, dtype=np.float64) / NS_PER_MS
                mean_q = float(arr.mean())
                p95_q = float(np.percentile(arr, 95))
            else:
                mean_q = p95_q = 0.0
            results.append(
                FlowResult(
                    flow_id=fid,
                    cca=fc.cca,
                    rows=rows[fid],
                    mean_throughput_mbps=mean_tput,
                    retransmission_rate=flow.retransmission_rate,
                    mean_queuing_delay_ms=mean_q,
                    p95_queuing_delay_ms=p95_q,
                    bytes_received=received,
                    packets_sent=flow.packets_sent,
                    packets_retransmitted=flow.packets_retransmitted,
                    spurious_losses=flow.spurious_losses,
                    rto_count=flow.rto_count,
                    mode_switches=getattr(flow.cc, "mode_switches", 0),
                )
            )
        link = self.link
        stats = {
            "injected": link.injected,
            "delivered": link.injected
            - link.dropped_random
            - link.dropped_droptail
            - link.queue.still_queued(cfg.duration),
            "dropped_random": link.dropped_random,
            "dropped_droptail": link.dropped_droptail,
            "still_queued": link.queue.still_queued(cfg.duration),
        }
        return RunResult(results, list(self._queue_points), stats, cfg.duration / NS_PER_S)


def simulate(cfg: SimConfig) -> RunResult:
    return Simulator(cfg).run()

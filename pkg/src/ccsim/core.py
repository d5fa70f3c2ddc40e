"""Time/rate primitives, windowed extremum filters and RTT bookkeeping.

All times are integer nanoseconds of simulated time.  Rates are floats in
bytes per second.
"""

from __future__ import annotations

import operator
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Optional, Tuple

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000
MSS = 1500


def ms(value: float) -> int:
    """Milliseconds -> simulated nanoseconds."""
    return int(round(value * NS_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * NS_PER_S))


def to_ms(t: int) -> float:
    return t / NS_PER_MS


def to_seconds(t: int) -> float:
    return t / NS_PER_S


def mbps(rate_bytes_per_s: float) -> float:
    return rate_bytes_per_s * 8 / 1e6


def from_mbps(rate_mbps: float) -> float:
    """Mbit/s -> bytes/s."""
    return rate_mbps * 1e6 / 8


def advance(t: int, delta: int) -> int:
    """Checked time addition: refuses to move the clock backwards."""
    if not isinstance(t, int) or not isinstance(delta, int):
        raise TypeError("simulated time must be integer nanoseconds")
    if delta < 0:
        raise ValueError(f"negative time step {delta}")
    return t + delta


class WindowedFilter:
    """Running max (or min) of samples over a sliding window.

    The window is expressed in the same unit as the stamps passed to
    :meth:`update` (nanoseconds, round counts or probe-cycle counts).  An
    entry stamped ``s`` is live while ``now - s < window``.

    Entries form a monotone dominance frontier: an incoming sample evicts
    every stored entry it dominates, so ``current()`` is always the exact
    extremum over live samples.  The newest raw sample is always the tail.
    """

    def __init__(self, mode: str, window: int) -> None:
        if mode not in ("max", "min"):
            raise ValueError(f"unknown filter mode {mode!r}")
        if window < 0:
            raise ValueError("window must be non-negative")
        self.mode = mode
        self.window = window
        self._dominates: Callable[[float, float], bool] = (
            operator.ge if mode == "max" else operator.le
        )
        self.entries: Deque[Tuple[float, int]] = deque()
        self.latest: Optional[Tuple[float, int]] = None

    def __len__(self) -> int:
        return len(self.entries)

    def reset(self, value: Optional[float] = None, now: int = 0) -> None:
        self.entries.clear()
        self.latest = None
        if value is not None:
            self.update(value, now)

    def _evict(self, now: int) -> None:
        entries = self.entries
        while len(entries) > 1 and now - entries[0][1] >= self.window:
            entries.popleft()
        if entries and now - entries[0][1] >= self.window:
            # everything expired: fall back to the freshest raw sample
            entries.popleft()
            if self.latest is not None:
                entries.append(self.latest)

    def update(self, sample: float, now: int) -> float:
        if self.latest is not None and now < self.latest[1]:
            raise ValueError("filter stamps must be non-decreasing")
        self.latest = (sample, now)
        entries = self.entries
        if self.window == 0:
            entries.clear()
            entries.append(self.latest)
            return sample
        dominates = self._dominates
        while entries and dominates(sample, entries[-1][0]):
            entries.pop()
        entries.append(self.latest)
        self._evict(now)
        return entries[0][0]

    def expire(self, now: int) -> Optional[float]:
        """Age out entries relative to ``now`` without adding a sample."""
        if self.entries:
            self._evict(now)
        return self.current()

    def current(self) -> Optional[float]:
        return self.entries[0][0] if self.entries else None

    def expire_oldest(self) -> Optional[float]:
        """Discard the current extremum's epoch; the next-best entry takes over.

        Every retained entry stamped with the same epoch as the best one goes
        with it, so one call always moves the estimate to a later epoch.  When
        nothing is left, the most recent raw sample becomes the estimate.
        No-op on an empty filter.
        """
        entries = self.entries
        if not entries:
            return None
        epoch = entries[0][1]
        while entries and entries[0][1] == epoch:
            entries.popleft()
        if not entries and self.latest is not None:
            entries.append(self.latest)
        return entries[0][0]


def filter_update(filt: WindowedFilter, sample: float, now: int) -> float:
    return filt.update(sample, now)


def filter_expire_oldest(filt: WindowedFilter) -> Optional[float]:
    return filt.expire_oldest()


@dataclass
class RttEstimator:
    """SRTT/RTTVAR smoothing plus per-round and windowed RTT minima."""

    min_rtt_window: int = 10 * NS_PER_S
    latest_rtt: Optional[int] = None
    srtt: Optional[float] = None
    rttvar: Optional[float] = None
    minrtt_curr_round: Optional[int] = None
    minrtt_prev_round: Optional[int] = None
    min_filter: WindowedFilter = field(init=False)
    samples: int = 0

    def __post_init__(self) -> None:
        self.min_filter = WindowedFilter("min", self.min_rtt_window)

    def on_rtt_sample(self, rtt: int, now: int, round_start: bool = False) -> bool:
        """Fold in one RTT sample; returns False when the sample is rejected."""
        if rtt <= 0:
            return False
        self.latest_rtt = rtt
        if self.srtt is None:
            self.srtt = float(rtt)
            self.rttvar = rtt / 2
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - rtt)
            self.srtt = 0.875 * self.srtt + 0.125 * rtt
        self.min_filter.update(rtt, now)
        if round_start:
            self.roll_round()
            self.minrtt_curr_round = rtt
        elif self.minrtt_curr_round is None or rtt < self.minrtt_curr_round:
            self.minrtt_curr_round = rtt
        self.samples += 1
        return True

    def roll_round(self) -> None:
        self.minrtt_prev_round = self.minrtt_curr_round
        self.minrtt_curr_round = None

    @property
    def min_rtt(self) -> Optional[int]:
        value = self.min_filter.current()
        return None if value is None else int(value)


def on_rtt_sample(est: RttEstimator, rtt: int, now: int, round_start: bool = False) -> RttEstimator:
    est.on_rtt_sample(rtt, now, round_start)
    return est


@dataclass
class RateSample:
    """One delivery-rate measurement taken on an ACK."""

    delivery_rate: float  # bytes/s
    delivered: int  # bytes delivered over the interval
    interval: int  # ns
    is_app_limited: bool
    tx_in_flight: int  # inflight when the sampled packet was sent
    lost: int  # bytes declared lost over the interval
    prior_delivered: int


class BandwidthSampler:
    """Delivery-rate sampling in the style of BBR's per-packet snapshots.

    Each transmitted packet records the connection's delivery state; when it
    is acknowledged the bytes delivered since then, divided by the longer of
    the send and ACK intervals, give one rate sample.
    """

    def __init__(self) -> None:
        self.delivered = 0
        self.delivered_time = 0
        self.first_sent_time = 0
        self.lost = 0
        self.app_limited_until = 0  # delivered-count mark, 0 == not limited
        self._best = None

    def on_send(self, pkt, now: int, inflight_before: int) -> None:
        if inflight_before == 0:
            self.first_sent_time = now
            self.delivered_time = now
        pkt.delivered = self.delivered
        pkt.delivered_time = self.delivered_time
        pkt.first_sent_time = self.first_sent_time
        pkt.lost_at_send = self.lost
        pkt.app_limited = self.app_limited_until > 0

    def mark_app_limited(self, inflight: int) -> None:
        self.app_limited_until = max(self.delivered + inflight, 1)

    def on_delivered(self, pkt, now: int) -> None:
        self.delivered += pkt.size
        self.delivered_time = now
        best = self._best
        if best is None or pkt.delivered > best.delivered or (
            pkt.delivered == best.delivered and pkt.sent_time > best.sent_time
        ):
            self._best = pkt
            # a late, reordered packet must not rewind the send interval
            self.first_sent_time = max(self.first_sent_time, pkt.sent_time)

    def on_lost(self, size: int) -> None:
        self.lost += size

    def take_sample(self, now: int, min_rtt: Optional[int]) -> Optional[RateSample]:
        pkt = self._best
        self._best = None
        if pkt is None:
            return None
        if self.app_limited_until and self.delivered > self.app_limited_until:
            self.app_limited_until = 0
        send_elapsed = pkt.sent_time - pkt.first_sent_time
        ack_elapsed = now - pkt.delivered_time
        interval = max(send_elapsed, ack_elapsed)
        delivered = self.delivered - pkt.delivered
        if interval <= 0 or (min_rtt is not None and interval < min_rtt):
            return None
        return RateSample(
            delivery_rate=delivered * NS_PER_S / interval,
            delivered=delivered,
            interval=interval,
            is_app_limited=pkt.app_limited,
            tx_in_flight=pkt.inflight_at_send,
            lost=self.lost - pkt.lost_at_send,
            prior_delivered=pkt.delivered,
        )

"""BBR (version 1): model-based pacing from a bottleneck-bandwidth and RTprop estimate."""

from __future__ import annotations

import math
from typing import Optional, Tuple

from .cca import INITIAL_CWND_PKTS, CongestionControl
from .core import MSS, NS_PER_S, WindowedFilter, ms, seconds

STARTUP = "Startup"
DRAIN = "Drain"
PROBE_BW = "ProbeBW"
PROBE_RTT = "ProbeRTT"

STARTUP_GAIN = 2 / math.log(2)
DRAIN_GAIN = math.log(2) / 2
PROBE_BW_GAINS = (1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
CWND_GAIN = 2.0
BTLBW_WINDOW_ROUNDS = 10
RTPROP_WINDOW = seconds(10)
PROBE_RTT_DURATION = ms(200)
MIN_PIPE_PKTS = 4
FULL_BW_THRESH = 1.25
FULL_BW_COUNT = 3
PACING_FLOOR = MSS * 10.0  # bytes/s, keeps a stalled estimate from freezing the flow


def full_pipe_check(full_bw: float, count: int, btlbw: float) -> Tuple[float, int, bool]:
    """One round of Startup plateau detection.

    Returns the updated (full_bw, stalled_rounds, pipe_filled).  Growth of at
    least 25% resets the stall counter; three stalled rounds fill the pipe.
    """
    if btlbw >= full_bw * FULL_BW_THRESH:
        return btlbw, 0, False
    count += 1
    return full_bw, count, count >= FULL_BW_COUNT


class Bbr1(CongestionControl):
    name = "bbr"

    def __init__(
        self,
        mss: int = MSS,
        rng=None,
        rtprop_window: int = RTPROP_WINDOW,
        btlbw_window: int = BTLBW_WINDOW_ROUNDS,
        randomize_cycle_start: bool = True,
    ) -> None:
        super().__init__(mss, rng)
        self.state = STARTUP
        self.pacing_gain = STARTUP_GAIN
        self.cwnd_gain = STARTUP_GAIN
        self.btlbw_filter = WindowedFilter("max", btlbw_window)
        self.rtprop: Optional[int] = None
        self.rtprop_stamp = 0
        self.rtprop_window = rtprop_window
        self.filled_pipe = False
        self.full_bw = 0.0
        self.full_bw_count = 0
        self.cycle_index = 0
        self.cycle_stamp = 0
        self.randomize_cycle_start = randomize_cycle_start
        self.probe_rtt_done_stamp: Optional[int] = None
        self.probe_rtt_round_mark = 0
        self.probe_rtt_round_done = False
        self.prior_cwnd = 0
        self.round_count = 0
        self.min_pipe_cwnd = MIN_PIPE_PKTS * mss
        self.pacing_rate = STARTUP_GAIN * self.cwnd * NS_PER_S / ms(1)

    def on_flow_start(self, now: int, handshake_rtt: Optional[int]) -> None:
        if handshake_rtt:
            self.pacing_rate = STARTUP_GAIN * self.cwnd * NS_PER_S / handshake_rtt

    def on_undo(self, now: int, flow) -> None:
        # the slowdown was spurious, so Startup's plateau count restarts
        self.full_bw = 0.0
        self.full_bw_count = 0

    # -- model -----------------------------------------------------------

    @property
    def btlbw(self) -> float:
        value = self.btlbw_filter.current()
        return value if value is not None else 0.0

    def bdp(self, gain: float = 1.0) -> Optional[float]:
        """Bytes: gain * btlbw * rtprop, or None before the model exists."""
        if self.rtprop is None or self.btlbw <= 0:
            return None
        return gain * self.btlbw * self.rtprop / NS_PER_S

    def _btlbw_stamp(self) -> int:
        return self.round_count

    def _update_btlbw(self, ack) -> None:
        rs = ack.rate_sample
        if rs is None:
            return
        if rs.delivery_rate >= self.btlbw or not rs.is_app_limited:
            self.btlbw_filter.update(rs.delivery_rate, self._btlbw_stamp())

    def _update_rtprop(self, ack) -> bool:
        now = ack.now
        expired = self.rtprop is not None and now > self.rtprop_stamp + self.rtprop_window
        sample = ack.rtt_sample
        if sample is not None and (self.rtprop is None or sample <= self.rtprop or expired):
            self.rtprop = sample
            self.rtprop_stamp = now
        return expired

    # -- state machine ----------------------------------------------------

    def _enter_startup(self) -> None:
        self.state = STARTUP
        self.pacing_gain = STARTUP_GAIN
        self.cwnd_gain = STARTUP_GAIN

    def _enter_drain(self, ack, flow) -> None:
        self.state = DRAIN
        self.pacing_gain = DRAIN_GAIN
        self.cwnd_gain = STARTUP_GAIN

    def _enter_probe_bw(self, ack, flow) -> None:
        self.state = PROBE_BW
        self.cwnd_gain = CWND_GAIN
        if self.randomize_cycle_start and self.rng is not None:
            # any phase but the draining one, as Linux does
            idx = self.rng.randrange(len(PROBE_BW_GAINS) - 1)
            self.cycle_index = idx + 1 if idx >= 1 else idx
        else:
            self.cycle_index = 0
        self.cycle_stamp = ack.now
        self.pacing_gain = PROBE_BW_GAINS[self.cycle_index]

    def _check_full_pipe(self, ack) -> None:
        if self.filled_pipe or not ack.round_start:
            return
        rs = ack.rate_sample
        if rs is not None and rs.is_app_limited:
            return
        self.full_bw, self.full_bw_count, self.filled_pipe = full_pipe_check(
            self.full_bw, self.full_bw_count, self.btlbw
        )

    def _update_cycle(self, ack, flow) -> None:
        if self.rtprop is not None and ack.now - self.cycle_stamp >= self.rtprop:
            self.cycle_index = (self.cycle_index + 1) % len(PROBE_BW_GAINS)
            self.cycle_stamp = ack.now
            self.pacing_gain = PROBE_BW_GAINS[self.cycle_index]

    def _probe_rtt_cwnd(self) -> float:
        return self.min_pipe_cwnd

    def _enter_probe_rtt(self, ack, flow) -> None:
        self.prior_cwnd = self.cwnd if self.state != PROBE_RTT else self.prior_cwnd
        self.state = PROBE_RTT
        self.pacing_gain = 1.0
        self.cwnd_gain = 1.0
        self.probe_rtt_done_stamp = None

    def _on_probe_rtt_done(self, now: int) -> None:
        self.rtprop_stamp = now

    def _exit_probe_rtt(self, ack, flow) -> None:
        if self.filled_pipe:
            self._enter_probe_bw(ack, flow)
        else:
            self._enter_startup()

    def _handle_probe_rtt(self, ack, flow) -> None:
        now = ack.now
        if self.probe_rtt_done_stamp is None:
            if flow.inflight <= self._probe_rtt_cwnd():
                self.probe_rtt_done_stamp = now + PROBE_RTT_DURATION
                self.probe_rtt_round_done = False
                self.probe_rtt_round_mark = flow.sampler.delivered
            return
        rs = ack.rate_sample
        if rs is not None and rs.prior_delivered >= self.probe_rtt_round_mark:
            self.probe_rtt_round_done = True
        if self.probe_rtt_round_done and now >= self.probe_rtt_done_stamp:
            self._on_probe_rtt_done(now)
            self.cwnd = max(self.cwnd, self.prior_cwnd)
            self._exit_probe_rtt(ack, flow)

    def _update_state(self, ack, flow, rtprop_expired: bool) -> None:
        self._check_full_pipe(ack)
        if self.state == STARTUP and self.filled_pipe:
            self._enter_drain(ack, flow)
        if self.state == DRAIN:
            bdp = self.bdp()
            if bdp is not None and flow.inflight <= bdp:
                self._enter_probe_bw(ack, flow)
        elif self.state == PROBE_BW:
            self._update_cycle(ack, flow)
        if rtprop_expired and self.state != PROBE_RTT:
            self._enter_probe_rtt(ack, flow)
        if self.state == PROBE_RTT:
            self._handle_probe_rtt(ack, flow)

    # -- outputs ----------------------------------------------------------

    def _pacing_bw(self) -> float:
        return self.btlbw

    def _cap_rate(self, rate: float) -> float:
        return rate

    def _set_pacing_rate(self) -> None:
        bw = self._pacing_bw()
        if bw <= 0:
            return
        rate = max(self._cap_rate(self.pacing_gain * bw), PACING_FLOOR)
        if self.filled_pipe or rate > self.pacing_rate:
            self.pacing_rate = rate

    def _bound_cwnd(self, cwnd: float, flow) -> float:
        return cwnd

    def _set_cwnd(self, ack, flow) -> None:
        acked = ack.newly_acked_bytes
        target = self.bdp(self.cwnd_gain)
        cwnd = float(self.cwnd)
        if target is None:
            cwnd += acked
        elif self.filled_pipe:
            cwnd = min(cwnd + acked, target)
        elif cwnd < target or flow.sampler.delivered < INITIAL_CWND_PKTS * self.mss:
            cwnd += acked
        cwnd = self._bound_cwnd(cwnd, flow)
        cwnd = max(cwnd, self.min_pipe_cwnd)
        if self.state == PROBE_RTT:
            cwnd = min(cwnd, self._probe_rtt_cwnd())
        self.cwnd = int(cwnd)

    def on_ack(self, ack, flow) -> None:
        self.round_count = ack.round_count
        self._update_btlbw(ack)
        expired = self._update_rtprop(ack)
        self._update_state(ack, flow, expired)
        self._set_pacing_rate()
        self._set_cwnd(ack, flow)

    @property
    def state_name(self) -> str:
        return self.state

    def telemetry(self) -> dict:
        return {
            "state": self.state,
            "pacing_gain": self.pacing_gain,
            "btlbw_est": self.btlbw,
            "rtprop_est": self.rtprop,
            "probe_bw_mode": "",
        }

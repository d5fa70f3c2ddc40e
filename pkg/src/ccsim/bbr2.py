"""BBRv2: BBR with loss-driven inflight/bandwidth bounds and a four-phase ProbeBW."""

from __future__ import annotations

import math
from typing import Optional, Tuple

from .bbr1 import (
    DRAIN,
    PROBE_RTT,
    STARTUP,
    Bbr1,
    full_pipe_check,
)
from .core import MSS, NS_PER_S, seconds

PROBE_CRUISE = "ProbeCruise"
PROBE_REFILL = "ProbeRefill"
PROBE_UP = "ProbeUp"
PROBE_DOWN = "ProbeDown"
PROBE_BW_STATES = (PROBE_CRUISE, PROBE_REFILL, PROBE_UP, PROBE_DOWN)

UNSET = math.inf

ALPHA = 0.02
BETA = 0.3
HEADROOM = 0.85
PROBE_UP_GAIN = 1.25
PROBE_DOWN_GAIN = 0.75
CWND_GAIN = 2.0
RTPROP_WINDOW = seconds(5)  # ProbeRTT scheduling
MIN_RTT_WINDOW = seconds(10)  # the model's RTprop
PROBE_RTT_CWND_GAIN = 0.5
STARTUP_FULL_LOSS_COUNT = 8
BTLBW_WINDOW_CYCLES = 2


def lo_bounds_on_loss(
    inflight_lo: float,
    bw_lo: float,
    inflight_now: float,
    bw_now: float,
    beta: float,
    cwnd: float,
    btlbw: float,
) -> Tuple[float, float]:
    """Cut the short-term lower bounds after a lossy round.

    Unset bounds are first seeded from the current cwnd and bandwidth
    estimate; each bound then shrinks by ``beta`` but never below what the
    last round actually achieved.
    """
    if inflight_lo == UNSET:
        inflight_lo = cwnd
    if bw_lo == UNSET:
        bw_lo = btlbw
    return (
        max((1 - beta) * inflight_lo, inflight_now),
        max((1 - beta) * bw_lo, bw_now),
    )


def draw_cruise_wait(rng) -> int:
    """The random part of the probe timer, uniform in [2, 3] s."""
    return int(rng.uniform(2.0, 3.0) * NS_PER_S)


def cruise_dwell(wait: int, target_bytes: float, rtt: int, mss: int = MSS) -> int:
    """Time to stay in ProbeCruise: min(wait, target-in-packets round trips).

    ``target_bytes`` is the flow's current target inflight, min(BDP, cwnd), so a
    flow squeezed by loss probes again about as soon as Reno would regrow.
    """
    return int(min(wait, target_bytes / mss * rtt))


class Bbr2(Bbr1):
    name = "bbr2"

    def __init__(
        self,
        mss: int = MSS,
        rng=None,
        alpha: float = ALPHA,
        beta: float = BETA,
        headroom: float = HEADROOM,
        rtprop_window: int = RTPROP_WINDOW,
        min_rtt_window: int = MIN_RTT_WINDOW,
        probe_rtt_cwnd_gain: float = PROBE_RTT_CWND_GAIN,
        startup_full_loss_count: int = STARTUP_FULL_LOSS_COUNT,
    ) -> None:
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 <= beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        super().__init__(
            mss,
            rng,
            rtprop_window=rtprop_window,
            btlbw_window=BTLBW_WINDOW_CYCLES,
            randomize_cycle_start=False,
        )
        if self.rng is None:
            import random

            self.rng = random.Random(0)
        self.alpha = alpha
        self.min_rtt_window = min_rtt_window
        self.probe_rtt_min: Optional[int] = None
        self.probe_rtt_min_stamp = 0
        self.beta = beta
        self.headroom = headroom
        self.probe_rtt_cwnd_gain = probe_rtt_cwnd_gain
        self.startup_full_loss_count = startup_full_loss_count
        self.inflight_hi = UNSET
        self.inflight_lo = UNSET
        self.bw_lo = UNSET
        self.cycle_count = 0
        self.cruise_start = 0
        self.cruise_wait = 0  # random part of the probe timer, ns
        self.probe_up_start = 0
        self.probe_down_start = 0
        self._now = 0
        self.probe_up_rounds = 0
        self.refill_round = 0
        self.probe_feedback_round = -1
        self.probe_samples = False  # a probe's loss verdict is still pending
        self.undo_inflight_hi = UNSET
        self._bw_round_max = 0.0
        self.probe_bw_states = PROBE_BW_STATES

    # -- model -----------------------------------------------------------

    def _btlbw_stamp(self) -> int:
        return self.cycle_count

    def _update_btlbw(self, ack) -> None:
        rs = ack.rate_sample
        if rs is not None and rs.delivery_rate > self._bw_round_max:
            self._bw_round_max = rs.delivery_rate
        super()._update_btlbw(ack)

    def advance_cycle(self) -> None:
        """Start a new probe cycle; the two-cycle bandwidth window slides."""
        self.cycle_count += 1
        self.btlbw_filter.expire(self.cycle_count)

    def reset_lower_bounds(self) -> None:
        self.inflight_lo = UNSET
        self.bw_lo = UNSET

    def _set_inflight_hi_from_loss(self, value: float) -> None:
        self.undo_inflight_hi = self.inflight_hi
        self.inflight_hi = value
        self.probe_samples = False

    def on_undo(self, now: int, flow) -> None:
        super().on_undo(now, flow)
        self.reset_lower_bounds()
        self.inflight_hi = max(self.inflight_hi, self.undo_inflight_hi)

    def on_loss_round(self, inflight_now: float, bw_now: float) -> None:
        self.inflight_lo, self.bw_lo = lo_bounds_on_loss(
            self.inflight_lo, self.bw_lo, inflight_now, bw_now, self.beta, self.cwnd, self.btlbw
        )

    def _update_rtprop(self, ack) -> bool:
        """Two minima: a short one schedules ProbeRTT, a longer one is the model.

        When the long window lapses it takes the short window's minimum rather
        than a single fresh sample, so a standing queue from another flow does
        not immediately become the propagation-delay estimate.
        """
        now = ack.now
        sample = ack.rtt_sample
        probe_expired = (
            self.probe_rtt_min is not None and now > self.probe_rtt_min_stamp + self.rtprop_window
        )
        if sample is not None and (
            self.probe_rtt_min is None or sample < self.probe_rtt_min or probe_expired
        ):
            self.probe_rtt_min = sample
            self.probe_rtt_min_stamp = now
        model_expired = self.rtprop is not None and now > self.rtprop_stamp + self.min_rtt_window
        if self.probe_rtt_min is not None and (
            self.rtprop is None or self.probe_rtt_min <= self.rtprop or model_expired
        ):
            self.rtprop = self.probe_rtt_min
            self.rtprop_stamp = self.probe_rtt_min_stamp
        return probe_expired

    def _on_probe_rtt_done(self, now: int) -> None:
        self.probe_rtt_min_stamp = now

    # -- transitions -------------------------------------------------------

    def _set_phase(self, state: str, gain: float) -> None:
        self.state = state
        self.pacing_gain = gain
        self.cwnd_gain = CWND_GAIN

    def _enter_probe_bw(self, ack, flow) -> None:
        self._enter_probe_down(ack, flow)

    def _enter_probe_down(self, ack, flow, gain: float = PROBE_DOWN_GAIN) -> None:
        self._set_phase(PROBE_DOWN, gain)
        self.cruise_wait = draw_cruise_wait(self.rng)
        self.probe_down_start = self._now

    def _probe_down_target(self) -> float:
        bdp = self.bdp() or 0.0
        return min(bdp, self.headroom * self.inflight_hi)

    def cruise_time(self, flow) -> int:
        target = min(self.bdp() or 0.0, self.cwnd)
        rtt = self.rtprop or int(flow.rtt.srtt or 0)
        return cruise_dwell(self.cruise_wait, target, rtt, self.mss)

    def _enter_cruise(self, ack, flow) -> None:
        self._set_phase(PROBE_CRUISE, 1.0)
        self.cruise_start = ack.now
        self.probe_samples = False

    def _enter_refill(self, ack, flow) -> None:
        self._set_phase(PROBE_REFILL, 1.0)
        self.reset_lower_bounds()
        self.refill_round = ack.round_count
        self.probe_samples = True

    def _enter_probe_up(self, ack, flow) -> None:
        self._set_phase(PROBE_UP, PROBE_UP_GAIN)
        self.reset_lower_bounds()
        self.probe_up_start = ack.now
        self.probe_up_rounds = 0
        self.probe_samples = True

    def _exit_probe_up(self, ack, flow, lossy: bool) -> None:
        self.probe_feedback_round = ack.round_count + 1
        self._enter_probe_down(ack, flow)

    def _restart_from_startup(self) -> None:
        self._enter_startup()
        self.filled_pipe = False
        self.full_bw = 0.0
        self.full_bw_count = 0
        self.inflight_hi = UNSET
        self.reset_lower_bounds()

    def _probe_rtt_cwnd(self) -> float:
        bdp = self.bdp() or 0.0
        return max(self.probe_rtt_cwnd_gain * bdp, self.min_pipe_cwnd)

    def _exit_probe_rtt(self, ack, flow) -> None:
        self.reset_lower_bounds()
        if self.filled_pipe:
            self._enter_probe_down(ack, flow)
            self._enter_cruise(ack, flow)
        else:
            self._enter_startup()

    # -- per-round and per-ACK logic -------------------------------------------

    def _excess_loss(self, ack) -> bool:
        return ack.prev_round_lost > 0 and ack.prev_round_loss_rate > self.alpha

    def _on_round_end(self, ack, flow) -> None:
        bw_latest = self._bw_round_max
        self._bw_round_max = 0.0
        lossy = self._excess_loss(ack)
        if self.state == STARTUP and not self.filled_pipe:
            if ack.prev_round_lost >= self.startup_full_loss_count and lossy:
                self.filled_pipe = True
                self._set_inflight_hi_from_loss(max(self.bdp() or 0.0, ack.prev_round_delivered_bytes))
        if lossy and self.probe_samples and self.state in (PROBE_UP, PROBE_DOWN):
            # the bound is what the lossy round actually put on the wire;
            # a probe's own losses may surface one round into ProbeDown
            self._set_inflight_hi_from_loss(
                ack.prev_round_delivered_bytes + ack.prev_round_lost * self.mss
            )
            if self.state == PROBE_UP:
                self._exit_probe_up(ack, flow, lossy=True)
                return
        if ack.prev_round_lost > 0 and self.state in (PROBE_CRUISE, PROBE_DOWN):
            self.on_loss_round(ack.prev_round_delivered_bytes, bw_latest)

    def _update_probe_cycle(self, ack, flow) -> None:
        now = ack.now
        state = self.state
        if state == PROBE_DOWN:
            if flow.inflight <= self._probe_down_target():
                self.advance_cycle()
                self._enter_cruise(ack, flow)
            elif now - self.probe_down_start >= self.cruise_time(flow):
                # jitter can keep inflight above the BDP at any pacing rate;
                # the probe timer still runs, so the next probe is not lost
                self.advance_cycle()
                self._on_cruise_end(ack, flow)
        elif state == PROBE_CRUISE:
            if now - self.cruise_start >= self.cruise_time(flow):
                self._on_cruise_end(ack, flow)
        elif state == PROBE_REFILL:
            if ack.round_count > self.refill_round:
                self._enter_probe_up(ack, flow)
        elif state == PROBE_UP:
            bdp = self.bdp()
            if (
                bdp is not None
                and self.rtprop is not None
                and ack.prior_inflight >= PROBE_UP_GAIN * bdp
                and now - self.probe_up_start >= self.rtprop
            ):
                self._exit_probe_up(ack, flow, lossy=False)

    def _on_cruise_end(self, ack, flow) -> None:
        self._enter_refill(ack, flow)

    def _update_state(self, ack, flow, rtprop_expired: bool) -> None:
        self._now = ack.now
        if ack.round_start:
            self._on_round_end(ack, flow)
        if self.state == STARTUP and not self.filled_pipe and ack.round_start:
            rs = ack.rate_sample
            if rs is None or not rs.is_app_limited:
                self.full_bw, self.full_bw_count, self.filled_pipe = full_pipe_check(
                    self.full_bw, self.full_bw_count, self.btlbw
                )
        if self.state == STARTUP and self.filled_pipe:
            self._enter_drain(ack, flow)
        if self.state == DRAIN:
            bdp = self.bdp()
            if bdp is not None and flow.inflight <= bdp:
                self._enter_probe_bw(ack, flow)
        if self.state in self.probe_bw_states:
            self._update_probe_cycle(ack, flow)
        if rtprop_expired and self.state != PROBE_RTT:
            self._enter_probe_rtt(ack, flow)
        if self.state == PROBE_RTT:
            self._handle_probe_rtt(ack, flow)

    # -- outputs -------------------------------------------------------------

    def _cap_rate(self, rate: float) -> float:
        return min(rate, self.bw_lo)

    def inflight_cap(self) -> float:
        """Upper bound the bounds model places on cwnd in the current phase."""
        cap = UNSET
        if self.inflight_hi != UNSET:
            if self.state == PROBE_CRUISE:
                cap = self.headroom * self.inflight_hi
            elif self.state == PROBE_DOWN:
                # draining never holds more than the long-term bound
                cap = self.inflight_hi
        return min(cap, self.inflight_lo)

    def _bound_cwnd(self, cwnd: float, flow) -> float:
        return min(cwnd, self.inflight_cap())

    def telemetry(self) -> dict:
        out = super().telemetry()
        out["inflight_hi"] = None if self.inflight_hi == UNSET else self.inflight_hi
        out["inflight_lo"] = None if self.inflight_lo == UNSET else self.inflight_lo
        out["bw_lo"] = None if self.bw_lo == UNSET else self.bw_lo
        return out

"""BBRv2+: BBRv2 with delay-guided probing, filter advancement, dual-mode
co-existence with loss-based flows, and a jitter-compensated BDP."""

from __future__ import annotations

from typing import Optional, Tuple

from .bbr2 import (
    PROBE_CRUISE,
    PROBE_DOWN,
    PROBE_BW_STATES,
    PROBE_UP,
    Bbr2,
)
from .core import MSS, NS_PER_S, WindowedFilter

PROBE_TRY = "ProbeTry"
MODE_PLUS = "BBRv2+"
MODE_V2 = "BBRv2"

GAMMA = 1.02
THETA = 1.1
LAMBDA1 = 1.1
LAMBDA2 = 1.05
ETA1 = 2
ETA2 = 4
MU = 0.5
ALPHA = 0.20
BETA = 0.3
CRUISE_ROUNDS = 6
TRY_GAIN = 1.1
TRY_DRAIN_GAIN = 0.9
JITTER_WINDOW_ROUNDS = 4


def compensated_bdp(btlbw: float, rtprop: int, jitter: float, mu: float = MU) -> float:
    """BDP in bytes; large jitter (relative to rtprop) is added to the RTT term."""
    rtt = rtprop + jitter if jitter > mu * rtprop else rtprop
    return btlbw * rtt / NS_PER_S


def probe_try_passes(minrtt_curr: int, minrtt_prev: int, gamma: float = GAMMA) -> bool:
    """True when the trial round did not raise the round minimum RTT."""
    return not minrtt_curr > gamma * minrtt_prev


def keep_probing(minrtt_curr: int, minrtt_before_probe: int, gamma: float = GAMMA) -> bool:
    return minrtt_curr <= gamma * minrtt_before_probe


def queue_is_building(minrtt_curr: int, rtprop: int, theta: float = THETA) -> bool:
    return minrtt_curr > theta * rtprop


def dual_mode_step(
    mode: str,
    buffer_filling: int,
    buffer_empty: int,
    cruise_min: int,
    rtprop: int,
    lambda1: float = LAMBDA1,
    lambda2: float = LAMBDA2,
    eta1: int = ETA1,
    eta2: int = ETA2,
) -> Tuple[str, int, int, bool]:
    """One end-of-cruise update; returns (mode, filling, empty, switched)."""
    if mode == MODE_PLUS:
        if cruise_min > lambda1 * rtprop:
            buffer_filling += 1
            buffer_empty = 0
        else:
            buffer_filling = 0
        if buffer_filling >= eta1:
            return MODE_V2, 0, 0, True
        return mode, buffer_filling, buffer_empty, False
    if cruise_min <= lambda2 * rtprop:
        buffer_empty += 1
        buffer_filling = 0
    else:
        buffer_empty = 0
    if buffer_empty >= eta2:
        return MODE_PLUS, 0, 0, True
    return mode, buffer_filling, buffer_empty, False


class Bbr2Plus(Bbr2):
    name = "bbr2plus"

    def __init__(
        self,
        mss: int = MSS,
        rng=None,
        alpha: float = ALPHA,
        beta: float = BETA,
        gamma: float = GAMMA,
        theta: float = THETA,
        lambda1: float = LAMBDA1,
        lambda2: float = LAMBDA2,
        eta1: int = ETA1,
        eta2: int = ETA2,
        mu: float = MU,
        cruise_rounds: int = CRUISE_ROUNDS,
        try_gain: float = TRY_GAIN,
        try_drain_gain: float = TRY_DRAIN_GAIN,
        dual_mode: bool = True,
        **kwargs,
    ) -> None:
        if gamma <= 1 or theta <= 1:
            raise ValueError("gamma and theta must exceed 1")
        if not lambda1 > lambda2 > 1:
            raise ValueError("need lambda1 > lambda2 > 1")
        if int(eta1) != eta1 or int(eta2) != eta2 or eta1 < 1 or eta2 < 1:
            raise ValueError("eta1 and eta2 must be positive integers")
        if not 0 < mu < 1:
            raise ValueError("mu must lie in (0, 1)")
        super().__init__(mss, rng, alpha=alpha, beta=beta, **kwargs)
        self.gamma = gamma
        self.theta = theta
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.eta1 = int(eta1)
        self.eta2 = int(eta2)
        self.mu = mu
        self.cruise_rounds = cruise_rounds
        self.try_gain = try_gain
        self.try_drain_gain = try_drain_gain
        self.dual_mode = dual_mode
        self.probe_bw_states = PROBE_BW_STATES + (PROBE_TRY,)

        self.probe_bw_mode = MODE_PLUS
        self.minrtt_prev_rtt: Optional[int] = None
        self.minrtt_curr_rtt: Optional[int] = None
        self.minrtt_before_probe: Optional[int] = None
        self.minrtt_curr_cruise: Optional[int] = None
        self.max4rtt_jitter = WindowedFilter("max", JITTER_WINDOW_ROUNDS)
        self.buffer_filling = 0
        self.buffer_empty = 0
        self.cruise_round_start = 0
        self.try_round = 0
        self.down_after_try = False
        self.cycle_max_gain = 1.0
        self.last_filter_advance_round = -1
        self.filter_advances = 0
        self.mode_switches = 0
        self.restarts = 0

    # -- model -----------------------------------------------------------

    @property
    def jitter(self) -> float:
        value = self.max4rtt_jitter.current()
        return value if value is not None else 0.0

    def bdp(self, gain: float = 1.0) -> Optional[float]:
        if self.rtprop is None or self.btlbw <= 0:
            return None
        return gain * compensated_bdp(self.btlbw, self.rtprop, self.jitter, self.mu)

    def _set_phase(self, state: str, gain: float) -> None:
        super()._set_phase(state, gain)
        if gain > self.cycle_max_gain:
            self.cycle_max_gain = gain

    # -- transitions -------------------------------------------------------

    def _enter_cruise(self, ack, flow) -> None:
        super()._enter_cruise(ack, flow)
        self.cruise_round_start = ack.round_count
        self.minrtt_curr_cruise = None
        self.down_after_try = False
        self.cycle_max_gain = 1.0

    def _enter_probe_try(self, ack, flow) -> None:
        # takes the place of Refill, so the short-term bounds are released here
        self._set_phase(PROBE_TRY, self.try_gain)
        self.reset_lower_bounds()
        self.try_round = 1

    def _restart_from_startup(self) -> None:
        super()._restart_from_startup()
        self.restarts += 1

    def _on_cruise_end(self, ack, flow) -> None:
        switched = False
        if self.dual_mode and self.minrtt_curr_cruise is not None and self.rtprop is not None:
            mode, self.buffer_filling, self.buffer_empty, switched = dual_mode_step(
                self.probe_bw_mode,
                self.buffer_filling,
                self.buffer_empty,
                self.minrtt_curr_cruise,
                self.rtprop,
                self.lambda1,
                self.lambda2,
                self.eta1,
                self.eta2,
            )
            if switched:
                self.mode_switches += 1
                self.probe_bw_mode = mode
                if mode == MODE_V2:
                    # quickly regain bandwidth against a buffer-filling competitor
                    self._restart_from_startup()
                    return
        if self.probe_bw_mode == MODE_PLUS:
            self._enter_probe_try(ack, flow)
        else:
            self._enter_refill(ack, flow)

    # -- per-round logic ------------------------------------------------------

    def _advance_filter_if_queued(self, ack) -> None:
        if self.probe_bw_mode != MODE_PLUS or self.state not in (PROBE_CRUISE, PROBE_DOWN):
            return
        if self.last_filter_advance_round == ack.round_count:
            return
        curr = self.minrtt_curr_rtt
        if curr is None or self.rtprop is None:
            return
        if queue_is_building(curr, self.rtprop, self.theta):
            self.btlbw_filter.expire_oldest()
            self.last_filter_advance_round = ack.round_count
            self.filter_advances += 1

    def _on_round_end(self, ack, flow) -> None:
        self.minrtt_curr_rtt = ack.ended_round_min_rtt
        self.minrtt_prev_rtt = ack.ended_prev_round_min_rtt
        super()._on_round_end(ack, flow)
        self._advance_filter_if_queued(ack)
        if self.probe_bw_mode != MODE_PLUS:
            return
        curr, prev = self.minrtt_curr_rtt, self.minrtt_prev_rtt
        if self.state == PROBE_TRY:
            if self.try_round == 1:
                self.try_round = 2
                self.pacing_gain = 1.0
            elif self.try_round == 2:
                # the second round's packets are still in flight; their ACKs
                # carry the queue left by the 1.1 round
                self.try_round = 3
            elif curr is not None and prev is not None and not probe_try_passes(curr, prev, self.gamma):
                self.down_after_try = True
                self._enter_probe_down(ack, flow, gain=self.try_drain_gain)
            else:
                self.minrtt_before_probe = curr if curr is not None else prev
                self._enter_probe_up(ack, flow)
        elif self.state == PROBE_CRUISE:
            if ack.round_count - self.cruise_round_start >= self.cruise_rounds:
                self._on_cruise_end(ack, flow)

    def _probe_down_target(self) -> float:
        if self.down_after_try:
            return self.bdp() or 0.0
        return super()._probe_down_target()

    def _exit_probe_up(self, ack, flow, lossy: bool) -> None:
        if not lossy and self.probe_bw_mode == MODE_PLUS:
            # continuous probing: keep going while the round minimum RTT holds
            curr = flow.rtt.minrtt_curr_round
            if curr is None:
                curr = self.minrtt_curr_rtt
            before = self.minrtt_before_probe
            if curr is not None and before is not None and keep_probing(curr, before, self.gamma):
                self.probe_up_start = ack.now
                self.reset_lower_bounds()
                return
        super()._exit_probe_up(ack, flow, lossy)

    def _update_probe_cycle(self, ack, flow) -> None:
        if self.probe_bw_mode == MODE_PLUS and self.state in (PROBE_CRUISE, PROBE_TRY):
            return  # round-driven, see _on_round_end
        super()._update_probe_cycle(ack, flow)

    def _update_state(self, ack, flow, rtprop_expired: bool) -> None:
        if ack.rtt_sample is not None:
            if flow.rtt.rttvar is not None:
                self.max4rtt_jitter.update(flow.rtt.rttvar, ack.round_count)
            if self.state == PROBE_CRUISE and (
                self.minrtt_curr_cruise is None or ack.rtt_sample < self.minrtt_curr_cruise
            ):
                self.minrtt_curr_cruise = ack.rtt_sample
        super()._update_state(ack, flow, rtprop_expired)

    @property
    def state_name(self) -> str:
        return self.state

    def telemetry(self) -> dict:
        out = super().telemetry()
        out["probe_bw_mode"] = self.probe_bw_mode
        out["minrtt_curr_cruise"] = self.minrtt_curr_cruise
        out["max4rtt_jitter"] = self.jitter
        out["compensated_bdp"] = self.bdp()
        return out

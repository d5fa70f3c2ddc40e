"""Controller contract shared by every CCA, the Cubic baseline, and the name registry."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional

from .core import MSS, NS_PER_S

INITIAL_CWND_PKTS = 10
MIN_CWND_PKTS = 4
UNPACED_RATE = 1e12  # bytes/s, effectively no pacing


class CongestionControl:
    """Base class; the transport reads ``cwnd`` (bytes) and ``pacing_rate`` (bytes/s)."""

    name = "base"

    def __init__(self, mss: int = MSS, rng=None) -> None:
        self.mss = mss
        self.rng = rng
        self.cwnd = INITIAL_CWND_PKTS * mss
        self.pacing_rate = UNPACED_RATE

    def on_flow_start(self, now: int, handshake_rtt: Optional[int]) -> None:
        """Called once before the first send; ``handshake_rtt`` is the connection-setup RTT."""

    def on_packet_sent(self, pkt, now: int, flow) -> None:
        pass

    def on_round_start(self, ack, flow) -> None:
        pass

    def on_loss_declared(self, losses, now: int, flow) -> None:
        pass

    def on_rto(self, now: int, flow) -> None:
        pass

    def on_undo(self, now: int, flow) -> None:
        """Every loss of the last episode turned out to be reordering."""

    def on_ack(self, ack, flow) -> None:
        pass

    @property
    def state_name(self) -> str:
        return ""

    def telemetry(self) -> dict:
        return {
            "state": self.state_name,
            "pacing_gain": None,
            "btlbw_est": None,
            "rtprop_est": None,
            "probe_bw_mode": "",
        }


CUBIC_C = 0.4
CUBIC_BETA = 0.7


@dataclass
class CubicState:
    w_max: float = 0.0  # packets
    k: float = 0.0  # seconds
    c: float = CUBIC_C
    beta_cubic: float = CUBIC_BETA
    epoch_start: Optional[int] = None
    ssthresh: float = math.inf  # packets
    in_slow_start: bool = True
    cwnd: float = float(INITIAL_CWND_PKTS)  # packets
    last_reduction: Optional[int] = None
    prior_cwnd: float = 0.0
    prior_ssthresh: float = 0.0
    w_est: float = 0.0  # Reno-emulation window, packets


def cubic_k(w_max: float, beta: float = CUBIC_BETA, c: float = CUBIC_C) -> float:
    return (w_max * (1 - beta) / c) ** (1 / 3)


def reno_alpha(beta: float = CUBIC_BETA) -> float:
    """Additive increase (packets per RTT) that matches Reno's average rate."""
    return 3 * (1 - beta) / (1 + beta)


def cubic_window(state: CubicState, t_since_epoch: float) -> float:
    """W(t) = C (t - K)^3 + W_max in packets, floored at 2."""
    w = state.c * (t_since_epoch - state.k) ** 3 + state.w_max
    return max(w, 2.0)


def cubic_on_loss(state: CubicState, now: int = 0, srtt: Optional[float] = None) -> float:
    """Multiplicative decrease; losses within one srtt of the last cut coalesce."""
    if (
        state.last_reduction is not None
        and srtt is not None
        and now - state.last_reduction < srtt
    ):
        return state.cwnd
    state.prior_cwnd = state.cwnd
    state.prior_ssthresh = state.ssthresh
    state.w_max = state.cwnd
    # whole packets after a cut, never below two
    state.cwnd = float(max(math.floor(state.cwnd * state.beta_cubic + 1e-9), 2))
    state.ssthresh = state.cwnd
    state.k = cubic_k(state.w_max, state.beta_cubic, state.c)
    state.epoch_start = None
    state.in_slow_start = False
    state.last_reduction = now
    return state.cwnd


class Cubic(CongestionControl):
    """Cubic with the Reno-friendly region; paced at 2x/1.2x cwnd/srtt like Linux fq."""

    name = "cubic"

    def __init__(self, mss: int = MSS, rng=None, c: float = CUBIC_C, beta: float = CUBIC_BETA) -> None:
        super().__init__(mss, rng)
        self.st = CubicState(c=c, beta_cubic=beta)
        self._sync()

    def _sync(self, srtt: Optional[float] = None) -> None:
        self.cwnd = int(self.st.cwnd * self.mss)
        if srtt:
            ratio = 2.0 if self.st.in_slow_start else 1.2
            self.pacing_rate = ratio * self.cwnd * NS_PER_S / srtt
        else:
            self.pacing_rate = UNPACED_RATE

    def on_loss_declared(self, losses, now: int, flow) -> None:
        cubic_on_loss(self.st, now, flow.rtt.srtt)
        self._sync(flow.rtt.srtt)

    def on_rto(self, now: int, flow) -> None:
        st = self.st
        st.w_max = st.cwnd
        st.ssthresh = max(st.cwnd * st.beta_cubic, 2.0)
        st.cwnd = 1.0
        st.in_slow_start = True
        st.epoch_start = None
        st.last_reduction = now
        self._sync(flow.rtt.srtt)

    def on_ack(self, ack, flow) -> None:
        acked = ack.newly_acked_bytes / self.mss
        if acked <= 0:
            return
        st = self.st
        if st.cwnd < st.ssthresh:
            st.in_slow_start = True
            st.cwnd = min(st.cwnd + acked, max(st.ssthresh, st.cwnd))
            if st.cwnd >= st.ssthresh:
                st.in_slow_start = False
        else:
            st.in_slow_start = False
            now = ack.now
            if st.epoch_start is None:
                st.epoch_start = now
                if st.w_max <= st.cwnd:
                    st.k = 0.0
                    st.w_max = st.cwnd
                else:
                    st.k = ((st.w_max - st.cwnd) / st.c) ** (1 / 3)
                st.w_est = st.cwnd
            rtt = flow.rtt.min_rtt or 0
            t = (now - st.epoch_start + rtt) / NS_PER_S
            st.w_est += reno_alpha(st.beta_cubic) * acked / st.cwnd
            target = max(cubic_window(st, t), st.w_est)
            if target > st.cwnd:
                st.cwnd += acked * (target - st.cwnd) / st.cwnd
            else:
                st.cwnd += acked * 0.01 / st.cwnd
        self._sync(flow.rtt.srtt)

    def on_undo(self, now: int, flow) -> None:
        st = self.st
        st.cwnd = max(st.cwnd, st.prior_cwnd)
        st.ssthresh = max(st.ssthresh, st.prior_ssthresh)
        st.in_slow_start = st.cwnd < st.ssthresh
        st.epoch_start = None
        self._sync(flow.rtt.srtt)

    @property
    def state_name(self) -> str:
        return "SlowStart" if self.st.in_slow_start else "CongAvoid"

    def telemetry(self) -> dict:
        out = super().telemetry()
        out["state"] = self.state_name
        return out


def _registry() -> Dict[str, type]:
    from .bbr1 import Bbr1
    from .bbr2 import Bbr2
    from .bbr2plus import Bbr2Plus

    return {"cubic": Cubic, "bbr": Bbr1, "bbr2": Bbr2, "bbr2plus": Bbr2Plus}


CCA_NAMES = ("cubic", "bbr", "bbr2", "bbr2plus")


def make_cca(name: str, mss: int = MSS, rng=None, **params) -> CongestionControl:
    """Instantiate a controller by its scenario name."""
    registry = _registry()
    try:
        cls = registry[name]
    except KeyError:
        raise ValueError(f"unknown CCA {name!r}; expected one of {CCA_NAMES}") from None
    return cls(mss=mss, rng=rng, **params)

"""Reliable packet stream: pacing, cwnd enforcement, loss detection and retransmission.

The receiver acknowledges every packet.  Each ACK carries the cumulative
point (next in-order sequence expected) plus the first sequence of the
contiguous run that contains the triggering packet, i.e. a single SACK
block.  A transmission is declared lost once three later transmissions are
known to be delivered (the dup-ACK threshold) or by retransmission timeout.
Once reordering has been observed, loss additionally requires that some
delivered packet was sent more than a reordering window after it, in the
manner of RACK; the window widens each time a loss proves spurious.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Set

from .core import MSS, NS_PER_S, BandwidthSampler, RateSample, RttEstimator, ms

DUP_THRESH = 3
RTO_MIN = ms(200)
RTO_INITIAL = NS_PER_S
RTO_MAX = 60 * NS_PER_S

OUTSTANDING, DELIVERED, LOST = 0, 1, 2


@dataclass(slots=True)
class Packet:
    flow_id: int
    seq: int
    size: int = MSS
    sent_time: int = 0
    tx_id: int = 0
    is_retransmission: bool = False
    delivered: int = 0
    delivered_time: int = 0
    first_sent_time: int = 0
    lost_at_send: int = 0
    inflight_at_send: int = 0
    app_limited: bool = False
    state: int = OUTSTANDING


@dataclass(slots=True)
class Ack:
    flow_id: int
    seq: int
    tx_id: int
    cum: int
    block_start: int


class Receiver:
    """Reassembly state; produces one ACK per arriving packet.

    Out-of-order runs are indexed by both ends so that extending or joining
    them costs O(1) regardless of how much reordering is in flight.
    """

    def __init__(self, flow_id: int) -> None:
        self.flow_id = flow_id
        self.rcv_nxt = 0
        self.ooo: Set[int] = set()
        self._run_end: Dict[int, int] = {}  # run start -> run end
        self._run_start: Dict[int, int] = {}  # run end -> run start
        self.unique_bytes = 0
        self.duplicate_packets = 0

    def receive(self, pkt: Packet) -> tuple:
        """Returns (ack, is_new_data)."""
        s = pkt.seq
        ooo = self.ooo
        if s < self.rcv_nxt or s in ooo:
            self.duplicate_packets += 1
            start = s
            if s in ooo:
                while (start - 1) in ooo:
                    start -= 1
            return Ack(self.flow_id, s, pkt.tx_id, self.rcv_nxt, start), False
        self.unique_bytes += pkt.size
        if s == self.rcv_nxt:
            nxt = s + 1
            end = self._run_end.pop(nxt, None)
            if end is not None:
                del self._run_start[end]
                for k in range(nxt, end + 1):
                    ooo.discard(k)
                nxt = end + 1
            self.rcv_nxt = nxt
            return Ack(self.flow_id, s, pkt.tx_id, nxt, s), True
        ooo.add(s)
        start = self._run_start.pop(s - 1, s)
        end = self._run_end.pop(s + 1, s)
        self._run_end[start] = end
        self._run_start[end] = start
        return Ack(self.flow_id, s, pkt.tx_id, self.rcv_nxt, start), True


@dataclass
class AckSummary:
    now: int
    newly_acked_bytes: int = 0
    newly_lost_bytes: int = 0
    losses: List[Packet] = field(default_factory=list)
    rtt_sample: Optional[int] = None
    rate_sample: Optional[RateSample] = None
    round_start: bool = False
    round_count: int = 0
    prior_inflight: int = 0
    inflight: int = 0
    delivered: int = 0
    prev_round_loss_rate: float = 0.0
    prev_round_lost: int = 0
    prev_round_delivered: int = 0
    prev_round_delivered_bytes: int = 0
    is_dup: bool = False
    # per-round RTT minima of the round that just closed and the one before it
    ended_round_min_rtt: Optional[int] = None
    ended_prev_round_min_rtt: Optional[int] = None


def compute_rto(srtt: Optional[float], rttvar: Optional[float], backoff: int = 1) -> int:
    """srtt + 4*rttvar with a 200 ms floor, scaled by the backoff factor."""
    if srtt is None:
        base = RTO_INITIAL
    else:
        base = max(int(srtt + 4 * rttvar), RTO_MIN)
    return min(base * backoff, RTO_MAX)


def loss_rate(lost: int, delivered: int) -> float:
    total = lost + delivered
    return lost / total if total else 0.0


class TransportFlow:
    """Sender side of one bulk flow, driven by a congestion controller ``cc``."""

    def __init__(self, flow_id: int, cc, mss: int = MSS, app_bytes: Optional[int] = None) -> None:
        self.flow_id = flow_id
        self.cc = cc
        self.mss = mss
        self.app_bytes = app_bytes  # None: always backlogged
        self.next_seq = 0
        self.snd_una = 0
        self.outstanding: Dict[int, Packet] = {}
        self._txq: Deque[Packet] = deque()
        self._sacked: Set[int] = set()
        self._lost: Dict[int, Packet] = {}
        self._retx_heap: List[int] = []
        self.inflight = 0
        self.rtt = RttEstimator()
        self.sampler = BandwidthSampler()
        self.tx_counter = 0
        self.highest_delivered_tx = -1
        self.next_send_time = 0
        self.rto_backoff = 1
        self.rto_deadline: Optional[int] = None
        self._rto_credit = 0
        self.dup_ack_count = 0
        self.stale_acks = 0
        # time-based reordering tolerance
        self.rack_xmit_time = -1
        self.reordering_seen = False
        self.reo_wnd_steps = 1
        # loss-episode undo: retransmissions not yet shown to be spurious
        self.recovery_seq: Optional[int] = None
        self.undo_retrans = 0
        self.undo_count = 0
        # counters
        self.bytes_sent = 0
        self.packets_sent = 0
        self.bytes_acked = 0  # transmissions acknowledged while outstanding
        self.bytes_lost = 0  # transmissions declared lost
        self.bytes_retransmitted = 0
        self.packets_retransmitted = 0
        self.packets_lost = 0
        self.spurious_losses = 0
        self.rto_count = 0
        # round accounting
        self.round_count = 0
        self.next_round_delivered = 0
        self.round_lost = 0
        self.round_delivered = 0
        self.round_delivered_bytes = 0
        self.prev_round_lost = 0
        self.prev_round_delivered = 0
        self.prev_round_delivered_bytes = 0

    # -- sending -------------------------------------------------------

    @property
    def cwnd(self) -> int:
        return self.cc.cwnd

    @property
    def pacing_rate(self) -> float:
        return self.cc.pacing_rate

    @property
    def rto(self) -> int:
        return compute_rto(self.rtt.srtt, self.rtt.rttvar, self.rto_backoff)

    def has_data(self) -> bool:
        if self._retx_heap:
            return True
        return self.app_bytes is None or self.app_bytes > 0

    def _next_seq_to_send(self) -> Optional[tuple]:
        heap = self._retx_heap
        while heap:
            s = heap[0]
            if s in self._lost:
                return s, True
            heapq.heappop(heap)
        if self.app_bytes is not None and self.app_bytes <= 0:
            return None
        return self.next_seq, False

    def maybe_send(self, now: int) -> List[Packet]:
        """Emit every packet that pacing and cwnd allow at ``now``."""
        sent: List[Packet] = []
        while self.next_send_time <= now:
            nxt = self._next_seq_to_send()
            if nxt is None:
                if self.inflight + self.mss <= self.cwnd:
                    self.sampler.mark_app_limited(self.inflight)
                break
            if self.inflight + self.mss > self.cwnd:
                if self._rto_credit <= 0:
                    break
                self._rto_credit -= 1
            seq, is_retx = nxt
            sent.append(self._transmit(seq, is_retx, now))
        return sent

    def _transmit(self, seq: int, is_retx: bool, now: int) -> Packet:
        size = self.mss
        if is_retx:
            heapq.heappop(self._retx_heap)
            del self._lost[seq]
            self.bytes_retransmitted += size
            self.packets_retransmitted += 1
        else:
            self.next_seq += 1
            if self.app_bytes is not None:
                self.app_bytes -= size
        pkt = Packet(self.flow_id, seq, size, now, self.tx_counter, is_retx)
        self.tx_counter += 1
        self.sampler.on_send(pkt, now, self.inflight)
        self.inflight += size
        pkt.inflight_at_send = self.inflight
        self.outstanding[seq] = pkt
        self._txq.append(pkt)
        self.bytes_sent += size
        self.packets_sent += 1
        if self.rto_deadline is None:
            self.rto_deadline = now + self.rto
        rate = self.cc.pacing_rate
        gap = int(size * NS_PER_S / rate) if rate > 0 else NS_PER_S
        self.next_send_time = max(self.next_send_time, now) + gap
        self.cc.on_packet_sent(pkt, now, self)
        return pkt

    # -- acknowledgements ----------------------------------------------

    def _deliver(self, s: int, now: int, newly: List[Packet]) -> None:
        pkt = self.outstanding.pop(s, None)
        if pkt is not None:
            pkt.state = DELIVERED
            self.inflight -= pkt.size
            self.bytes_acked += pkt.size
        else:
            pkt = self._lost.pop(s, None)
            if pkt is None:
                return
            # declared lost but actually delivered
            pkt.state = DELIVERED
            self._on_spurious(now)
        self.sampler.on_delivered(pkt, now)
        if pkt.sent_time < self.rack_xmit_time:
            if not pkt.is_retransmission:
                self.reordering_seen = True
        elif not (
            pkt.is_retransmission
            and self.rtt.min_rtt is not None
            and now - pkt.sent_time < self.rtt.min_rtt
        ):
            # an ACK arriving sooner than min_rtt after a resend was for the
            # original copy and says nothing about the resend's send time
            self.rack_xmit_time = pkt.sent_time
        if pkt.tx_id > self.highest_delivered_tx:
            self.highest_delivered_tx = pkt.tx_id
        newly.append(pkt)

    def _on_spurious(self, now: int) -> None:
        self.spurious_losses += 1
        self.reo_wnd_steps = min(self.reo_wnd_steps + 1, 64)
        if self.recovery_seq is None:
            return
        self.undo_retrans -= 1
        if self.undo_retrans <= 0:
            # every loss of the episode was reordering: revert the reaction
            self.recovery_seq = None
            self.undo_retrans = 0
            self.undo_count += 1
            self.round_lost = 0
            self.cc.on_undo(now, self)

    def _open_episode(self, n_lost: int) -> None:
        if self.recovery_seq is None or self.snd_una > self.recovery_seq:
            self.recovery_seq = self.next_seq
            self.undo_retrans = 0
        self.undo_retrans += n_lost

    def _declare_lost(self, pkt: Packet, losses: List[Packet]) -> None:
        pkt.state = LOST
        del self.outstanding[pkt.seq]
        self.inflight -= pkt.size
        self.bytes_lost += pkt.size
        self.packets_lost += 1
        self.round_lost += 1
        self._lost[pkt.seq] = pkt
        heapq.heappush(self._retx_heap, pkt.seq)
        self.sampler.on_lost(pkt.size)
        losses.append(pkt)

    @property
    def reo_wnd(self) -> int:
        """Reordering window in ns; zero until reordering has been seen."""
        if not self.reordering_seen or self.rtt.srtt is None:
            return 0
        min_rtt = self.rtt.min_rtt or 0
        return int(min(self.reo_wnd_steps * min_rtt / 4, self.rtt.srtt))

    def _detect_losses(self, losses: List[Packet]) -> None:
        txq = self._txq
        limit = self.highest_delivered_tx - DUP_THRESH
        reo = self.reordering_seen
        sent_limit = self.rack_xmit_time - self.reo_wnd
        while txq:
            head = txq[0]
            if head.state != OUTSTANDING:
                txq.popleft()
                continue
            if head.tx_id > limit or (reo and head.sent_time >= sent_limit):
                break
            txq.popleft()
            self._declare_lost(head, losses)

    def on_ack(self, ack: Ack, now: int) -> AckSummary:
        prior_inflight = self.inflight
        newly: List[Packet] = []
        advanced = ack.cum > self.snd_una
        if advanced:
            sacked = self._sacked
            for s in range(self.snd_una, ack.cum):
                if s in sacked:
                    sacked.discard(s)
                else:
                    self._deliver(s, now, newly)
            self.snd_una = ack.cum
        s = ack.seq
        lo = max(ack.block_start, self.snd_una)
        while s >= lo and s not in self._sacked:
            self._sacked.add(s)
            self._deliver(s, now, newly)
            s -= 1

        summary = AckSummary(now=now, prior_inflight=prior_inflight)
        if not newly:
            if ack.cum < self.snd_una:
                self.stale_acks += 1
            else:
                self.dup_ack_count += 1
            summary.is_dup = True
        elif not advanced:
            self.dup_ack_count += 1
        else:
            self.dup_ack_count = 0

        rtt_sample = None
        if newly:
            self.rto_backoff = 1
            trigger = next((p for p in newly if p.seq == ack.seq), None)
            if trigger is not None and trigger.tx_id == ack.tx_id and not trigger.is_retransmission:
                rtt_sample = now - trigger.sent_time
            elif trigger is not None and ack.tx_id < trigger.tx_id:
                # an earlier transmission arrived: the retransmission was needless
                self._on_spurious(now)
            # round bookkeeping keyed on the newest delivered packet
            newest = max(newly, key=lambda p: p.delivered)
            if newest.delivered >= self.next_round_delivered:
                self._roll_round()
                summary.round_start = True
        if summary.round_start:
            summary.ended_round_min_rtt = self.rtt.minrtt_curr_round
            summary.ended_prev_round_min_rtt = self.rtt.minrtt_prev_round
            self.rtt.roll_round()
        if rtt_sample is not None and rtt_sample > 0:
            self.rtt.on_rtt_sample(rtt_sample, now)
        else:
            rtt_sample = None

        losses: List[Packet] = []
        self._detect_losses(losses)
        if losses:
            self._open_episode(len(losses))

        newly_bytes = 0
        for p in newly:
            newly_bytes += p.size
        self.round_delivered += len(newly)
        self.round_delivered_bytes += newly_bytes

        summary.newly_acked_bytes = newly_bytes
        summary.losses = losses
        summary.newly_lost_bytes = sum(p.size for p in losses)
        summary.rtt_sample = rtt_sample
        summary.rate_sample = self.sampler.take_sample(now, self.rtt.min_rtt) if newly else None
        summary.round_count = self.round_count
        summary.inflight = self.inflight
        summary.delivered = self.sampler.delivered
        summary.prev_round_lost = self.prev_round_lost
        summary.prev_round_delivered = self.prev_round_delivered
        summary.prev_round_delivered_bytes = self.prev_round_delivered_bytes
        summary.prev_round_loss_rate = loss_rate(self.prev_round_lost, self.prev_round_delivered)

        if self.outstanding:
            if newly:
                self.rto_deadline = now + self.rto
        else:
            self.rto_deadline = None

        if summary.round_start:
            self.cc.on_round_start(summary, self)
        if losses:
            self.cc.on_loss_declared(losses, now, self)
        self.cc.on_ack(summary, self)
        return summary

    def _roll_round(self) -> None:
        self.round_count += 1
        self.next_round_delivered = self.sampler.delivered
        self.prev_round_lost = self.round_lost
        self.prev_round_delivered = self.round_delivered
        self.prev_round_delivered_bytes = self.round_delivered_bytes
        self.round_lost = 0
        self.round_delivered = 0
        self.round_delivered_bytes = 0

    def loss_rate_current_round(self) -> float:
        return loss_rate(self.round_lost, self.round_delivered)

    # -- timeout -------------------------------------------------------

    def on_rto(self, now: int) -> List[Packet]:
        """Retransmission timeout: the oldest outstanding transmission is lost."""
        if not self.outstanding:
            self.rto_deadline = None
            return []
        losses: List[Packet] = []
        txq = self._txq
        while txq and txq[0].state != OUTSTANDING:
            txq.popleft()
        if txq:
            self._declare_lost(txq.popleft(), losses)
        self.recovery_seq = None  # no undo across a timeout
        self.rto_count += 1
        self.rto_backoff = min(self.rto_backoff * 2, 64)
        self._rto_credit = 1
        self.rto_deadline = now + self.rto
        # pacing must not stall the retransmission
        self.next_send_time = min(self.next_send_time, now)
        self.cc.on_rto(now, self)
        return losses

    # -- invariants ----------------------------------------------------

    def check_conservation(self) -> None:
        inflight = sum(p.size for p in self.outstanding.values())
        if inflight != self.inflight:
            raise AssertionError(f"inflight {self.inflight} != outstanding sum {inflight}")
        if self.bytes_sent != self.bytes_acked + self.bytes_lost + self.inflight:
            raise AssertionError(
                f"conservation violated: sent={self.bytes_sent} acked={self.bytes_acked} "
                f"lost={self.bytes_lost} inflight={self.inflight}"
            )
        if self.inflight < 0:
            raise AssertionError("negative inflight")

    @property
    def retransmission_rate(self) -> float:
        return self.packets_retransmitted / self.packets_sent if self.packets_sent else 0.0

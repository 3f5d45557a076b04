"""Connection state and the probe handlers that read it.

``TcpConnState`` holds what the protocol implementation itself keeps
(sequence numbers, byte counters, RTT estimator). ``AncillaryState`` holds
the KPIs the implementation does not track, created when a connection is
registered and purged when it closes.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Dict, Iterable, List, Optional, Tuple

from kpi.kpi_accumulator import CounterPair, KpiAccumulator, KpiSnapshot, RunningStat
from kpi.kpi_catalog import KpiId, TCP_KPIS
from lifecycle.lifecycle_fsm import INIT, LifecycleState, Phase
from tcp_sim.probe_events import ConnKey, ProbeEvent, ProbeEventKind, StateCapture

logger = logging.getLogger(__name__)

SEQ_MODULUS = 1 << 32
DEFAULT_ANCILLARY_CAPACITY = 3000


# --- serial number arithmetic (RFC 1982) -----------------------------------

def seq_diff(a: int, b: int, modulus: int = SEQ_MODULUS) -> int:
    """Signed distance from b to a in a sequence space of the given size."""
    half = modulus >> 1
    return ((a - b + half) % modulus) - half


def seq_add(a: int, n: int, modulus: int = SEQ_MODULUS) -> int:
    return (a + n) % modulus


# --- segment classification -------------------------------------------------

class Verdict(str, enum.Enum):
    IN_ORDER = "InOrder"
    DUPLICATE = "Duplicate"
    OUT_OF_ORDER = "OutOfOrder"


@dataclass(frozen=True)
class Classification:
    verdict: Verdict
    length: int
    dup_bytes: int = 0
    in_order_bytes: int = 0
    ofo_bytes: int = 0
    distance: int = 0
    # queued segments released by this arrival, in sequence order
    drained: Tuple["QueuedSegment", ...] = ()

    @property
    def drained_bytes(self) -> int:
        return sum(piece.length for piece in self.drained)

    @property
    def delivered_bytes(self) -> int:
        """How far the receive edge advanced, queued data included."""
        return self.in_order_bytes + self.drained_bytes

    def as_detail(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "len": self.length,
            "dup_bytes": self.dup_bytes,
            "in_order_bytes": self.in_order_bytes,
            "ofo_bytes": self.ofo_bytes,
            "distance": self.distance,
            "drained_bytes": self.drained_bytes,
        }


def classify_segment(rcv_nxt: int, seq: int, length: int,
                     modulus: int = SEQ_MODULUS) -> Classification:
    """Place [seq, seq+length) against the next expected sequence number."""
    if length <= 0:
        raise ValueError(f"segment length must be positive, got {length}")
    start = seq_diff(seq, rcv_nxt, modulus)
    end = start + length
    if end <= 0:
        return Classification(Verdict.DUPLICATE, length, dup_bytes=length)
    if start < 0:
        return Classification(Verdict.DUPLICATE, length, dup_bytes=-start, in_order_bytes=end)
    if start > 0:
        return Classification(Verdict.OUT_OF_ORDER, length, ofo_bytes=length, distance=start)
    return Classification(Verdict.IN_ORDER, length, in_order_bytes=length)


def account_classification(kpis: KpiAccumulator, cls: Classification) -> None:
    if cls.dup_bytes:
        kpis.record_counter(KpiId.DUPLICATES, cls.dup_bytes, 1)
    if cls.in_order_bytes:
        kpis.record_counter(KpiId.RECEIVED, cls.delivered_bytes, 1 + len(cls.drained))
    if cls.ofo_bytes:
        kpis.record_counter(KpiId.OFO, cls.ofo_bytes, 1)
        kpis.record_sample(KpiId.OFO_DIST, cls.distance)


# --- out-of-order queue -----------------------------------------------------

@dataclass(frozen=True)
class QueuedSegment:
    seq: int
    length: int
    # data-sequence number of the first byte, for subflow data bound to a meta-socket
    dss: Optional[int] = None


class OfoQueue:
    """Segments held beyond the receive edge until the gap before them fills.

    Segments are kept as received (no merging); overlapping data is released
    once and fully covered segments are discarded on drain.
    """

    def __init__(self, modulus: int = SEQ_MODULUS):
        self.modulus = modulus
        self.segments: List[QueuedSegment] = []

    def __len__(self):
        return len(self.segments)

    def add(self, seq: int, length: int, dss: Optional[int] = None) -> None:
        self.segments.append(QueuedSegment(seq, length, dss))

    def drain(self, rcv_nxt: int) -> Tuple[QueuedSegment, ...]:
        """Release the queued data that now continues at ``rcv_nxt``.

        Returns the newly deliverable pieces in order; pieces never overlap
        each other or anything below ``rcv_nxt``.
        """
        ordered = sorted(self.segments, key=lambda s: seq_diff(s.seq, rcv_nxt, self.modulus))
        released: List[QueuedSegment] = []
        kept: List[QueuedSegment] = []
        edge = 0
        for segment in ordered:
            start = seq_diff(segment.seq, rcv_nxt, self.modulus)
            end = start + segment.length
            if end <= edge:
                continue
            if start > edge:
                kept.append(segment)
                continue
            skip = edge - start
            released.append(QueuedSegment(
                seq_add(rcv_nxt, edge, self.modulus),
                end - edge,
                None if segment.dss is None else segment.dss + skip,
            ))
            edge = end
        self.segments = kept
        return tuple(released)


def receive(rcv_nxt: int, queue: OfoQueue, seq: int, length: int,
            dss: Optional[int] = None) -> Tuple[int, Classification]:
    """Classify one arrival, queue it when out of order, and advance the edge.

    Returns the new receive edge and the classification, whose ``drained``
    pieces are the queued bytes the arrival made deliverable.
    """
    cls = classify_segment(rcv_nxt, seq, length, queue.modulus)
    if cls.ofo_bytes:
        queue.add(seq, length, dss)
        return rcv_nxt, cls
    if not cls.in_order_bytes:
        return rcv_nxt, cls
    rcv_nxt = seq_add(rcv_nxt, cls.in_order_bytes, queue.modulus)
    drained = queue.drain(rcv_nxt) if len(queue) else ()
    for piece in drained:
        rcv_nxt = seq_add(rcv_nxt, piece.length, queue.modulus)
    return rcv_nxt, replace(cls, drained=drained)


# --- ancillary state --------------------------------------------------------

@dataclass
class AncillaryState:
    kpis: KpiAccumulator
    registered_at: int = 0

    @property
    def duplicates(self) -> CounterPair:
        return self.kpis.counters[KpiId.DUPLICATES]

    @property
    def ofo(self) -> CounterPair:
        return self.kpis.counters[KpiId.OFO]

    @property
    def ofo_dist(self) -> RunningStat:
        return self.kpis.samples[KpiId.OFO_DIST]

    @property
    def stalls(self) -> int:
        return self.kpis.events[KpiId.STALLS]

    @property
    def reinjections(self) -> int:
        return self.kpis.events.get(KpiId.REINJECTIONS, 0)


class AncillaryRegistry:
    """Bounded map of registered connections, like the kernel-side hash map."""

    def __init__(self, capacity: int = DEFAULT_ANCILLARY_CAPACITY):
        self.capacity = capacity
        self.entries: Dict[int, AncillaryState] = {}
        self.refused = 0

    def __len__(self):
        return len(self.entries)

    def register(self, uid: int, at: int, kpis: Iterable[KpiId] = TCP_KPIS) -> Optional[AncillaryState]:
        if uid in self.entries:
            return self.entries[uid]
        if len(self.entries) >= self.capacity:
            self.refused += 1
            logger.warning("Ancillary map full (%d entries), connection %d is not monitored",
                           self.capacity, uid)
            return None
        state = AncillaryState(KpiAccumulator(kpis, opened_at=at), registered_at=at)
        self.entries[uid] = state
        return state

    def lookup(self, uid: int) -> Optional[AncillaryState]:
        return self.entries.get(uid)

    def purge(self, uid: int) -> None:
        self.entries.pop(uid, None)


# --- protocol state ---------------------------------------------------------

@dataclass
class TcpConnState:
    key: ConnKey
    lifecycle: LifecycleState = INIT
    snd_nxt: int = 0
    rcv_nxt: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0
    segs_sent: int = 0
    segs_received: int = 0
    bytes_retrans: int = 0
    srtt: Optional[float] = None
    rttvar: Optional[float] = None
    ca_open: bool = True
    write_queue_pending: bool = False
    fin_sent_acked: bool = False
    fin_received: bool = False
    mptcp_requested: bool = False
    passive: bool = False
    meta_uid: Optional[int] = None
    ofo_queue: OfoQueue = field(default_factory=OfoQueue, repr=False)

    @property
    def uid(self) -> int:
        return self.key.connection_uid


def update_rtt(state: TcpConnState, sample: float,
               ancillary: Optional[AncillaryState] = None) -> TcpConnState:
    """RFC 6298 smoothing; the raw sample also feeds the RTT window statistics."""
    if sample <= 0:
        raise ValueError(f"RTT sample must be positive, got {sample}")
    if state.srtt is None:
        state.srtt = float(sample)
        state.rttvar = sample / 2
    else:
        state.rttvar = 0.75 * state.rttvar + 0.25 * abs(state.srtt - sample)
        state.srtt = 0.875 * state.srtt + 0.125 * sample
    if ancillary is not None:
        ancillary.kpis.record_sample(KpiId.RTT, sample)
    return state


def validate_incoming(state: TcpConnState, ancillary: Optional[AncillaryState],
                      seq: int, length: int, dss: Optional[int] = None) -> Classification:
    """Run one inbound data segment through the receive path.

    Out-of-order data waits in the connection's queue; an arrival that
    closes the gap releases it, and Received counts each segment once when
    its bytes reach the application.
    """
    if state.lifecycle.phase not in (Phase.ESTABLISHED, Phase.LOSSY):
        raise ValueError(f"segment on connection {state.uid} while {state.lifecycle}")
    state.rcv_nxt, cls = receive(state.rcv_nxt, state.ofo_queue, seq, length, dss)
    state.segs_received += 1
    state.bytes_received += cls.delivered_bytes
    if ancillary is not None:
        account_classification(ancillary.kpis, cls)
    return cls


def capture(state: TcpConnState, ancillary: Optional[AncillaryState], at: int) -> StateCapture:
    if ancillary is not None:
        snapshot = ancillary.kpis.snapshot(at)
    else:
        snapshot = KpiSnapshot.empty(TCP_KPIS, at)
    return StateCapture(
        kpis=snapshot,
        snd_nxt=state.snd_nxt,
        rcv_nxt=state.rcv_nxt,
        bytes_sent=state.bytes_sent,
        bytes_received=state.bytes_received,
        segs_sent=state.segs_sent,
        segs_received=state.segs_received,
        bytes_retrans=state.bytes_retrans,
        srtt=state.srtt,
        rttvar=state.rttvar,
        ca_open=state.ca_open,
        write_queue_pending=state.write_queue_pending,
        fin_sent_acked=state.fin_sent_acked,
        fin_received=state.fin_received,
    )


def make_event(kind: ProbeEventKind, state: TcpConnState, ancillary: Optional[AncillaryState],
               at: int, **detail) -> ProbeEvent:
    return ProbeEvent(
        kind=kind,
        key=state.key,
        at=at,
        capture=capture(state, ancillary, at),
        detail=MappingProxyType(detail),
        meta_uid=state.meta_uid,
    )


def fire_retransmit_timer(state: TcpConnState, ancillary: Optional[AncillaryState],
                          lifecycle: LifecycleState, at: int, retrans_bytes: int = 0) -> ProbeEvent:
    """Retransmission timer expiry.

    A stall is an expiry while the SYN is outstanding or data is waiting in
    the write queue; an idle connection's timer is not a stall.
    """
    state.write_queue_pending = retrans_bytes > 0
    state.ca_open = False
    stalled = lifecycle.phase is Phase.CONNECTING or state.write_queue_pending
    if retrans_bytes:
        state.bytes_retrans += retrans_bytes
    if ancillary is not None:
        if stalled:
            ancillary.kpis.record_event(KpiId.STALLS)
        if retrans_bytes:
            ancillary.kpis.record_counter(KpiId.LOST, retrans_bytes, 1)
    return make_event(ProbeEventKind.RETRANSMIT_TIMEOUT, state, ancillary, at,
                      stalled=stalled, retrans=retrans_bytes)

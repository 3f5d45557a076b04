"""Deterministic replay of trace scripts.

The simulator stands in for an instrumented kernel stack: it applies the
protocol-level occurrences of a script to per-connection state and fires the
same probe points a kernel would, handing each ProbeEvent to a sink.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional

from kpi.kpi_catalog import KpiId, META_KPIS, TCP_KPIS
from lifecycle.lifecycle_fsm import EndReason, IllegalTransition, Phase, apply_event
from mptcp_ext.meta_socket import (
    MetaConnState, make_meta_event, meta_rto, meta_validate_incoming, new_meta, reinject,
)
from tcp_sim.probe_events import ConnKey, ProbeEvent, ProbeEventKind, Protocol
from tcp_sim.sim_errors import ScriptError, SimViolation, UnknownSubflow
from tcp_sim.tcp_state import (
    DEFAULT_ANCILLARY_CAPACITY, AncillaryRegistry, TcpConnState, fire_retransmit_timer,
    make_event, seq_add, update_rtt, validate_incoming,
)
from tcp_sim.trace_script import Directive, TraceScript

logger = logging.getLogger(__name__)

EventSink = Callable[[ProbeEvent], None]

CLOSE_REASONS = {
    "fin": EndReason.FINISHED,
    "rst": EndReason.RESET,
    "drop": EndReason.OTHER,
}

LIVE_DATA_PHASES = (Phase.ESTABLISHED, Phase.LOSSY)


@dataclass(frozen=True)
class ReplaySummary:
    connections: int = 0
    events: int = 0
    directives: int = 0
    refused: int = 0


class Simulator:

    def __init__(self, sink: EventSink, capacity: int = DEFAULT_ANCILLARY_CAPACITY):
        self.sink = sink
        self.registry = AncillaryRegistry(capacity)
        self.conns: Dict[int, TcpConnState] = {}
        self.metas: Dict[int, MetaConnState] = {}
        self.passive_uids = frozenset()
        self.events = 0
        self.directives = 0
        self.now = 0

    # --- event plumbing ---------------------------------------------------

    def _emit(self, holder, event: ProbeEvent) -> None:
        """Run the lifecycle of ``holder`` and deliver the event if monitored."""
        try:
            nxt, export = apply_event(holder.lifecycle, event)
        except IllegalTransition as e:
            raise SimViolation(str(e)) from e
        holder.lifecycle = nxt
        ancillary = self.registry.lookup(event.uid)
        if ancillary is None:
            return
        if export is not None:
            # the profile cut here owns the samples gathered so far
            ancillary.kpis.reset_samples(event.at)
        self.events += 1
        logger.debug("probe %s on %s at %d", event.kind.value, event.key, event.at)
        self.sink(event)

    def _conn(self, d: Directive) -> TcpConnState:
        conn = self.conns.get(d.uid)
        if conn is None:
            raise ScriptError(f"connection {d.uid} is not open", d.line_no)
        if conn.lifecycle.is_closed:
            raise SimViolation(f"{d}: connection already closed")
        return conn

    def _require(self, conn, d: Directive, *phases: Phase) -> None:
        if conn.lifecycle.phase not in phases:
            raise SimViolation(f"{d}: not allowed while {conn.lifecycle}")

    def _meta_of(self, conn: TcpConnState, d: Directive) -> MetaConnState:
        meta = self.metas.get(conn.meta_uid) if conn.meta_uid is not None else None
        if meta is None:
            raise SimViolation(f"{d}: connection {conn.uid} is not an MPTCP subflow")
        return meta

    # --- directives -------------------------------------------------------

    def do_open(self, d: Directive) -> None:
        if d.uid in self.conns:
            raise ScriptError(f"connection uid {d.uid} reused", d.line_no)
        src, dst = d.args["src"], d.args["dst"]
        key = ConnKey(src.addr, dst.addr, src.port, dst.port, Protocol.TCP,
                      d.args["iface"], d.uid)
        conn = TcpConnState(key=key, mptcp_requested=d.args["mptcp"],
                            passive=d.uid in self.passive_uids)
        self.conns[d.uid] = conn
        if conn.passive:
            # no state before the connection is accepted
            return
        ancillary = self.registry.register(d.uid, d.at, TCP_KPIS)
        self._emit(conn, make_event(ProbeEventKind.CONNECT_ATTEMPT, conn, ancillary, d.at))

    def do_accepted(self, d: Directive) -> None:
        conn = self._conn(d)
        if not conn.passive:
            raise SimViolation(f"{d}: connection was actively opened")
        self._require(conn, d, Phase.INIT)
        ancillary = self.registry.register(d.uid, d.at, TCP_KPIS)
        self._emit(conn, make_event(ProbeEventKind.ACCEPT_ESTABLISHED, conn, ancillary, d.at))

    def do_connect_error(self, d: Directive) -> None:
        conn = self._conn(d)
        self._require(conn, d, Phase.CONNECTING)
        ancillary = self.registry.lookup(d.uid)
        self._emit(conn, make_event(ProbeEventKind.CONNECT_ERROR, conn, ancillary, d.at,
                                    errno=d.args["errno"],
                                    end_reason=EndReason.CONNECT_ERROR))
        self.registry.purge(d.uid)

    def do_established(self, d: Directive) -> None:
        conn = self._conn(d)
        self._require(conn, d, Phase.CONNECTING)
        ancillary = self.registry.lookup(d.uid)
        update_rtt(conn, d.args["rtt"], ancillary)
        conn.ca_open = True
        conn.write_queue_pending = False

        meta = None
        if conn.mptcp_requested:
            # MP_CAPABLE is only confirmed by the SYN+ACK
            meta = new_meta(conn)
            conn.key = replace(conn.key, protocol=Protocol.MPTCP_SUBFLOW)
            conn.meta_uid = meta.uid
            self.metas[meta.uid] = meta

        self._emit(conn, make_event(ProbeEventKind.CONNECT_ESTABLISHED, conn, ancillary, d.at,
                                    rtt=d.args["rtt"]))
        if meta is not None:
            meta.ancillary = self.registry.register(meta.uid, d.at, META_KPIS)
            self._emit(meta, make_meta_event(ProbeEventKind.CONNECT_ESTABLISHED, meta, d.at,
                                             subflow=conn.uid))

    def do_send(self, d: Directive) -> None:
        conn = self._conn(d)
        self._require(conn, d, *LIVE_DATA_PHASES)
        length = d.args["len"]
        conn.snd_nxt = seq_add(conn.snd_nxt, length)
        conn.bytes_sent += length
        conn.segs_sent += 1
        ancillary = self.registry.lookup(d.uid)
        if ancillary is not None:
            ancillary.kpis.record_counter(KpiId.SENT, length, 1)
        if conn.meta_uid is not None:
            meta = self._meta_of(conn, d)
            meta.bytes_sent += length
            if meta.ancillary is not None:
                meta.ancillary.kpis.record_counter(KpiId.SENT, length, 1)

    def do_recv(self, d: Directive) -> None:
        conn = self._conn(d)
        self._require(conn, d, *LIVE_DATA_PHASES)
        ancillary = self.registry.lookup(d.uid)
        dss = d.args.get("dss")
        cls = validate_incoming(conn, ancillary, d.args["seq"], d.args["len"], dss)
        self._emit(conn, make_event(ProbeEventKind.SEGMENT_VALIDATED, conn, ancillary, d.at,
                                    seq=d.args["seq"], **cls.as_detail()))

        if conn.meta_uid is None or not cls.in_order_bytes:
            return
        # subflows deliver in order, only the accepted bytes reach the meta-socket
        meta = self._meta_of(conn, d)
        if meta.lifecycle.phase not in LIVE_DATA_PHASES:
            return
        pieces = [(None if dss is None else dss + cls.dup_bytes, cls.in_order_bytes)]
        pieces.extend((piece.dss, piece.length) for piece in cls.drained)
        for piece_dss, length in pieces:
            dss_start = meta.dss_rcv_nxt if piece_dss is None else piece_dss
            meta_cls = meta_validate_incoming(meta, dss_start, length)
            self._emit(meta, make_meta_event(ProbeEventKind.SEGMENT_VALIDATED, meta, d.at,
                                             dss=dss_start, subflow=conn.uid,
                                             **meta_cls.as_detail()))

    def do_rtt_sample(self, d: Directive) -> None:
        conn = self._conn(d)
        self._require(conn, d, *LIVE_DATA_PHASES)
        update_rtt(conn, d.args["rtt"], self.registry.lookup(d.uid))

    def do_corrupt(self, d: Directive) -> None:
        conn = self._conn(d)
        self._require(conn, d, *LIVE_DATA_PHASES)
        ancillary = self.registry.lookup(d.uid)
        if ancillary is not None:
            ancillary.kpis.record_counter(KpiId.ERRORS, d.args["len"], 1)

    def do_rto(self, d: Directive) -> None:
        conn = self._conn(d)
        self._require(conn, d, Phase.CONNECTING, *LIVE_DATA_PHASES)
        ancillary = self.registry.lookup(d.uid)
        event = fire_retransmit_timer(conn, ancillary, conn.lifecycle, d.at, d.args["retrans"])
        self._emit(conn, event)

    def do_recovered(self, d: Directive) -> None:
        conn = self._conn(d)
        self._require(conn, d, *LIVE_DATA_PHASES)
        conn.ca_open = True
        conn.write_queue_pending = False
        ancillary = self.registry.lookup(d.uid)
        self._emit(conn, make_event(ProbeEventKind.RECOVERY_COMPLETE, conn, ancillary, d.at))
        if conn.meta_uid is not None:
            meta = self._meta_of(conn, d)
            if meta.lifecycle.phase is Phase.LOSSY:
                self._emit(meta, make_meta_event(ProbeEventKind.RECOVERY_COMPLETE, meta, d.at,
                                                 subflow=conn.uid))

    def do_close(self, d: Directive) -> None:
        conn = self._conn(d)
        self._require(conn, d, Phase.CONNECTING, *LIVE_DATA_PHASES)
        reason = CLOSE_REASONS[d.args["how"]]
        if reason is EndReason.FINISHED and conn.lifecycle.phase is Phase.CONNECTING:
            # FINs are only exchanged once the handshake is complete
            raise SimViolation(f"{d}: no FIN exchange before the handshake completes")
        self._close(conn, reason, d.at, evidence=d.args["how"])

    def _close(self, conn: TcpConnState, reason: EndReason, at: int, evidence: str) -> None:
        if reason is EndReason.FINISHED:
            conn.fin_sent_acked = True
            conn.fin_received = True
        ancillary = self.registry.lookup(conn.uid)
        self._emit(conn, make_event(ProbeEventKind.STATE_CLOSE, conn, ancillary, at,
                                    end_reason=reason, evidence=evidence))
        self.registry.purge(conn.uid)

        meta = self.metas.get(conn.meta_uid) if conn.meta_uid is not None else None
        if meta is None:
            return
        meta.subflow_uids.discard(conn.uid)
        if not meta.subflow_uids and meta.lifecycle.is_live:
            self._emit(meta, make_meta_event(ProbeEventKind.STATE_CLOSE, meta, at,
                                             end_reason=reason, evidence=evidence))
            self.registry.purge(meta.uid)

    def do_join(self, d: Directive) -> None:
        conn = self._conn(d)
        meta = self._meta_of(conn, d)
        self._require(meta, d, *LIVE_DATA_PHASES)
        sub_uid = d.args["subflow"]
        subflow = self.conns.get(sub_uid)
        if subflow is None:
            key = replace(meta.key, protocol=Protocol.MPTCP_SUBFLOW, connection_uid=sub_uid)
            subflow = TcpConnState(key=key, passive=True)
            self.conns[sub_uid] = subflow
        elif not subflow.passive or subflow.lifecycle.phase is not Phase.INIT:
            raise SimViolation(f"{d}: connection {sub_uid} cannot join as a new subflow")
        else:
            subflow.key = replace(subflow.key, protocol=Protocol.MPTCP_SUBFLOW)
        subflow.meta_uid = meta.uid
        meta.subflow_uids.add(sub_uid)
        ancillary = self.registry.register(sub_uid, d.at, TCP_KPIS)
        self._emit(subflow, make_event(ProbeEventKind.SUBFLOW_JOIN, subflow, ancillary, d.at,
                                       meta_uid=meta.uid))

    def do_reinject(self, d: Directive) -> None:
        conn = self._conn(d)
        self._require(conn, d, *LIVE_DATA_PHASES)
        source = self.conns.get(d.args["from"])
        meta = self.metas.get(conn.meta_uid) if conn.meta_uid is not None else None
        if source is None or meta is None or source.meta_uid != conn.meta_uid:
            raise UnknownSubflow(f"{d}: {d.args['from']} and {d.uid} are not subflows "
                                 f"of the same MPTCP connection")
        ancillary = self.registry.lookup(d.uid)
        reinject(conn, ancillary, d.args["len"], meta)
        conn.bytes_sent += d.args["len"]
        conn.segs_sent += 1
        if ancillary is not None:
            ancillary.kpis.record_counter(KpiId.SENT, d.args["len"], 1)
        self._emit(conn, make_event(ProbeEventKind.SUBFLOW_REINJECT, conn, ancillary, d.at,
                                    source=d.args["from"], len=d.args["len"]))

    def do_meta_rto(self, d: Directive) -> None:
        conn = self._conn(d)
        meta = self._meta_of(conn, d)
        self._require(meta, d, *LIVE_DATA_PHASES)
        self._emit(meta, meta_rto(meta, d.at))

    # --- driver -----------------------------------------------------------

    def apply(self, d: Directive) -> None:
        handler = getattr(self, f"do_{d.verb}", None)
        if handler is None:
            raise ScriptError(f"unknown directive {d.verb!r}", d.line_no)
        self.now = d.at
        try:
            handler(d)
        except ValueError as e:
            if isinstance(e, (ScriptError, SimViolation, UnknownSubflow)):
                raise
            raise SimViolation(f"{d}: {e}") from e
        self.directives += 1

    def close_remaining(self, at: int) -> None:
        for conn in list(self.conns.values()):
            if conn.lifecycle.is_live:
                self._close(conn, EndReason.OTHER, at, evidence="trace_end")

    def run(self, script: TraceScript, close_at_end: bool = True) -> ReplaySummary:
        self.passive_uids = script.passive_uids
        for d in script.directives:
            self.apply(d)
        if close_at_end:
            self.close_remaining(self.now)
        summary = ReplaySummary(
            connections=len(self.conns) + len(self.metas),
            events=self.events,
            directives=self.directives,
            refused=self.registry.refused,
        )
        logger.info("Replayed %s: %d directives, %d connections, %d events, %d refused",
                    script.source, summary.directives, summary.connections,
                    summary.events, summary.refused)
        return summary


def replay(script: TraceScript, sink: EventSink, capacity: int = DEFAULT_ANCILLARY_CAPACITY,
           close_at_end: bool = True) -> ReplaySummary:
    return Simulator(sink, capacity).run(script, close_at_end=close_at_end)

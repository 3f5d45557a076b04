"""MPTCP meta-socket accounting.

Subflows are instrumented exactly like TCP connections. The meta-socket
reassembles the bytestream from the subflows, so its KPIs mean something
else: out-of-order data reflects the performance skew between subflows,
duplicates reflect received reinjections and a meta-level retransmission
timeout means head-of-line blocking.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Optional, Set

from kpi.kpi_accumulator import KpiSnapshot
from kpi.kpi_catalog import KpiId, META_KPIS
from lifecycle.lifecycle_fsm import INIT, LifecycleState, Phase
from tcp_sim.probe_events import (
    META_UID_FLAG, ConnKey, ProbeEvent, ProbeEventKind, Protocol, StateCapture,
)
from tcp_sim.sim_errors import UnknownSubflow
from tcp_sim.tcp_state import (
    AncillaryState, Classification, OfoQueue, TcpConnState, account_classification, receive,
)

logger = logging.getLogger(__name__)

DSS_MODULUS = 1 << 64


def meta_uid_for(first_subflow_uid: int) -> int:
    return META_UID_FLAG | first_subflow_uid


@dataclass
class MetaConnState:
    key: ConnKey
    subflow_uids: Set[int] = field(default_factory=set)
    lifecycle: LifecycleState = INIT
    bytes_sent: int = 0
    bytes_received: int = 0
    dss_rcv_nxt: int = 0
    hol_blocking: int = 0
    ancillary: Optional[AncillaryState] = None
    ofo_queue: OfoQueue = field(default_factory=lambda: OfoQueue(DSS_MODULUS), repr=False)

    @property
    def uid(self) -> int:
        return self.key.connection_uid


def new_meta(first_subflow: TcpConnState) -> MetaConnState:
    key = replace(first_subflow.key,
                  protocol=Protocol.MPTCP_META,
                  connection_uid=meta_uid_for(first_subflow.uid))
    return MetaConnState(key=key, subflow_uids={first_subflow.uid})


def capture_meta(meta: MetaConnState, at: int) -> StateCapture:
    if meta.ancillary is not None:
        snapshot = meta.ancillary.kpis.snapshot(at)
    else:
        snapshot = KpiSnapshot.empty(META_KPIS, at)
    # no RTT estimator on the meta-socket
    return StateCapture(
        kpis=snapshot,
        rcv_nxt=meta.dss_rcv_nxt,
        bytes_sent=meta.bytes_sent,
        bytes_received=meta.bytes_received,
    )


def make_meta_event(kind: ProbeEventKind, meta: MetaConnState, at: int, **detail) -> ProbeEvent:
    return ProbeEvent(
        kind=kind,
        key=meta.key,
        at=at,
        capture=capture_meta(meta, at),
        detail=MappingProxyType(detail),
    )


def meta_validate_incoming(meta: MetaConnState, dss_seq: int, length: int) -> Classification:
    if meta.lifecycle.phase not in (Phase.ESTABLISHED, Phase.LOSSY):
        raise ValueError(f"data on meta-socket {meta.uid} while {meta.lifecycle}")
    meta.dss_rcv_nxt, cls = receive(meta.dss_rcv_nxt, meta.ofo_queue, dss_seq % DSS_MODULUS, length)
    meta.bytes_received += cls.delivered_bytes
    if meta.ancillary is not None:
        account_classification(meta.ancillary.kpis, cls)
    return cls


def reinject(subflow: TcpConnState, ancillary: Optional[AncillaryState], nbytes: int,
             meta: Optional[MetaConnState]) -> Optional[AncillaryState]:
    """Count one reinjection performed by ``subflow``.

    The duplicate it causes on the receiver is accounted when the DSS range
    reaches the peer's meta-socket.
    """
    if nbytes <= 0:
        raise ValueError(f"reinjected length must be positive, got {nbytes}")
    if meta is None or subflow.meta_uid != meta.uid or subflow.uid not in meta.subflow_uids:
        raise UnknownSubflow(f"connection {subflow.uid} is not a subflow of this MPTCP connection")
    if ancillary is not None:
        ancillary.kpis.record_event(KpiId.REINJECTIONS)
    return ancillary


def meta_rto(meta: MetaConnState, at: int) -> ProbeEvent:
    if meta.lifecycle.phase not in (Phase.ESTABLISHED, Phase.LOSSY):
        raise ValueError(f"meta retransmission timer on {meta.uid} while {meta.lifecycle}")
    meta.hol_blocking += 1
    logger.debug("meta-socket %d: retransmission timeout, %d head-of-line blocks",
                 meta.uid, meta.hol_blocking)
    if meta.ancillary is not None:
        meta.ancillary.kpis.record_event(KpiId.HOL_BLOCKING)
    return make_meta_event(ProbeEventKind.META_RETRANSMIT_TIMEOUT, meta, at,
                           hol_blocking=meta.hol_blocking)

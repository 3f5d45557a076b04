import enum
import ipaddress
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping, Optional, Union

from kpi.kpi_accumulator import KpiSnapshot

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]

MAX_UID = (1 << 63) - 1
META_UID_FLAG = 1 << 63


class Protocol(enum.IntEnum):
    TCP = 0
    MPTCP_SUBFLOW = 1
    MPTCP_META = 2


class ProbeEventKind(str, enum.Enum):
    CONNECT_ATTEMPT = "ConnectAttempt"
    CONNECT_ERROR = "ConnectError"
    CONNECT_ESTABLISHED = "ConnectEstablished"
    ACCEPT_ESTABLISHED = "AcceptEstablished"
    RETRANSMIT_TIMEOUT = "RetransmitTimeout"
    RECOVERY_COMPLETE = "RecoveryComplete"
    SEGMENT_VALIDATED = "SegmentValidated"
    STATE_CLOSE = "StateClose"
    META_RETRANSMIT_TIMEOUT = "MetaRetransmitTimeout"
    SUBFLOW_REINJECT = "SubflowReinject"
    SUBFLOW_JOIN = "SubflowJoin"


# Wire code of each kind, stable across releases.
EVENT_KIND_CODES = {kind: code for code, kind in enumerate(ProbeEventKind, start=1)}
EVENT_KIND_BY_CODE = {code: kind for kind, code in EVENT_KIND_CODES.items()}


@dataclass(frozen=True)
class ConnKey:
    src_addr: IPAddress
    dst_addr: IPAddress
    src_port: int
    dst_port: int
    protocol: Protocol
    egress_interface: str
    connection_uid: int

    def __post_init__(self):
        if self.src_addr.version != self.dst_addr.version:
            raise ValueError(f"mixed address families: {self.src_addr} -> {self.dst_addr}")
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 0xFFFF:
                raise ValueError(f"port out of range: {port}")
        if not 0 < self.connection_uid < (1 << 64):
            raise ValueError(f"connection uid out of range: {self.connection_uid}")

    @property
    def ip_version(self) -> int:
        return self.src_addr.version

    def __str__(self):
        return (f"#{self.connection_uid} {self.src_addr}:{self.src_port} -> "
                f"{self.dst_addr}:{self.dst_port} via {self.egress_interface} "
                f"({self.protocol.name})")


@dataclass(frozen=True)
class StateCapture:
    """Connection state read by a probe handler at the instant it fires."""
    kpis: KpiSnapshot
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


@dataclass(frozen=True)
class ProbeEvent:
    kind: ProbeEventKind
    key: ConnKey
    at: int
    capture: StateCapture
    detail: Mapping[str, Any] = field(default_factory=lambda: MappingProxyType({}))
    meta_uid: Optional[int] = None

    @property
    def uid(self) -> int:
        return self.key.connection_uid

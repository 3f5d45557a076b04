import enum


class KpiKind(str, enum.Enum):
    COUNTER = "counter"      # bytes + packets
    EVENT = "event"          # plain occurrence count
    SAMPLED = "sampled"      # running mean / variance


class KpiId(str, enum.Enum):
    SENT = "sent"
    RECEIVED = "received"
    LOST = "lost"
    ERRORS = "errors"
    RTT = "rtt"
    DUPLICATES = "duplicates"
    OFO = "ofo"
    OFO_DIST = "ofo_dist"
    STALLS = "stalls"
    REINJECTIONS = "reinjections"
    HOL_BLOCKING = "hol_blocking"

    @property
    def kind(self) -> KpiKind:
        return KPI_KINDS[self]


KPI_KINDS = {
    KpiId.SENT: KpiKind.COUNTER,
    KpiId.RECEIVED: KpiKind.COUNTER,
    KpiId.LOST: KpiKind.COUNTER,
    KpiId.ERRORS: KpiKind.COUNTER,
    KpiId.DUPLICATES: KpiKind.COUNTER,
    KpiId.OFO: KpiKind.COUNTER,
    KpiId.STALLS: KpiKind.EVENT,
    KpiId.REINJECTIONS: KpiKind.EVENT,
    KpiId.HOL_BLOCKING: KpiKind.EVENT,
    KpiId.RTT: KpiKind.SAMPLED,       # microseconds
    KpiId.OFO_DIST: KpiKind.SAMPLED,  # bytes
}

# Plain TCP connections and MPTCP subflows.
TCP_KPIS = frozenset(k for k in KpiId if k is not KpiId.HOL_BLOCKING)

# The meta-socket never sees corrupted segments and has no latency of its own.
META_KPIS = frozenset(KpiId) - {KpiId.RTT, KpiId.ERRORS, KpiId.REINJECTIONS}

COUNTER_KPIS = tuple(k for k in KpiId if k.kind is KpiKind.COUNTER)
EVENT_KPIS = tuple(k for k in KpiId if k.kind is KpiKind.EVENT)
SAMPLED_KPIS = tuple(k for k in KpiId if k.kind is KpiKind.SAMPLED)

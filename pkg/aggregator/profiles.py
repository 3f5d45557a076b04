"""Performance profiles, the unit of export.

A profile describes one connection between two lifecycle transitions. Its
flat representation (``profile_to_record`` / ``profile_from_record``) is the
canonical field order shared by the IPFIX templates and the collector store.
"""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import Dict, Optional

from kpi.kpi_accumulator import CounterPair, KpiDelta, WindowStat
from kpi.kpi_catalog import COUNTER_KPIS, EVENT_KPIS, KpiId, SAMPLED_KPIS
from lifecycle.lifecycle_fsm import EndReason, LifecycleState, Phase, Transition
from tcp_sim.probe_events import (
    EVENT_KIND_BY_CODE, EVENT_KIND_CODES, ConnKey, ProbeEventKind, Protocol,
)


@dataclass(frozen=True)
class ProfileKpis:
    """Window KPIs as exported: integers only, absent KPIs are None."""
    counters: Dict[KpiId, CounterPair]
    events: Dict[KpiId, int]
    samples: Dict[KpiId, WindowStat]

    @classmethod
    def from_delta(cls, delta: KpiDelta) -> "ProfileKpis":
        samples = {
            kpi: WindowStat(stat.count, int(round(stat.mean)), int(round(stat.variance)))
            for kpi, stat in delta.samples.items()
        }
        return cls(dict(delta.counters), dict(delta.events), samples)

    def counter(self, kpi: KpiId) -> Optional[CounterPair]:
        return self.counters.get(kpi)

    def event_count(self, kpi: KpiId) -> Optional[int]:
        return self.events.get(kpi)

    def sample(self, kpi: KpiId) -> Optional[WindowStat]:
        return self.samples.get(kpi)


@dataclass(frozen=True)
class PerformanceProfile:
    key: ConnKey
    from_state: LifecycleState
    to_state: LifecycleState
    trigger: ProbeEventKind
    window_start: int
    window_end: int
    kpis: ProfileKpis
    export_seq: int
    meta_uid: Optional[int] = None

    @property
    def end_reason(self) -> Optional[EndReason]:
        return self.to_state.end_reason

    @property
    def uid(self) -> int:
        return self.key.connection_uid

    @property
    def is_meta(self) -> bool:
        return self.key.protocol is Protocol.MPTCP_META

    @property
    def transition(self) -> Transition:
        return Transition(self.from_state, self.to_state, self.trigger, self.window_end)

    def __str__(self):
        return (f"#{self.uid}[{self.export_seq}] {self.from_state}->{self.to_state} "
                f"[{self.window_start}, {self.window_end}]")


# --- flat records -----------------------------------------------------------

def kpi_columns(kpis) -> list:
    """Column names carried for a KPI set, in canonical order."""
    columns = []
    for kpi in COUNTER_KPIS:
        if kpi in kpis:
            columns += [f"{kpi.value}_bytes", f"{kpi.value}_packets"]
    for kpi in EVENT_KPIS:
        if kpi in kpis:
            columns.append(kpi.value)
    for kpi in SAMPLED_KPIS:
        if kpi in kpis:
            columns += [f"{kpi.value}_count", f"{kpi.value}_mean", f"{kpi.value}_var"]
    return columns


IDENTITY_COLUMNS = [
    "connection_uid", "meta_uid", "ip_version", "src_addr", "dst_addr",
    "src_port", "dst_port", "protocol", "egress_interface",
    "from_state", "to_state", "end_reason", "trigger",
    "window_start", "window_end", "export_seq",
]
ALL_KPI_COLUMNS = kpi_columns(set(KpiId))
STORE_COLUMNS = IDENTITY_COLUMNS + ALL_KPI_COLUMNS


def profile_to_record(profile: PerformanceProfile) -> Dict[str, object]:
    key = profile.key
    record = {
        "connection_uid": key.connection_uid,
        "meta_uid": profile.meta_uid,
        "ip_version": key.ip_version,
        "src_addr": str(key.src_addr),
        "dst_addr": str(key.dst_addr),
        "src_port": key.src_port,
        "dst_port": key.dst_port,
        "protocol": int(key.protocol),
        "egress_interface": key.egress_interface,
        "from_state": int(profile.from_state.phase),
        "to_state": int(profile.to_state.phase),
        "end_reason": int(profile.end_reason) if profile.end_reason is not None else None,
        "trigger": EVENT_KIND_CODES[profile.trigger],
        "window_start": profile.window_start,
        "window_end": profile.window_end,
        "export_seq": profile.export_seq,
    }
    kpis = profile.kpis
    for kpi in COUNTER_KPIS:
        pair = kpis.counter(kpi)
        record[f"{kpi.value}_bytes"] = pair.bytes if pair is not None else None
        record[f"{kpi.value}_packets"] = pair.packets if pair is not None else None
    for kpi in EVENT_KPIS:
        record[kpi.value] = kpis.event_count(kpi)
    for kpi in SAMPLED_KPIS:
        stat = kpis.sample(kpi)
        record[f"{kpi.value}_count"] = stat.count if stat is not None else None
        record[f"{kpi.value}_mean"] = stat.mean if stat is not None else None
        record[f"{kpi.value}_var"] = stat.variance if stat is not None else None
    return record


def _state(phase_code: int, reason_code: Optional[int]) -> LifecycleState:
    phase = Phase(phase_code)
    reason = EndReason(reason_code) if phase is Phase.CLOSED else None
    return LifecycleState(phase, reason)


def profile_from_record(record: Dict[str, object]) -> PerformanceProfile:
    key = ConnKey(
        src_addr=ipaddress.ip_address(record["src_addr"]),
        dst_addr=ipaddress.ip_address(record["dst_addr"]),
        src_port=int(record["src_port"]),
        dst_port=int(record["dst_port"]),
        protocol=Protocol(int(record["protocol"])),
        egress_interface=record["egress_interface"],
        connection_uid=int(record["connection_uid"]),
    )
    counters, events, samples = {}, {}, {}
    for kpi in COUNTER_KPIS:
        nbytes = record.get(f"{kpi.value}_bytes")
        if nbytes is not None:
            counters[kpi] = CounterPair(int(nbytes), int(record[f"{kpi.value}_packets"]))
    for kpi in EVENT_KPIS:
        value = record.get(kpi.value)
        if value is not None:
            events[kpi] = int(value)
    for kpi in SAMPLED_KPIS:
        count = record.get(f"{kpi.value}_count")
        if count is not None:
            samples[kpi] = WindowStat(int(count), int(record[f"{kpi.value}_mean"]),
                                      int(record[f"{kpi.value}_var"]))
    meta_uid = record.get("meta_uid")
    end_reason = record.get("end_reason")
    profile = PerformanceProfile(
        key=key,
        from_state=_state(int(record["from_state"]), None),
        to_state=_state(int(record["to_state"]), end_reason),
        trigger=EVENT_KIND_BY_CODE[int(record["trigger"])],
        window_start=int(record["window_start"]),
        window_end=int(record["window_end"]),
        kpis=ProfileKpis(counters, events, samples),
        export_seq=int(record["export_seq"]),
        meta_uid=int(meta_uid) if meta_uid is not None else None,
    )
    # IllegalTransition for a state pair the lifecycle machine cannot produce
    profile.transition
    return profile

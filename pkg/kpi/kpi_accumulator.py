"""Per-connection KPI accounting.

Counters are cumulative over the connection lifetime and profiles carry their
increase between two snapshots. Sampled KPIs (RTT, OFO distance) are kept as
Welford running statistics that restart at every export, so the statistics in
a snapshot always describe the window opened by the previous export.
"""
from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Optional

from kpi.kpi_catalog import KpiId, KpiKind, TCP_KPIS


class KpiError(ValueError):
    pass


class KindMismatch(KpiError):
    """A counter operation was applied to a sampled KPI or the reverse."""


class UnsupportedKpi(KpiError):
    """The KPI does not exist for this kind of connection."""


class NegativeDelta(KpiError):
    """Snapshots were compared out of order."""


@dataclass(frozen=True)
class CounterPair:
    bytes: int = 0
    packets: int = 0

    def __add__(self, other: "CounterPair") -> "CounterPair":
        return CounterPair(self.bytes + other.bytes, self.packets + other.packets)

    def __sub__(self, other: "CounterPair") -> "CounterPair":
        return CounterPair(self.bytes - other.bytes, self.packets - other.packets)


@dataclass(frozen=True)
class RunningStat:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @property
    def variance(self) -> float:
        # population variance: a window is a complete observation
        return self.m2 / self.count if self.count else 0.0

    def add(self, value: float) -> "RunningStat":
        count = self.count + 1
        diff = value - self.mean
        mean = self.mean + diff / count
        m2 = self.m2 + diff * (value - mean)
        return RunningStat(count, mean, m2)


@dataclass(frozen=True)
class WindowStat:
    count: int = 0
    mean: float = 0.0
    variance: float = 0.0

    @classmethod
    def from_running(cls, stat: RunningStat) -> "WindowStat":
        return cls(stat.count, stat.mean, stat.variance)


@dataclass(frozen=True)
class KpiSnapshot:
    taken_at: int
    counters: Mapping[KpiId, CounterPair]
    events: Mapping[KpiId, int]
    samples: Mapping[KpiId, RunningStat]
    window_opened_at: int = 0

    @property
    def kpis(self) -> frozenset:
        return frozenset(self.counters) | frozenset(self.events) | frozenset(self.samples)

    def counter(self, kpi: KpiId) -> CounterPair:
        return self.counters[kpi]

    def event_count(self, kpi: KpiId) -> int:
        return self.events[kpi]

    def sample(self, kpi: KpiId) -> RunningStat:
        return self.samples[kpi]

    @classmethod
    def empty(cls, kpis: Iterable[KpiId], at: int) -> "KpiSnapshot":
        return KpiAccumulator(kpis, opened_at=at).snapshot(at)


@dataclass(frozen=True)
class KpiDelta:
    window_start: int
    window_end: int
    counters: Mapping[KpiId, CounterPair]
    events: Mapping[KpiId, int]
    samples: Mapping[KpiId, WindowStat]

    @property
    def duration(self) -> int:
        return self.window_end - self.window_start

    def counter(self, kpi: KpiId) -> Optional[CounterPair]:
        return self.counters.get(kpi)

    def event_count(self, kpi: KpiId) -> Optional[int]:
        return self.events.get(kpi)

    def sample(self, kpi: KpiId) -> Optional[WindowStat]:
        return self.samples.get(kpi)


class KpiAccumulator:
    """Single-owner mutable KPI state of one connection."""

    def __init__(self, kpis: Iterable[KpiId] = TCP_KPIS, opened_at: int = 0):
        self.kpis = frozenset(kpis)
        self.counters = {k: CounterPair() for k in self.kpis if k.kind is KpiKind.COUNTER}
        self.events = {k: 0 for k in self.kpis if k.kind is KpiKind.EVENT}
        self.samples = {k: RunningStat() for k in self.kpis if k.kind is KpiKind.SAMPLED}
        self.window_opened_at = opened_at

    def _check(self, kpi: KpiId, kind: KpiKind) -> None:
        if kpi not in self.kpis:
            raise UnsupportedKpi(f"{kpi.value} is not tracked for this connection")
        if kpi.kind is not kind:
            raise KindMismatch(f"{kpi.value} is a {kpi.kind.value} KPI, not {kind.value}")

    def record_counter(self, kpi: KpiId, nbytes: int, packets: int) -> "KpiAccumulator":
        self._check(kpi, KpiKind.COUNTER)
        if nbytes < 0 or packets < 0:
            raise KpiError(f"negative increment for {kpi.value}: ({nbytes}, {packets})")
        self.counters[kpi] = self.counters[kpi] + CounterPair(nbytes, packets)
        return self

    def record_event(self, kpi: KpiId, count: int = 1) -> "KpiAccumulator":
        self._check(kpi, KpiKind.EVENT)
        if count < 0:
            raise KpiError(f"negative increment for {kpi.value}: {count}")
        self.events[kpi] += count
        return self

    def record_sample(self, kpi: KpiId, value: float) -> "KpiAccumulator":
        self._check(kpi, KpiKind.SAMPLED)
        if value < 0:
            raise KpiError(f"negative sample for {kpi.value}: {value}")
        self.samples[kpi] = self.samples[kpi].add(value)
        return self

    def snapshot(self, at: int) -> KpiSnapshot:
        return KpiSnapshot(
            taken_at=at,
            counters=MappingProxyType(dict(self.counters)),
            events=MappingProxyType(dict(self.events)),
            samples=MappingProxyType(dict(self.samples)),
            window_opened_at=self.window_opened_at,
        )

    def reset_samples(self, at: int) -> None:
        """Open a new statistics window; counters are left untouched."""
        for kpi in self.samples:
            self.samples[kpi] = RunningStat()
        self.window_opened_at = at


def record_counter(acc: KpiAccumulator, kpi: KpiId, nbytes: int, packets: int) -> KpiAccumulator:
    return acc.record_counter(kpi, nbytes, packets)


def record_event(acc: KpiAccumulator, kpi: KpiId, count: int = 1) -> KpiAccumulator:
    return acc.record_event(kpi, count)


def record_sample(acc: KpiAccumulator, kpi: KpiId, value: float) -> KpiAccumulator:
    return acc.record_sample(kpi, value)


def delta(before: KpiSnapshot, after: KpiSnapshot) -> KpiDelta:
    """KPI evolution between two snapshots of the same connection.

    The sampled statistics of ``after`` already cover the window opened at
    ``before`` since accumulators restart at every export.
    """
    if after.taken_at < before.taken_at:
        raise NegativeDelta(f"snapshot at {after.taken_at} precedes {before.taken_at}")
    if before.kpis != after.kpis:
        raise KpiError("snapshots track different KPI sets")

    counters = {}
    for kpi, value in after.counters.items():
        diff = value - before.counters[kpi]
        if diff.bytes < 0 or diff.packets < 0:
            raise NegativeDelta(f"{kpi.value} decreased between snapshots")
        counters[kpi] = diff

    events = {}
    for kpi, value in after.events.items():
        diff = value - before.events[kpi]
        if diff < 0:
            raise NegativeDelta(f"{kpi.value} decreased between snapshots")
        events[kpi] = diff

    samples = {kpi: WindowStat.from_running(stat) for kpi, stat in after.samples.items()}

    return KpiDelta(
        window_start=before.taken_at,
        window_end=after.taken_at,
        counters=MappingProxyType(counters),
        events=MappingProxyType(events),
        samples=MappingProxyType(samples),
    )

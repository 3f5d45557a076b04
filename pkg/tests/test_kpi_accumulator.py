import random
import statistics

import pytest

from kpi.kpi_accumulator import (
    CounterPair, KindMismatch, KpiAccumulator, KpiError, KpiSnapshot, NegativeDelta, RunningStat,
    UnsupportedKpi, WindowStat, delta, record_counter, record_event, record_sample,
)
from kpi.kpi_catalog import META_KPIS, TCP_KPIS, KpiId, KpiKind


class TestCatalog:

    def test_kinds(self):
        assert KpiId.SENT.kind is KpiKind.COUNTER
        assert KpiId.STALLS.kind is KpiKind.EVENT
        assert KpiId.RTT.kind is KpiKind.SAMPLED
        assert KpiId.OFO_DIST.kind is KpiKind.SAMPLED

    def test_tcp_and_meta_sets(self):
        assert KpiId.HOL_BLOCKING not in TCP_KPIS
        assert KpiId.HOL_BLOCKING in META_KPIS
        for kpi in (KpiId.RTT, KpiId.ERRORS, KpiId.REINJECTIONS):
            assert kpi not in META_KPIS


class TestRunningStat:
    """Welford statistics against a two-pass computation."""

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_two_pass(self, seed):
        rng = random.Random(seed)
        for _ in range(200):
            values = [rng.uniform(0, 1e6) for _ in range(rng.randint(1, 60))]
            stat = RunningStat()
            for v in values:
                stat = stat.add(v)
            assert stat.count == len(values)
            assert stat.mean == pytest.approx(statistics.fmean(values), rel=1e-9)
            assert stat.variance == pytest.approx(statistics.pvariance(values), rel=1e-9, abs=1e-6)

    def test_empty_window(self):
        assert RunningStat().variance == 0.0
        assert WindowStat.from_running(RunningStat()) == WindowStat(0, 0.0, 0.0)

    def test_single_sample_has_no_variance(self):
        stat = RunningStat().add(30000)
        assert (stat.count, stat.mean, stat.variance) == (1, 30000.0, 0.0)


class TestAccumulator:

    def test_counters_accumulate(self):
        acc = KpiAccumulator()
        record_counter(acc, KpiId.SENT, 1000, 1)
        record_counter(acc, KpiId.SENT, 448, 1)
        assert acc.counters[KpiId.SENT] == CounterPair(1448, 2)

    def test_events_and_samples(self):
        acc = KpiAccumulator()
        record_event(acc, KpiId.STALLS)
        record_event(acc, KpiId.STALLS, 2)
        record_sample(acc, KpiId.RTT, 10.0)
        record_sample(acc, KpiId.RTT, 30.0)
        snap = acc.snapshot(5)
        assert snap.event_count(KpiId.STALLS) == 3
        assert snap.sample(KpiId.RTT).mean == 20.0
        assert snap.sample(KpiId.RTT).variance == 100.0

    @pytest.mark.parametrize("op,kpi", [
        (lambda a, k: a.record_counter(k, 1, 1), KpiId.RTT),
        (lambda a, k: a.record_sample(k, 1.0), KpiId.SENT),
        (lambda a, k: a.record_event(k), KpiId.LOST),
    ])
    def test_kind_mismatch(self, op, kpi):
        with pytest.raises(KindMismatch):
            op(KpiAccumulator(), kpi)

    def test_unsupported_kpi(self):
        with pytest.raises(UnsupportedKpi):
            KpiAccumulator(META_KPIS).record_sample(KpiId.RTT, 1.0)
        with pytest.raises(UnsupportedKpi):
            KpiAccumulator(TCP_KPIS).record_event(KpiId.HOL_BLOCKING)

    def test_negative_increments(self):
        acc = KpiAccumulator()
        with pytest.raises(KpiError):
            acc.record_counter(KpiId.SENT, -1, 0)
        with pytest.raises(KpiError):
            acc.record_event(KpiId.STALLS, -1)
        with pytest.raises(KpiError):
            acc.record_sample(KpiId.RTT, -0.5)

    def test_snapshot_is_frozen(self):
        acc = KpiAccumulator()
        snap = acc.snapshot(0)
        acc.record_counter(KpiId.SENT, 10, 1)
        assert snap.counter(KpiId.SENT) == CounterPair()
        with pytest.raises(TypeError):
            snap.counters[KpiId.SENT] = CounterPair(1, 1)

    def test_reset_samples_keeps_counters(self):
        acc = KpiAccumulator(opened_at=0)
        acc.record_counter(KpiId.SENT, 10, 1)
        acc.record_sample(KpiId.RTT, 5.0)
        acc.reset_samples(100)
        snap = acc.snapshot(200)
        assert snap.counter(KpiId.SENT) == CounterPair(10, 1)
        assert snap.sample(KpiId.RTT).count == 0
        assert snap.window_opened_at == 100


class TestDelta:

    def test_counter_and_event_increase(self):
        acc = KpiAccumulator()
        acc.record_counter(KpiId.RECEIVED, 100, 1)
        before = acc.snapshot(10)
        acc.record_counter(KpiId.RECEIVED, 400, 2)
        acc.record_event(KpiId.STALLS)
        after = acc.snapshot(30)
        d = delta(before, after)
        assert (d.window_start, d.window_end, d.duration) == (10, 30, 20)
        assert d.counter(KpiId.RECEIVED) == CounterPair(400, 2)
        assert d.event_count(KpiId.STALLS) == 1
        assert d.event_count(KpiId.HOL_BLOCKING) is None

    def test_samples_come_from_the_later_snapshot(self):
        acc = KpiAccumulator()
        acc.record_sample(KpiId.RTT, 10.0)
        before = acc.snapshot(1)
        acc.reset_samples(1)
        acc.record_sample(KpiId.RTT, 20.0)
        d = delta(before, acc.snapshot(2))
        assert d.sample(KpiId.RTT) == WindowStat(1, 20.0, 0.0)

    def test_empty_delta(self):
        snap = KpiSnapshot.empty(TCP_KPIS, 7)
        d = delta(snap, snap)
        assert d.duration == 0
        assert all(v == CounterPair() for v in d.counters.values())

    def test_out_of_order_snapshots(self):
        acc = KpiAccumulator()
        later = acc.snapshot(20)
        with pytest.raises(NegativeDelta):
            delta(later, acc.snapshot(10))

    def test_decreasing_counter(self):
        acc = KpiAccumulator()
        acc.record_counter(KpiId.SENT, 10, 1)
        before = acc.snapshot(1)
        with pytest.raises(NegativeDelta):
            delta(before, KpiSnapshot.empty(TCP_KPIS, 2))

    def test_different_kpi_sets(self):
        with pytest.raises(KpiError):
            delta(KpiSnapshot.empty(TCP_KPIS, 0), KpiSnapshot.empty(META_KPIS, 1))

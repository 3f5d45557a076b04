import queue
import threading

import pytest

from aggregator.aggregator_daemon import Aggregator, EventChannel
from aggregator.profiles import profile_from_record, profile_to_record
from kpi.kpi_accumulator import CounterPair, KpiSnapshot, WindowStat
from kpi.kpi_catalog import COUNTER_KPIS, EVENT_KPIS, KpiId, TCP_KPIS
from lifecycle.lifecycle_fsm import CONNECTING, ESTABLISHED, INIT, LOSSY, EndReason, closed
from tcp_sim.probe_events import ProbeEvent, ProbeEventKind, StateCapture

from conftest import ALL_TRACES, make_key


def bare_event(kind, uid=1, at=0, **detail):
    return ProbeEvent(kind, make_key(uid), at, StateCapture(kpis=KpiSnapshot.empty(TCP_KPIS, at)), detail)


class TestProfiles:

    def test_lost_syn_gives_two_profiles(self, replay_trace):
        profiles, _, _ = replay_trace("syn_loss.trace")
        assert len(profiles) == 2
        setup, teardown = profiles
        assert (setup.from_state, setup.to_state) == (CONNECTING, ESTABLISHED)
        assert setup.kpis.event_count(KpiId.STALLS) == 1
        assert (setup.window_start, setup.window_end) == (0, 1_030_000_000)
        assert setup.kpis.sample(KpiId.RTT) == WindowStat(1, 30000, 0)
        assert teardown.to_state == closed(EndReason.FINISHED)
        assert teardown.kpis.event_count(KpiId.STALLS) == 0
        assert teardown.kpis.counter(KpiId.SENT) == CounterPair(1000, 1)
        assert teardown.kpis.counter(KpiId.RECEIVED) == CounterPair(1448, 1)
        assert teardown.kpis.sample(KpiId.RTT).count == 0

    def test_retransmission_timeout_gives_four_profiles(self, replay_trace):
        profiles, _, _ = replay_trace("rto.trace")
        assert [(p.from_state, p.to_state) for p in profiles] == [
            (CONNECTING, ESTABLISHED),
            (ESTABLISHED, LOSSY),
            (LOSSY, ESTABLISHED),
            (ESTABLISHED, closed(EndReason.FINISHED)),
        ]
        assert profiles[1].kpis.counter(KpiId.LOST) == CounterPair(1448, 1)
        assert profiles[1].kpis.event_count(KpiId.STALLS) == 1
        assert profiles[1].kpis.sample(KpiId.RTT) == WindowStat(1, 22000, 0)
        assert profiles[3].kpis.sample(KpiId.RTT) == WindowStat(1, 21000, 0)
        assert [p.export_seq for p in profiles] == [1, 2, 3, 4]

    @pytest.mark.parametrize("name", ALL_TRACES)
    def test_windows_tile_each_connection(self, replay_trace, name):
        profiles, _, _ = replay_trace(name)
        by_uid = {}
        for p in profiles:
            by_uid.setdefault(p.uid, []).append(p)
        for seq in by_uid.values():
            for before, after in zip(seq, seq[1:]):
                assert after.window_start == before.window_end
                assert after.from_state == before.to_state
            assert seq[-1].to_state.is_closed

    @pytest.mark.parametrize("name", ALL_TRACES)
    def test_deltas_add_up_to_the_final_counters(self, replay_trace, name):
        profiles, _, events = replay_trace(name)
        last_capture = {e.uid: e.capture for e in events}
        for uid in {p.uid for p in profiles}:
            mine = [p for p in profiles if p.uid == uid]
            final = last_capture[uid]
            for kpi in COUNTER_KPIS:
                if kpi in final.kpis.kpis:
                    total = sum((p.kpis.counter(kpi) for p in mine), CounterPair(0, 0))
                    assert total == final.kpis.counter(kpi), (uid, kpi)
            for kpi in EVENT_KPIS:
                if kpi in final.kpis.kpis:
                    assert sum(p.kpis.event_count(kpi) for p in mine) == final.kpis.event_count(kpi)
            if KpiId.RECEIVED in final.kpis.kpis:
                received = sum(p.kpis.counter(KpiId.RECEIVED).bytes for p in mine)
                assert received == final.bytes_received

    def test_passive_open_starts_at_zero(self, replay_trace):
        profiles, _, _ = replay_trace("accept.trace")
        opened, reset = profiles
        assert (opened.from_state, opened.to_state) == (INIT, ESTABLISHED)
        assert opened.window_start == opened.window_end == 5_000_000
        assert reset.end_reason is EndReason.RESET
        assert reset.kpis.counter(KpiId.RECEIVED) == CounterPair(500, 1)
        assert reset.kpis.counter(KpiId.SENT) == CounterPair(1200, 1)

    def test_connect_error(self, replay_trace):
        (profile,), _, _ = replay_trace("connect_error.trace")
        assert profile.end_reason is EndReason.CONNECT_ERROR
        assert profile.kpis.event_count(KpiId.STALLS) == 1
        assert (profile.window_start, profile.window_end) == (0, 1_200_000_000)

    def test_reordering_and_duplicates(self, replay_trace):
        profiles, _, _ = replay_trace("ofo_dup.trace")
        final = profiles[-1].kpis
        assert final.counter(KpiId.RECEIVED) == CounterPair(3000, 3)
        assert final.counter(KpiId.OFO) == CounterPair(1000, 1)
        assert final.sample(KpiId.OFO_DIST).mean == 1000
        # seq=1500 arrives after the queued segment was released
        assert final.counter(KpiId.DUPLICATES) == CounterPair(2000, 2)

    def test_corruption(self, replay_trace):
        profiles, _, _ = replay_trace("corrupt.trace")
        assert profiles[-1].kpis.counter(KpiId.ERRORS) == CounterPair(200, 2)

    def test_idle_timeout_is_not_a_stall(self, replay_trace):
        profiles, _, _ = replay_trace("lossy_close.trace")
        assert len(profiles) == 3
        lossy = profiles[1]
        assert lossy.to_state == LOSSY
        assert lossy.window_end == 500_000_000
        assert lossy.kpis.event_count(KpiId.STALLS) == 1
        assert profiles[2].kpis.event_count(KpiId.STALLS) == 1
        assert profiles[2].end_reason is EndReason.RESET

    def test_drop_and_trace_end_are_other(self, replay_trace):
        for name in ("ipv6.trace", "trace_end.trace"):
            profiles, _, _ = replay_trace(name)
            assert profiles[-1].end_reason is EndReason.OTHER

    def test_ipv6_rtt_window(self, replay_trace):
        profiles, _, _ = replay_trace("ipv6.trace")
        assert profiles[0].key.ip_version == 6
        assert profiles[-1].kpis.sample(KpiId.RTT) == WindowStat(1, 17000, 0)


class TestAggregator:

    def test_orphan_events_are_counted(self):
        aggregator = Aggregator()
        assert aggregator.consume(bare_event(ProbeEventKind.SEGMENT_VALIDATED)) is None
        assert aggregator.orphans == 1
        assert len(aggregator) == 0

    def test_illegal_transitions_are_counted(self):
        aggregator = Aggregator()
        aggregator.consume(bare_event(ProbeEventKind.CONNECT_ATTEMPT))
        assert aggregator.consume(bare_event(ProbeEventKind.ACCEPT_ESTABLISHED, at=1)) is None
        assert aggregator.illegal == 1

    def test_track_removed_on_close(self):
        aggregator = Aggregator()
        aggregator.consume(bare_event(ProbeEventKind.CONNECT_ATTEMPT))
        assert len(aggregator) == 1
        profile = aggregator.consume(bare_event(ProbeEventKind.STATE_CLOSE, at=5,
                                                end_reason=EndReason.RESET))
        assert profile.end_reason is EndReason.RESET
        assert len(aggregator) == 0
        assert aggregator.profiles == 1

    def test_callback(self, trace_path):
        from tcp_sim.simulator import replay
        from tcp_sim.trace_script import load_trace

        seen = []
        aggregator = Aggregator(on_profile=seen.append)
        replay(load_trace(trace_path("rto.trace")), aggregator.consume)
        assert len(seen) == 4

    def test_record_round_trip(self, replay_trace):
        for name in ("rto.trace", "mptcp_join.trace", "ipv6.trace"):
            profiles, _, _ = replay_trace(name)
            for p in profiles:
                assert profile_from_record(profile_to_record(p)) == p


class TestEventChannel:

    def test_fifo_then_closed(self):
        channel = EventChannel(capacity=4)
        first = bare_event(ProbeEventKind.CONNECT_ATTEMPT)
        second = bare_event(ProbeEventKind.STATE_CLOSE, at=1)
        channel.put(first)
        channel.put(second)
        channel.close()
        assert channel.get() is first
        assert channel.get() is second
        assert channel.get() is None

    def test_live_mode_drops(self):
        channel = EventChannel(capacity=1, mode="live")
        assert channel.put(bare_event(ProbeEventKind.CONNECT_ATTEMPT))
        assert not channel.put(bare_event(ProbeEventKind.CONNECT_ATTEMPT, uid=2))
        assert channel.dropped == 1

    def test_replay_mode_blocks_until_consumed(self):
        channel = EventChannel(capacity=1)
        channel.put(bare_event(ProbeEventKind.CONNECT_ATTEMPT))
        producer = threading.Thread(target=channel.put, args=(bare_event(ProbeEventKind.CONNECT_ATTEMPT, uid=2),))
        producer.start()
        producer.join(timeout=0.1)
        assert producer.is_alive()
        assert channel.get(timeout=1).uid == 1
        producer.join(timeout=1)
        assert channel.get(timeout=1).uid == 2
        assert channel.dropped == 0

    def test_timeout(self):
        with pytest.raises(queue.Empty):
            EventChannel().get(timeout=0.01)

    @pytest.mark.parametrize("kwargs", [{"capacity": 0}, {"mode": "lossy"}])
    def test_bad_arguments(self, kwargs):
        with pytest.raises(ValueError):
            EventChannel(**kwargs)

import random

import pytest

from kpi.kpi_accumulator import CounterPair, KpiAccumulator
from kpi.kpi_catalog import KpiId
from lifecycle.lifecycle_fsm import CONNECTING, ESTABLISHED
from tcp_sim.probe_events import ProbeEventKind
from tcp_sim.tcp_state import (
    SEQ_MODULUS, AncillaryRegistry, OfoQueue, TcpConnState, Verdict, account_classification,
    classify_segment, fire_retransmit_timer, receive, seq_add, seq_diff, update_rtt,
    validate_incoming,
)

from conftest import make_key


def intersect(a_start, a_end, b_start, b_end):
    return max(0, min(a_end, b_end) - max(a_start, b_start))


class TestSequenceArithmetic:

    @pytest.mark.parametrize("a,b,expected", [
        (10, 5, 5),
        (5, 10, -5),
        (3, SEQ_MODULUS - 2, 5),
        (SEQ_MODULUS - 2, 3, -5),
    ])
    def test_seq_diff(self, a, b, expected):
        assert seq_diff(a, b) == expected

    def test_seq_add_wraps(self):
        assert seq_add(SEQ_MODULUS - 1, 2) == 1


class TestClassification:

    def test_byte_range_oracle(self):
        """Every byte of a segment is exactly one of duplicate, in order or out of order."""
        rng = random.Random(6298)
        for _ in range(10_000):
            rcv_nxt = rng.randrange(SEQ_MODULUS)
            offset = rng.randint(-5000, 5000)
            length = rng.randint(1, 3000)
            seq = (rcv_nxt + offset) % SEQ_MODULUS
            cls = classify_segment(rcv_nxt, seq, length)

            start, end = offset, offset + length
            expected_dup = intersect(start, end, -(1 << 31), 0)
            assert cls.dup_bytes == expected_dup
            assert cls.dup_bytes + cls.in_order_bytes + cls.ofo_bytes == length
            if start > 0:
                assert cls.verdict is Verdict.OUT_OF_ORDER
                assert cls.distance == start
                assert cls.in_order_bytes == 0
            elif expected_dup:
                assert cls.verdict is Verdict.DUPLICATE
                assert cls.in_order_bytes == intersect(start, end, 0, 1 << 31)
            else:
                assert cls.verdict is Verdict.IN_ORDER
                assert cls.in_order_bytes == length

    def test_partial_overlap(self):
        cls = classify_segment(2000, 1500, 1000)
        assert (cls.dup_bytes, cls.in_order_bytes, cls.ofo_bytes) == (500, 500, 0)

    def test_zero_length_rejected(self):
        with pytest.raises(ValueError):
            classify_segment(0, 0, 0)

    def test_accounting(self):
        acc = KpiAccumulator()
        account_classification(acc, classify_segment(1000, 3000, 500))
        account_classification(acc, classify_segment(1000, 500, 1000))
        assert acc.counters[KpiId.OFO] == CounterPair(500, 1)
        assert acc.counters[KpiId.DUPLICATES] == CounterPair(500, 1)
        assert acc.counters[KpiId.RECEIVED] == CounterPair(500, 1)
        assert acc.samples[KpiId.OFO_DIST].mean == 2000


class TestRtt:
    """RFC 6298 smoothing."""

    def test_first_sample(self):
        state = update_rtt(TcpConnState(make_key()), 100)
        assert (state.srtt, state.rttvar) == (100.0, 50.0)

    def test_following_samples(self):
        state = TcpConnState(make_key())
        update_rtt(state, 100)
        update_rtt(state, 200)
        assert state.rttvar == pytest.approx(0.75 * 50 + 0.25 * 100)
        assert state.srtt == pytest.approx(0.875 * 100 + 0.125 * 200)

    def test_samples_feed_the_window(self):
        registry = AncillaryRegistry()
        ancillary = registry.register(1, 0)
        state = TcpConnState(make_key())
        for sample in (10, 20, 30):
            update_rtt(state, sample, ancillary)
        stat = ancillary.kpis.samples[KpiId.RTT]
        assert stat.count == 3
        assert stat.mean == pytest.approx(20.0)

    def test_non_positive_sample(self):
        with pytest.raises(ValueError):
            update_rtt(TcpConnState(make_key()), 0)


class TestValidateIncoming:

    def test_advances_rcv_nxt(self):
        state = TcpConnState(make_key(), lifecycle=ESTABLISHED)
        validate_incoming(state, None, 0, 1000)
        validate_incoming(state, None, 500, 1000)
        assert state.rcv_nxt == 1500
        assert state.bytes_received == 1500
        assert state.segs_received == 2

    def test_gap_fill_releases_queued_data(self):
        registry = AncillaryRegistry()
        ancillary = registry.register(1, 0)
        state = TcpConnState(make_key(), lifecycle=ESTABLISHED)
        verdicts = [validate_incoming(state, ancillary, seq, 1000).verdict
                    for seq in (0, 2000, 1000, 3000)]
        assert verdicts == [Verdict.IN_ORDER, Verdict.OUT_OF_ORDER, Verdict.IN_ORDER,
                            Verdict.IN_ORDER]
        assert state.rcv_nxt == 4000
        assert state.bytes_received == 4000
        assert ancillary.ofo == CounterPair(1000, 1)
        assert ancillary.kpis.counters[KpiId.RECEIVED] == CounterPair(4000, 4)
        assert len(state.ofo_queue) == 0

    def test_release_reports_drained_bytes(self):
        state = TcpConnState(make_key(), lifecycle=ESTABLISHED)
        validate_incoming(state, None, 1000, 500)
        validate_incoming(state, None, 2000, 500)
        cls = validate_incoming(state, None, 0, 1000)
        assert cls.drained_bytes == 500
        assert cls.delivered_bytes == 1500
        assert state.rcv_nxt == 1500
        assert len(state.ofo_queue) == 1

    def test_requires_live_connection(self):
        with pytest.raises(ValueError):
            validate_incoming(TcpConnState(make_key(), lifecycle=CONNECTING), None, 0, 10)


class TestOfoQueue:

    def test_overlapping_segments_release_each_byte_once(self):
        queue = OfoQueue()
        queue.add(1000, 1000)
        queue.add(1500, 1000)
        queue.add(1200, 100)
        pieces = queue.drain(1000)
        assert [(p.seq, p.length) for p in pieces] == [(1000, 1000), (2000, 500)]
        assert len(queue) == 0

    def test_gap_keeps_later_segments(self):
        queue = OfoQueue()
        queue.add(3000, 500)
        queue.add(1000, 500)
        assert [(p.seq, p.length) for p in queue.drain(1000)] == [(1000, 500)]
        assert [s.seq for s in queue.segments] == [3000]

    def test_partly_covered_segment_shifts_its_mapping(self):
        queue = OfoQueue()
        queue.add(900, 300, dss=10_900)
        (piece,) = queue.drain(1000)
        assert (piece.seq, piece.length, piece.dss) == (1000, 200, 11_000)

    def test_wraps_around_sequence_space(self):
        rcv_nxt, cls = receive(SEQ_MODULUS - 100, OfoQueue(), 50, 100)
        assert cls.verdict is Verdict.OUT_OF_ORDER
        queue = OfoQueue()
        queue.add(50, 100)
        rcv_nxt, cls = receive(SEQ_MODULUS - 100, queue, SEQ_MODULUS - 100, 150)
        assert rcv_nxt == 150
        assert cls.delivered_bytes == 250

    def test_matches_byte_set_model(self):
        rng = random.Random(7)
        for _ in range(300):
            queue = OfoQueue()
            rcv_nxt = 0
            seen = set()
            for _ in range(20):
                seq = rng.randrange(0, 4000)
                length = rng.randrange(1, 600)
                rcv_nxt, cls = receive(rcv_nxt, queue, seq, length)
                seen.update(range(seq, seq + length))
                expected = 0
                while expected in seen:
                    expected += 1
                assert rcv_nxt == expected


class TestRetransmitTimer:

    def test_syn_timeout_is_a_stall(self):
        registry = AncillaryRegistry()
        ancillary = registry.register(1, 0)
        event = fire_retransmit_timer(TcpConnState(make_key()), ancillary, CONNECTING, 10)
        assert event.kind is ProbeEventKind.RETRANSMIT_TIMEOUT
        assert event.detail["stalled"] is True
        assert ancillary.stalls == 1

    def test_idle_timeout_is_not_a_stall(self):
        registry = AncillaryRegistry()
        ancillary = registry.register(1, 0)
        state = TcpConnState(make_key(), lifecycle=ESTABLISHED)
        event = fire_retransmit_timer(state, ancillary, ESTABLISHED, 10)
        assert event.detail["stalled"] is False
        assert ancillary.stalls == 0
        assert not state.ca_open

    def test_retransmission_counts_lost(self):
        registry = AncillaryRegistry()
        ancillary = registry.register(1, 0)
        state = TcpConnState(make_key(), lifecycle=ESTABLISHED)
        event = fire_retransmit_timer(state, ancillary, ESTABLISHED, 10, retrans_bytes=1448)
        assert event.detail["stalled"] is True
        assert ancillary.kpis.counters[KpiId.LOST] == CounterPair(1448, 1)
        assert event.capture.bytes_retrans == 1448


class TestAncillaryRegistry:

    def test_capacity(self):
        registry = AncillaryRegistry()
        for uid in range(1, 3002):
            registry.register(uid, 0)
        assert len(registry) == 3000
        assert registry.refused == 1
        assert registry.lookup(3001) is None

    def test_register_is_idempotent(self):
        registry = AncillaryRegistry(capacity=1)
        first = registry.register(1, 0)
        assert registry.register(1, 5) is first
        assert registry.refused == 0

    def test_purge_frees_a_slot(self):
        registry = AncillaryRegistry(capacity=1)
        registry.register(1, 0)
        registry.purge(1)
        assert registry.register(2, 0) is not None
        registry.purge(99)

import pytest

from kpi.kpi_accumulator import KpiSnapshot
from kpi.kpi_catalog import META_KPIS, TCP_KPIS
from lifecycle.lifecycle_fsm import (
    CONNECTING, ESTABLISHED, INIT, LOSSY, EndReason, IllegalTransition, LifecycleState, Phase,
    Transition, apply_event, can_transition, closed,
)
from tcp_sim.probe_events import ProbeEvent, ProbeEventKind, Protocol, StateCapture

from conftest import make_key

K = ProbeEventKind


def event(kind, at=0, protocol=Protocol.TCP, **detail):
    kpis = META_KPIS if protocol is Protocol.MPTCP_META else TCP_KPIS
    uid = (1 << 63) | 1 if protocol is Protocol.MPTCP_META else 1
    return ProbeEvent(kind, make_key(uid, protocol=protocol), at,
                      StateCapture(kpis=KpiSnapshot.empty(kpis, at)), detail)


class TestLifecycleState:
    """State values and their invariants."""

    def test_closed_carries_reason(self):
        state = closed(EndReason.RESET)
        assert state.is_closed
        assert not state.is_live
        assert str(state) == "Closed(Reset)"

    def test_reason_only_on_closed(self):
        with pytest.raises(ValueError):
            LifecycleState(Phase.ESTABLISHED, EndReason.FINISHED)
        with pytest.raises(ValueError):
            LifecycleState(Phase.CLOSED)

    @pytest.mark.parametrize("state,live", [
        (INIT, False), (CONNECTING, True), (ESTABLISHED, True), (LOSSY, True),
    ])
    def test_liveness(self, state, live):
        assert state.is_live is live


class TestTransitions:
    """Exporting and silent edges of the machine."""

    def test_active_open_is_silent(self):
        nxt, export = apply_event(INIT, event(K.CONNECT_ATTEMPT))
        assert nxt == CONNECTING
        assert export is None

    def test_establishment_exports(self):
        nxt, export = apply_event(CONNECTING, event(K.CONNECT_ESTABLISHED, at=5))
        assert nxt == ESTABLISHED
        assert export == Transition(CONNECTING, ESTABLISHED, K.CONNECT_ESTABLISHED, 5)

    def test_lost_syn_stays_connecting(self):
        nxt, export = apply_event(CONNECTING, event(K.RETRANSMIT_TIMEOUT, stalled=True))
        assert nxt == CONNECTING
        assert export is None

    @pytest.mark.parametrize("kind", [K.ACCEPT_ESTABLISHED, K.SUBFLOW_JOIN])
    def test_passive_establishment(self, kind):
        nxt, export = apply_event(INIT, event(kind))
        assert nxt == ESTABLISHED
        assert export.from_state == INIT

    def test_meta_socket_starts_established(self):
        nxt, export = apply_event(INIT, event(K.CONNECT_ESTABLISHED, protocol=Protocol.MPTCP_META))
        assert nxt == ESTABLISHED
        assert export is not None

    def test_stalled_rto_goes_lossy(self):
        nxt, export = apply_event(ESTABLISHED, event(K.RETRANSMIT_TIMEOUT, stalled=True))
        assert nxt == LOSSY
        assert export.to_state == LOSSY

    def test_idle_rto_is_not_a_transition(self):
        nxt, export = apply_event(ESTABLISHED, event(K.RETRANSMIT_TIMEOUT, stalled=False))
        assert nxt == ESTABLISHED
        assert export is None

    def test_meta_rto_goes_lossy(self):
        nxt, _ = apply_event(ESTABLISHED, event(K.META_RETRANSMIT_TIMEOUT, protocol=Protocol.MPTCP_META))
        assert nxt == LOSSY

    def test_recovery_leaves_lossy(self):
        nxt, export = apply_event(LOSSY, event(K.RECOVERY_COMPLETE))
        assert nxt == ESTABLISHED
        assert export.from_state == LOSSY

    def test_repeated_timeouts_stay_lossy(self):
        nxt, export = apply_event(LOSSY, event(K.RETRANSMIT_TIMEOUT, stalled=True))
        assert nxt == LOSSY
        assert export is None

    @pytest.mark.parametrize("state", [CONNECTING, ESTABLISHED, LOSSY])
    @pytest.mark.parametrize("reason", list(EndReason))
    def test_close_from_any_live_state(self, state, reason):
        nxt, export = apply_event(state, event(K.STATE_CLOSE, end_reason=reason))
        assert nxt == closed(reason)
        assert export.to_state.end_reason is reason

    def test_connect_error(self):
        nxt, _ = apply_event(CONNECTING, event(K.CONNECT_ERROR, end_reason=EndReason.CONNECT_ERROR))
        assert nxt == closed(EndReason.CONNECT_ERROR)

    @pytest.mark.parametrize("state", [ESTABLISHED, LOSSY])
    @pytest.mark.parametrize("kind", [K.SEGMENT_VALIDATED, K.SUBFLOW_REINJECT])
    def test_data_path_events_do_not_move(self, state, kind):
        assert apply_event(state, event(kind)) == (state, None)


class TestIllegal:
    """Events that cannot happen in a state."""

    @pytest.mark.parametrize("kind", list(ProbeEventKind))
    def test_nothing_after_close(self, kind):
        with pytest.raises(IllegalTransition):
            apply_event(closed(EndReason.FINISHED), event(kind))

    @pytest.mark.parametrize("state,kind", [
        (INIT, K.SEGMENT_VALIDATED),
        (INIT, K.STATE_CLOSE),
        (CONNECTING, K.SEGMENT_VALIDATED),
        (CONNECTING, K.ACCEPT_ESTABLISHED),
        (ESTABLISHED, K.CONNECT_ESTABLISHED),
        (LOSSY, K.SUBFLOW_JOIN),
    ])
    def test_rejected(self, state, kind):
        with pytest.raises(IllegalTransition):
            apply_event(state, event(kind))

    def test_transition_must_be_an_edge(self):
        with pytest.raises(IllegalTransition):
            Transition(INIT, LOSSY, K.RETRANSMIT_TIMEOUT, 0)

    def test_can_transition(self):
        assert can_transition(LOSSY, ESTABLISHED)
        assert not can_transition(INIT, closed(EndReason.OTHER))

    def test_graceful_close_needs_an_established_connection(self):
        assert not can_transition(CONNECTING, closed(EndReason.FINISHED))
        assert can_transition(CONNECTING, closed(EndReason.RESET))
        assert can_transition(LOSSY, closed(EndReason.FINISHED))
        with pytest.raises(IllegalTransition):
            Transition(CONNECTING, closed(EndReason.FINISHED), K.STATE_CLOSE, 0)
        with pytest.raises(IllegalTransition):
            apply_event(CONNECTING, event(K.STATE_CLOSE, end_reason=EndReason.FINISHED))

"""Abstract connection lifecycle.

The machine is deliberately coarser than the RFC 793 one: it only has the
states whose transitions say something about performance. Each exporting
transition cuts a performance profile.

    Init --attempt--> Connecting --established--> Established <--> Lossy
      \\________________accept / join_______________/      |         |
                                                          v         v
                                  any live state ------> Closed(reason)
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Tuple

from tcp_sim.probe_events import ProbeEvent, ProbeEventKind, Protocol


class LifecycleError(ValueError):
    pass


class IllegalTransition(LifecycleError):
    """The event cannot happen in the current state (malformed trace or probe bug)."""


class Phase(enum.IntEnum):
    INIT = 0
    CONNECTING = 1
    ESTABLISHED = 2
    LOSSY = 3
    CLOSED = 4


class EndReason(enum.IntEnum):
    FINISHED = 1
    RESET = 2
    CONNECT_ERROR = 3
    OTHER = 4


@dataclass(frozen=True)
class LifecycleState:
    phase: Phase
    end_reason: Optional[EndReason] = None

    def __post_init__(self):
        if (self.phase is Phase.CLOSED) != (self.end_reason is not None):
            raise ValueError("an end reason is carried by Closed and only by Closed")

    @property
    def is_closed(self) -> bool:
        return self.phase is Phase.CLOSED

    @property
    def is_live(self) -> bool:
        return self.phase in (Phase.CONNECTING, Phase.ESTABLISHED, Phase.LOSSY)

    def __str__(self):
        if self.end_reason is not None:
            return f"Closed({self.end_reason.name.title()})"
        return self.phase.name.title()


INIT = LifecycleState(Phase.INIT)
CONNECTING = LifecycleState(Phase.CONNECTING)
ESTABLISHED = LifecycleState(Phase.ESTABLISHED)
LOSSY = LifecycleState(Phase.LOSSY)


def closed(reason: EndReason) -> LifecycleState:
    return LifecycleState(Phase.CLOSED, reason)


# Phase edges of the machine; can_transition adds the end-reason rule.
VALID_EDGES = {
    Phase.INIT: {Phase.CONNECTING, Phase.ESTABLISHED},
    Phase.CONNECTING: {Phase.ESTABLISHED, Phase.CLOSED},
    Phase.ESTABLISHED: {Phase.LOSSY, Phase.CLOSED},
    Phase.LOSSY: {Phase.ESTABLISHED, Phase.CLOSED},
    Phase.CLOSED: set(),
}


def can_transition(current: LifecycleState, target: LifecycleState) -> bool:
    if target.phase not in VALID_EDGES[current.phase]:
        return False
    # a graceful close needs the FIN exchange of an established connection
    if target.end_reason is EndReason.FINISHED:
        return current.phase in (Phase.ESTABLISHED, Phase.LOSSY)
    return True


@dataclass(frozen=True)
class Transition:
    from_state: LifecycleState
    to_state: LifecycleState
    trigger: ProbeEventKind
    at: int

    def __post_init__(self):
        if not can_transition(self.from_state, self.to_state):
            raise IllegalTransition(f"{self.from_state} -> {self.to_state} is not an edge")

    def __str__(self):
        return f"{self.from_state}->{self.to_state}"


# Events that only update ancillary state once the connection is up.
_PASSIVE_EVENTS = {
    ProbeEventKind.SEGMENT_VALIDATED,
    ProbeEventKind.SUBFLOW_REINJECT,
}


def end_reason_of(event: ProbeEvent) -> EndReason:
    reason = event.detail.get("end_reason", EndReason.OTHER)
    return EndReason(reason)


def apply_event(state: LifecycleState,
                event: ProbeEvent) -> Tuple[LifecycleState, Optional[Transition]]:
    """Successor state, and the transition to export if this event cuts a profile."""
    kind = event.kind
    phase = state.phase

    def export(target: LifecycleState):
        return target, Transition(state, target, kind, event.at)

    def stay():
        return state, None

    if phase is Phase.CLOSED:
        raise IllegalTransition(f"{kind.value} after close of connection {event.uid}")

    if phase is Phase.INIT:
        if kind is ProbeEventKind.CONNECT_ATTEMPT:
            return CONNECTING, None
        if kind in (ProbeEventKind.ACCEPT_ESTABLISHED, ProbeEventKind.SUBFLOW_JOIN):
            return export(ESTABLISHED)
        # a meta-socket only exists once the SYN+ACK carried MP_CAPABLE
        if kind is ProbeEventKind.CONNECT_ESTABLISHED and event.key.protocol is Protocol.MPTCP_META:
            return export(ESTABLISHED)

    elif phase is Phase.CONNECTING:
        if kind is ProbeEventKind.CONNECT_ESTABLISHED:
            return export(ESTABLISHED)
        if kind is ProbeEventKind.CONNECT_ERROR:
            return export(closed(EndReason.CONNECT_ERROR))
        if kind is ProbeEventKind.RETRANSMIT_TIMEOUT:
            # lost SYN: counted as a stall inside the establishment profile
            return stay()
        if kind is ProbeEventKind.STATE_CLOSE:
            return export(closed(end_reason_of(event)))

    elif phase is Phase.ESTABLISHED:
        if kind is ProbeEventKind.RETRANSMIT_TIMEOUT:
            if event.detail.get("stalled", False):
                return export(LOSSY)
            return stay()
        if kind is ProbeEventKind.META_RETRANSMIT_TIMEOUT:
            return export(LOSSY)
        if kind is ProbeEventKind.RECOVERY_COMPLETE:
            # fast recovery finished without an RTO; nothing to mark
            return stay()
        if kind is ProbeEventKind.STATE_CLOSE:
            return export(closed(end_reason_of(event)))
        if kind in _PASSIVE_EVENTS:
            return stay()

    elif phase is Phase.LOSSY:
        if kind in (ProbeEventKind.RETRANSMIT_TIMEOUT, ProbeEventKind.META_RETRANSMIT_TIMEOUT):
            return stay()
        if kind is ProbeEventKind.RECOVERY_COMPLETE:
            return export(ESTABLISHED)
        if kind is ProbeEventKind.STATE_CLOSE:
            return export(closed(end_reason_of(event)))
        if kind in _PASSIVE_EVENTS:
            return stay()

    raise IllegalTransition(f"{kind.value} while {state} (connection {event.uid})")

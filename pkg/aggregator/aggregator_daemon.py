"""User-space aggregation of probe events into performance profiles.

The daemon keeps, per connection, the lifecycle state and the KPI snapshot
taken at the last export. Every exporting transition closes a window: the
profile is the KPI delta between the stored snapshot and the event's one.
"""
from __future__ import annotations

import logging
import queue
from dataclasses import dataclass
from typing import Callable, Dict, Optional

from aggregator.profiles import PerformanceProfile, ProfileKpis
from kpi.kpi_accumulator import KpiSnapshot, delta
from lifecycle.lifecycle_fsm import INIT, IllegalTransition, LifecycleState, apply_event
from tcp_sim.probe_events import ProbeEvent, ProbeEventKind, Protocol

logger = logging.getLogger(__name__)

DEFAULT_CHANNEL_CAPACITY = 4096
CHANNEL_MODES = ("replay", "live")


class AggregationError(ValueError):
    pass


class OrphanEvent(AggregationError):
    """Event for a connection the daemon never saw being registered."""


@dataclass
class ConnectionTrack:
    lifecycle: LifecycleState
    snapshot: KpiSnapshot
    export_seq: int = 0


def _opens_connection(event: ProbeEvent) -> bool:
    if event.kind in (ProbeEventKind.CONNECT_ATTEMPT, ProbeEventKind.ACCEPT_ESTABLISHED,
                      ProbeEventKind.SUBFLOW_JOIN):
        return True
    return (event.kind is ProbeEventKind.CONNECT_ESTABLISHED
            and event.key.protocol is Protocol.MPTCP_META)


class Aggregator:
    """Single-threaded owner of all per-connection aggregation state."""

    def __init__(self, on_profile: Optional[Callable[[PerformanceProfile], None]] = None):
        self.on_profile = on_profile
        self.tracks: Dict[int, ConnectionTrack] = {}
        self.orphans = 0
        self.illegal = 0
        self.profiles = 0

    def __len__(self):
        return len(self.tracks)

    def _track_for(self, event: ProbeEvent) -> ConnectionTrack:
        track = self.tracks.get(event.uid)
        if track is not None:
            return track
        if not _opens_connection(event):
            raise OrphanEvent(f"{event.kind.value} for unregistered connection {event.uid}")
        if event.kind is ProbeEventKind.CONNECT_ATTEMPT:
            baseline = event.capture.kpis
        else:
            # first seen already established: nothing before this instant
            baseline = KpiSnapshot.empty(event.capture.kpis.kpis, event.at)
        track = ConnectionTrack(INIT, baseline)
        self.tracks[event.uid] = track
        return track

    def consume(self, event: ProbeEvent) -> Optional[PerformanceProfile]:
        try:
            track = self._track_for(event)
        except OrphanEvent as e:
            self.orphans += 1
            logger.warning("%s (orphans: %d)", e, self.orphans)
            return None

        try:
            nxt, transition = self._advance(track, event)
        except IllegalTransition as e:
            self.illegal += 1
            logger.warning("Dropping event: %s (illegal: %d)", e, self.illegal)
            return None
        if transition is None:
            return None

        after = event.capture.kpis
        window = delta(track.snapshot, after)
        track.export_seq += 1
        profile = PerformanceProfile(
            key=event.key,
            from_state=transition.from_state,
            to_state=transition.to_state,
            trigger=transition.trigger,
            window_start=window.window_start,
            window_end=window.window_end,
            kpis=ProfileKpis.from_delta(window),
            export_seq=track.export_seq,
            meta_uid=event.meta_uid,
        )
        track.snapshot = after
        if nxt.is_closed:
            del self.tracks[event.uid]

        self.profiles += 1
        logger.debug("profile %s", profile)
        if self.on_profile is not None:
            self.on_profile(profile)
        return profile

    @staticmethod
    def _advance(track: ConnectionTrack, event: ProbeEvent):
        nxt, transition = apply_event(track.lifecycle, event)
        track.lifecycle = nxt
        return nxt, transition


class EventChannel:
    """Bounded FIFO between the probes and the aggregation thread.

    In replay mode a full channel blocks the producer; in live mode the
    event is dropped and counted, like a full perf ring buffer.
    """

    _CLOSED = object()

    def __init__(self, capacity: int = DEFAULT_CHANNEL_CAPACITY, mode: str = "replay"):
        if capacity <= 0:
            raise ValueError(f"channel capacity must be positive, got {capacity}")
        if mode not in CHANNEL_MODES:
            raise ValueError(f"channel mode must be one of {', '.join(CHANNEL_MODES)}, got {mode!r}")
        self.mode = mode
        self.queue: "queue.Queue" = queue.Queue(maxsize=capacity)
        self.dropped = 0

    def put(self, event: ProbeEvent) -> bool:
        if self.mode == "replay":
            self.queue.put(event)
            return True
        try:
            self.queue.put_nowait(event)
            return True
        except queue.Full:
            self.dropped += 1
            logger.warning("Event channel full, dropped %s for %d (dropped: %d)",
                           event.kind.value, event.uid, self.dropped)
            return False

    def close(self) -> None:
        self.queue.put(self._CLOSED)

    def get(self, timeout: Optional[float] = None) -> Optional[ProbeEvent]:
        """Next event; None once closed. Raises queue.Empty on timeout."""
        item = self.queue.get(timeout=timeout)
        return None if item is self._CLOSED else item

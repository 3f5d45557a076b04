"""Probe events in, IPFIX messages out.

    simulator --> EventChannel --> consumer thread (Aggregator + ExportBuffer)
                                         |
                                       outbox --> sender thread --> send()

The consumer owns every piece of aggregation state; the two queues are the
only cross-thread boundaries.
"""
from __future__ import annotations

import logging
import queue
import threading
from typing import Callable, List, Optional

from aggregator.aggregator_daemon import DEFAULT_CHANNEL_CAPACITY, Aggregator, EventChannel
from aggregator.export_buffer import ExportBuffer
from aggregator.profiles import PerformanceProfile
from ipfix.ipfix_codec import IpfixMessage
from tcp_sim.probe_events import ProbeEvent

logger = logging.getLogger(__name__)

IDLE_POLL_SECONDS = 0.2


class ExportPipeline:

    def __init__(self, buffer: ExportBuffer, send: Callable[[IpfixMessage], object],
                 capacity: int = DEFAULT_CHANNEL_CAPACITY, mode: str = "replay",
                 poll_seconds: float = IDLE_POLL_SECONDS):
        self.aggregator = Aggregator()
        self.buffer = buffer
        self.send = send
        self.channel = EventChannel(capacity, mode)
        self.outbox: "queue.Queue[Optional[IpfixMessage]]" = queue.Queue()
        self.poll_seconds = poll_seconds

        self.profiles: List[PerformanceProfile] = []
        self.messages: List[IpfixMessage] = []
        self.errors = 0
        self._consumer = threading.Thread(target=self._consume_loop, name="kpiflow-aggregator", daemon=True)
        self._sender = threading.Thread(target=self._send_loop, name="kpiflow-sender", daemon=True)

    def start(self) -> "ExportPipeline":
        self._consumer.start()
        self._sender.start()
        return self

    def submit(self, event: ProbeEvent) -> None:
        self.channel.put(event)

    def close(self) -> None:
        """Drain the channel, flush what is pending and wait for the sender."""
        self.channel.close()
        self._consumer.join()
        self._sender.join()
        logger.info("Pipeline closed: %d profiles, %d messages, %d dropped events, "
                    "%d orphans, %d illegal, %d errors",
                    len(self.profiles), len(self.messages), self.channel.dropped,
                    self.aggregator.orphans, self.aggregator.illegal, self.errors)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    def _emit(self, message: Optional[IpfixMessage]) -> None:
        if message is not None:
            self.outbox.put(message)

    def _consume_loop(self) -> None:
        while True:
            try:
                event = self.channel.get(timeout=self.poll_seconds)
            except queue.Empty:
                self._emit(self.buffer.flush_if_idle())
                continue
            if event is None:
                break
            try:
                profile = self.aggregator.consume(event)
                if profile is not None:
                    self.profiles.append(profile)
                    self._emit(self.buffer.buffer_record(profile))
            except ValueError:
                self.errors += 1
                logger.error("Failed to aggregate %s for %d", event.kind.value, event.uid, exc_info=True)
            self._emit(self.buffer.flush_if_idle())
        self._emit(self.buffer.flush())
        self.outbox.put(None)

    def _send_loop(self) -> None:
        while True:
            message = self.outbox.get()
            if message is None:
                break
            self.messages.append(message)
            try:
                self.send(message)
            except Exception:
                self.errors += 1
                logger.error("Failed to send IPFIX message seq=%d", message.sequence, exc_info=True)

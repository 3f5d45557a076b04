"""UDP IPFIX collector feeding the profile store."""
from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from dataclasses import asdict, dataclass
from typing import Optional

from aggregator.profiles import profile_from_record
from collector.profile_store import ProfileStore
from ipfix.exporter import IPFIX_PORT
from ipfix.information_elements import DEFAULT_ENTERPRISE_NUMBER, load_registry
from ipfix.ipfix_codec import TemplateCache, decode

logger = logging.getLogger(__name__)

MAX_DATAGRAM = 65535


@dataclass
class IngestStats:
    datagrams: int = 0
    appended: int = 0
    malformed: int = 0
    undecodable_sets: int = 0
    recovered: int = 0
    rejected: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


class Collector:

    def __init__(self, store: ProfileStore, enterprise_number: int = DEFAULT_ENTERPRISE_NUMBER,
                 clock=time.time):
        self.store = store
        self.cache = TemplateCache(load_registry(enterprise_number=enterprise_number))
        self.stats = IngestStats()
        self.clock = clock
        self._stop = threading.Event()
        self.bound_address = None

    def ingest(self, datagram: bytes, peer: Optional[str] = None) -> int:
        """Decode one datagram and append its profiles; never raises on bad input."""
        self.stats.datagrams += 1
        try:
            result = decode(datagram, self.cache, peer)
        except (ValueError, struct.error) as e:
            self.stats.malformed += 1
            logger.warning("Malformed datagram from %s: %s (malformed: %d)", peer, e, self.stats.malformed)
            return 0

        self.stats.undecodable_sets += result.undecodable_sets
        self.stats.recovered += result.recovered
        if result.undecodable_sets:
            logger.warning("%d data set(s) from %s wait for their template", result.undecodable_sets, peer)

        profiles = []
        for record in result.records:
            try:
                profiles.append(profile_from_record(record))
            except (KeyError, ValueError, TypeError) as e:
                self.stats.rejected += 1
                logger.warning("Record from %s is not a profile: %s (rejected: %d)",
                               peer, e, self.stats.rejected)
        self.store.extend(profiles, peer=peer, received_at=self.clock())
        self.stats.appended += len(profiles)
        logger.debug("datagram from %s: %d profiles", peer, len(profiles))
        return len(profiles)

    def serve(self, host: str = "0.0.0.0", port: int = IPFIX_PORT,
              max_datagrams: Optional[int] = None, ready: Optional[threading.Event] = None,
              poll_seconds: float = 0.5) -> IngestStats:
        """Receive loop; returns after ``max_datagrams`` or once ``stop()`` is called."""
        family = socket.AF_INET6 if ":" in host else socket.AF_INET
        with socket.socket(family, socket.SOCK_DGRAM) as sock:
            sock.bind((host, port))
            sock.settimeout(poll_seconds)
            self.bound_address = sock.getsockname()
            logger.info("Collector listening on %s:%d", self.bound_address[0], self.bound_address[1])
            if ready is not None:
                ready.set()
            received = 0
            while not self._stop.is_set():
                if max_datagrams is not None and received >= max_datagrams:
                    break
                try:
                    data, addr = sock.recvfrom(MAX_DATAGRAM)
                except socket.timeout:
                    continue
                received += 1
                self.ingest(data, peer=f"{addr[0]}:{addr[1]}")
        logger.info("Collector stopped: %s", self.stats.as_dict())
        return self.stats

    def stop(self) -> None:
        self._stop.set()

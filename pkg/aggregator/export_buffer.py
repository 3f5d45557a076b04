"""MTU-bounded IPFIX message assembly.

Records wait in the pending message until the next one would push it past
the MTU, or until the idle deadline passes. A template travels in the same
message as the first record that needs it and again every
``resend_interval`` messages.
"""
from __future__ import annotations

import logging
import time
from typing import Callable, Dict, List, Mapping, Optional, Tuple

from aggregator.profiles import PerformanceProfile, profile_to_record
from ipfix.information_elements import Template, template_id_for
from ipfix.ipfix_codec import (
    HEADER, SET_HEADER, IpfixMessage, Record, TemplateSet, encode_record, group_records,
)

logger = logging.getLogger(__name__)

DEFAULT_MTU = 1500
MIN_MTU = 576
DEFAULT_IDLE_FLUSH_SECONDS = 5.0
DEFAULT_TEMPLATE_RESEND_INTERVAL = 20


class ExportError(ValueError):
    pass


class RecordTooLarge(ExportError):
    pass


class ExportBuffer:

    def __init__(self, templates: Mapping[int, Template], mtu: int = DEFAULT_MTU,
                 observation_domain: int = 1,
                 resend_interval: int = DEFAULT_TEMPLATE_RESEND_INTERVAL,
                 idle_flush_seconds: float = DEFAULT_IDLE_FLUSH_SECONDS,
                 clock: Callable[[], float] = time.monotonic,
                 wall_clock: Callable[[], float] = time.time):
        if mtu < HEADER.size + SET_HEADER.size:
            raise ExportError(f"MTU {mtu} cannot hold an IPFIX message")
        if resend_interval <= 0:
            raise ExportError(f"template resend interval must be positive, got {resend_interval}")
        self.templates: Dict[int, Template] = dict(templates)
        self.mtu = mtu
        self.observation_domain = observation_domain
        self.resend_interval = resend_interval
        self.idle_flush_seconds = idle_flush_seconds
        self.clock = clock
        self.wall_clock = wall_clock

        self.pending: List[Tuple[int, Record]] = []
        self.pending_templates: List[int] = []
        self.size = HEADER.size
        self.first_pending_at: Optional[float] = None

        self.message_seq = 0  # data records exported so far, the IPFIX sequence number
        self.messages = 0
        self.last_announced: Dict[int, int] = {}

    def __len__(self):
        return len(self.pending)

    def _template(self, template_id: int) -> Template:
        template = self.templates.get(template_id)
        if template is None:
            raise ExportError(f"no template {template_id} registered with the export buffer")
        return template

    def _needs_announcement(self, template_id: int) -> bool:
        if template_id in self.pending_templates:
            return False
        last = self.last_announced.get(template_id)
        return last is None or self.messages - last >= self.resend_interval

    def _growth(self, template: Template) -> int:
        """Octets the pending message grows by when one more record of ``template`` joins."""
        growth = template.record_length
        if self._needs_announcement(template.template_id):
            growth += template.encoded_length
            if not self.pending_templates:
                growth += SET_HEADER.size
        if not self.pending or self.pending[-1][0] != template.template_id:
            growth += SET_HEADER.size
        return growth

    def add(self, template_id: int, record: Record) -> Optional[IpfixMessage]:
        """Buffer one record; returns the message flushed to make room, if any."""
        template = self._template(template_id)
        encode_record(template, record)  # FieldLengthMismatch surfaces here, not at flush

        alone = (HEADER.size + 2 * SET_HEADER.size + template.encoded_length
                 + template.record_length)
        if alone > self.mtu:
            raise RecordTooLarge(f"a template {template_id} record needs {alone} octets "
                                 f"with its headers, MTU is {self.mtu}")

        flushed = None
        if self.pending and self.size + self._growth(template) > self.mtu:
            flushed = self.flush()

        self.size += self._growth(template)
        if self._needs_announcement(template_id):
            self.pending_templates.append(template_id)
        self.pending.append((template_id, record))
        if self.first_pending_at is None:
            self.first_pending_at = self.clock()
        return flushed

    def buffer_record(self, profile: PerformanceProfile) -> Optional[IpfixMessage]:
        template_id = template_id_for(profile.is_meta, profile.key.ip_version)
        return self.add(template_id, profile_to_record(profile))

    def flush(self) -> Optional[IpfixMessage]:
        if not self.pending:
            return None
        sets = []
        if self.pending_templates:
            sets.append(TemplateSet(tuple(self.templates[t] for t in self.pending_templates)))
        sets.extend(group_records(self.pending))
        message = IpfixMessage(
            export_time=int(self.wall_clock()),
            sequence=self.message_seq % (1 << 32),
            observation_domain=self.observation_domain,
            sets=tuple(sets),
        )

        for template_id in self.pending_templates:
            self.last_announced[template_id] = self.messages
        self.messages += 1
        self.message_seq += len(self.pending)
        logger.info("Flushing IPFIX message %d: %d records, %d octets, %d template(s)",
                    self.messages, len(self.pending), self.size, len(self.pending_templates))

        self.pending = []
        self.pending_templates = []
        self.size = HEADER.size
        self.first_pending_at = None
        return message

    def flush_if_idle(self) -> Optional[IpfixMessage]:
        if self.first_pending_at is None:
            return None
        if self.clock() - self.first_pending_at >= self.idle_flush_seconds:
            return self.flush()
        return None

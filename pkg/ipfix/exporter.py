"""UDP transport for IPFIX messages, one message per datagram."""
from __future__ import annotations

import logging
import socket
from typing import Mapping, Optional

from ipfix.information_elements import Template
from ipfix.ipfix_codec import IpfixMessage, encode_message

logger = logging.getLogger(__name__)

IPFIX_PORT = 4739


class UdpExporter:
    """Fire-and-forget sender; a failed send is counted, never retried."""

    def __init__(self, host: str = "127.0.0.1", port: int = IPFIX_PORT,
                 templates: Optional[Mapping[int, Template]] = None):
        self.address = (host, port)
        self.templates = dict(templates or {})
        family = socket.AF_INET6 if ":" in host else socket.AF_INET
        self.sock = socket.socket(family, socket.SOCK_DGRAM)
        self.messages = 0
        self.records = 0
        self.octets = 0
        self.send_errors = 0

    def send_bytes(self, data: bytes) -> bool:
        try:
            self.sock.sendto(data, self.address)
        except OSError as e:
            self.send_errors += 1
            logger.warning("IPFIX send to %s:%d failed: %s (errors: %d)",
                           self.address[0], self.address[1], e, self.send_errors)
            return False
        self.octets += len(data)
        return True

    def send(self, message: IpfixMessage) -> bool:
        data = encode_message(message, self.templates)
        sent = self.send_bytes(data)
        if sent:
            self.messages += 1
            self.records += message.record_count
            logger.debug("sent message seq=%d (%d records, %d octets)",
                         message.sequence, message.record_count, len(data))
        return sent

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

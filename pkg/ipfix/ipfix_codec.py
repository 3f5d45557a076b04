"""IPFIX (RFC 7011) message encoding and decoding.

Only fixed-length Information Elements are handled. Options templates are
skipped on decode and never produced.
"""
from __future__ import annotations

import ipaddress
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from ipfix.information_elements import (
    ENTERPRISE_BIT, InformationElement, Template, load_registry,
)

logger = logging.getLogger(__name__)

IPFIX_VERSION = 10
TEMPLATE_SET_ID = 2
OPTIONS_TEMPLATE_SET_ID = 3
MIN_DATA_SET_ID = 256

HEADER = struct.Struct("!HHIII")
SET_HEADER = struct.Struct("!HH")
TEMPLATE_HEADER = struct.Struct("!HH")
FIELD_SPEC = struct.Struct("!HH")
PEN = struct.Struct("!I")

MAX_MESSAGE_LENGTH = 0xFFFF
MAX_RETAINED_SETS = 1024

# Fields where zero on the wire stands for "absent".
ZERO_MEANS_ABSENT = frozenset({"meta_uid", "end_reason"})

Record = Mapping[str, object]


class IPFIXError(ValueError):
    pass


class MalformedMessage(IPFIXError):
    pass


class TruncatedSet(IPFIXError):
    pass


class UnknownTemplate(IPFIXError):
    pass


class FieldLengthMismatch(IPFIXError):
    pass


@dataclass(frozen=True)
class TemplateSet:
    templates: Tuple[Template, ...]

    @property
    def encoded_length(self) -> int:
        return SET_HEADER.size + sum(t.encoded_length for t in self.templates)


@dataclass(frozen=True)
class DataSet:
    template_id: int
    records: Tuple[Record, ...]

    def encoded_length(self, template: Template) -> int:
        return SET_HEADER.size + len(self.records) * template.record_length


IpfixSet = Union[TemplateSet, DataSet]


@dataclass(frozen=True)
class IpfixMessage:
    export_time: int
    sequence: int
    observation_domain: int
    sets: Tuple[IpfixSet, ...] = ()
    version: int = IPFIX_VERSION

    @property
    def templates(self) -> List[Template]:
        return [t for s in self.sets if isinstance(s, TemplateSet) for t in s.templates]

    @property
    def data_sets(self) -> List[DataSet]:
        return [s for s in self.sets if isinstance(s, DataSet)]

    @property
    def record_count(self) -> int:
        return sum(len(s.records) for s in self.data_sets)

    def encoded_length(self, known: Optional[Mapping[int, Template]] = None) -> int:
        """Wire length; data set sizes come from this message's templates or ``known``."""
        layouts = dict(known or {})
        layouts.update({t.template_id: t for t in self.templates})
        length = HEADER.size
        for s in self.sets:
            if isinstance(s, TemplateSet):
                length += s.encoded_length
            else:
                if s.template_id not in layouts:
                    raise UnknownTemplate(f"template {s.template_id} was never announced")
                length += s.encoded_length(layouts[s.template_id])
        return length


# --- values -------------------------------------------------------------------

def _encode_value(ie: InformationElement, value) -> bytes:
    if value is None:
        if ie.field in ZERO_MEANS_ABSENT:
            value = 0
        else:
            raise FieldLengthMismatch(f"{ie.name}: value missing")

    if ie.ie_type.startswith("unsigned"):
        try:
            return int(value).to_bytes(ie.length, "big", signed=False)
        except OverflowError as e:
            raise FieldLengthMismatch(f"{ie.name}: {value} does not fit in {ie.length} octets") from e

    if ie.ie_type in ("ipv4Address", "ipv6Address"):
        packed = ipaddress.ip_address(value).packed
        if len(packed) != ie.length:
            raise FieldLengthMismatch(f"{ie.name}: {value} is not a {ie.length}-octet address")
        return packed

    if ie.ie_type == "octetArray":
        raw = bytes.fromhex(value) if isinstance(value, str) else bytes(value)
    else:
        raw = str(value).encode("utf-8")
    if len(raw) > ie.length:
        raise FieldLengthMismatch(f"{ie.name}: {len(raw)} octets exceed the {ie.length}-octet field")
    return raw.ljust(ie.length, b"\0")


def _decode_value(ie: InformationElement, raw: bytes):
    if ie.ie_type.startswith("unsigned"):
        value = int.from_bytes(raw, "big")
        if value == 0 and ie.field in ZERO_MEANS_ABSENT:
            return None
        return value
    if ie.ie_type in ("ipv4Address", "ipv6Address"):
        return str(ipaddress.ip_address(raw))
    if ie.ie_type == "octetArray":
        return raw.hex()
    return raw.rstrip(b"\0").decode("utf-8", errors="replace")


def encode_record(template: Template, record: Record) -> bytes:
    return b"".join(_encode_value(ie, record.get(ie.field)) for ie in template.fields)


def decode_record(template: Template, raw: bytes) -> Dict[str, object]:
    if len(raw) != template.record_length:
        raise FieldLengthMismatch(f"record of {len(raw)} octets for template "
                                  f"{template.template_id} ({template.record_length} expected)")
    record: Dict[str, object] = {}
    offset = 0
    for ie in template.fields:
        record[ie.field] = _decode_value(ie, raw[offset:offset + ie.length])
        offset += ie.length
    if "src_addr" in record:
        record["ip_version"] = ipaddress.ip_address(record["src_addr"]).version
    return record


# --- encoding -----------------------------------------------------------------

def _encode_template(template: Template) -> bytes:
    out = [TEMPLATE_HEADER.pack(template.template_id, len(template.fields))]
    for ie in template.fields:
        if ie.is_enterprise:
            out.append(FIELD_SPEC.pack(ie.element_id | ENTERPRISE_BIT, ie.length))
            out.append(PEN.pack(ie.enterprise_number))
        else:
            out.append(FIELD_SPEC.pack(ie.element_id, ie.length))
    return b"".join(out)


def encode_message(message: IpfixMessage, known: Optional[Mapping[int, Template]] = None) -> bytes:
    """Wire image of ``message``.

    Data sets may use templates announced in this message or listed in
    ``known`` (announced earlier on the same transport session).
    """
    layouts = dict(known or {})
    layouts.update({t.template_id: t for t in message.templates})

    body = []
    for s in message.sets:
        if isinstance(s, TemplateSet):
            payload = b"".join(_encode_template(t) for t in s.templates)
            body.append(SET_HEADER.pack(TEMPLATE_SET_ID, SET_HEADER.size + len(payload)) + payload)
            continue
        template = layouts.get(s.template_id)
        if template is None:
            raise UnknownTemplate(f"template {s.template_id} was never announced")
        payload = b"".join(encode_record(template, r) for r in s.records)
        body.append(SET_HEADER.pack(s.template_id, SET_HEADER.size + len(payload)) + payload)

    length = HEADER.size + sum(len(b) for b in body)
    if length > MAX_MESSAGE_LENGTH:
        raise FieldLengthMismatch(f"message of {length} octets exceeds the IPFIX length field")
    header = HEADER.pack(message.version, length, message.export_time & 0xFFFFFFFF,
                         message.sequence & 0xFFFFFFFF, message.observation_domain)
    return header + b"".join(body)


def group_records(records: Iterable[Tuple[int, Record]]) -> List[DataSet]:
    """Adjacent records of the same template share one data set; order is kept."""
    sets: List[DataSet] = []
    run: List[Record] = []
    current = None
    for template_id, record in records:
        if template_id != current and run:
            sets.append(DataSet(current, tuple(run)))
            run = []
        current = template_id
        run.append(record)
    if run:
        sets.append(DataSet(current, tuple(run)))
    return sets


def encode(templates: Sequence[Template], records: Iterable[Tuple[int, Record]],
           export_time: int = 0, sequence: int = 0, observation_domain: int = 0,
           known: Optional[Mapping[int, Template]] = None) -> bytes:
    """One message announcing ``templates`` followed by the (template id, record) pairs."""
    sets: List[IpfixSet] = []
    if templates:
        sets.append(TemplateSet(tuple(templates)))
    sets.extend(group_records(records))
    return encode_message(IpfixMessage(export_time, sequence, observation_domain, tuple(sets)), known)


# --- template cache -------------------------------------------------------------

CacheKey = Tuple[object, int, int]


class TemplateCache:
    """Templates seen per (exporter, observation domain, template id).

    Data sets that arrive before their template are retained and handed back
    once the template is learned.
    """

    def __init__(self, registry: Optional[Mapping[str, InformationElement]] = None,
                 max_retained: int = MAX_RETAINED_SETS):
        registry = registry if registry is not None else load_registry()
        self.elements = {ie.wire_key: ie for ie in registry.values()}
        self.templates: Dict[CacheKey, Template] = {}
        self.retained: Dict[CacheKey, List[bytes]] = {}
        self.max_retained = max_retained
        self.dropped_retained = 0

    def __len__(self):
        return len(self.templates)

    def __contains__(self, key: CacheKey):
        return key in self.templates

    def get(self, peer, domain: int, template_id: int) -> Optional[Template]:
        return self.templates.get((peer, domain, template_id))

    def element(self, element_id: int, length: int, pen: Optional[int]) -> InformationElement:
        ie = self.elements.get((element_id, pen))
        if ie is not None and ie.length == length:
            return ie
        # unknown to the registry; keep the octets
        name = f"ie_{pen}_{element_id}" if pen is not None else f"ie_{element_id}"
        return InformationElement(name, element_id, length, "octetArray", name, pen)

    def learn(self, peer, domain: int, template: Template) -> bool:
        """Store ``template``; True when the cache changed."""
        key = (peer, domain, template.template_id)
        cached = self.templates.get(key)
        if cached is not None and cached.same_layout(template):
            return False
        if cached is not None:
            logger.info("Template %d from %s (domain %d) redefined", template.template_id, peer, domain)
        self.templates[key] = template
        return True

    def withdraw(self, peer, domain: int, template_id: int) -> None:
        self.templates.pop((peer, domain, template_id), None)

    def retain(self, peer, domain: int, template_id: int, payload: bytes) -> None:
        if sum(len(v) for v in self.retained.values()) >= self.max_retained:
            self.dropped_retained += 1
            logger.warning("Retained data set limit reached, dropping set for template %d", template_id)
            return
        self.retained.setdefault((peer, domain, template_id), []).append(payload)

    def take_retained(self, peer, domain: int, template_id: int) -> List[bytes]:
        return self.retained.pop((peer, domain, template_id), [])

    def snapshot(self) -> Dict[CacheKey, Template]:
        return dict(self.templates)


# --- decoding -------------------------------------------------------------------

@dataclass
class DecodeResult:
    export_time: int
    sequence: int
    observation_domain: int
    records: List[Dict[str, object]] = field(default_factory=list)
    templates: List[Template] = field(default_factory=list)
    undecodable_sets: int = 0
    recovered: int = 0


def _parse_templates(payload: bytes, cache: TemplateCache) -> Tuple[List[Template], List[int]]:
    templates, withdrawn = [], []
    offset = 0
    # anything shorter than a template header is padding
    while len(payload) - offset >= TEMPLATE_HEADER.size:
        template_id, count = TEMPLATE_HEADER.unpack_from(payload, offset)
        offset += TEMPLATE_HEADER.size
        if template_id < MIN_DATA_SET_ID:
            raise MalformedMessage(f"template id {template_id} is reserved")
        if count == 0:
            withdrawn.append(template_id)
            continue
        fields = []
        for _ in range(count):
            if offset + FIELD_SPEC.size > len(payload):
                raise TruncatedSet(f"template {template_id} ends inside a field specifier")
            element_id, length = FIELD_SPEC.unpack_from(payload, offset)
            offset += FIELD_SPEC.size
            pen = None
            if element_id & ENTERPRISE_BIT:
                if offset + PEN.size > len(payload):
                    raise TruncatedSet(f"template {template_id} ends inside an enterprise number")
                (pen,) = PEN.unpack_from(payload, offset)
                offset += PEN.size
                element_id &= ~ENTERPRISE_BIT
            if length == 0xFFFF:
                raise MalformedMessage(f"template {template_id}: variable-length fields are not supported")
            try:
                fields.append(cache.element(element_id, length, pen))
            except ValueError as e:
                raise MalformedMessage(f"template {template_id}: {e}") from e
        templates.append(Template(template_id, tuple(fields)))
    return templates, withdrawn


def _decode_data(template: Template, payload: bytes) -> List[Dict[str, object]]:
    size = template.record_length
    count = len(payload) // size
    return [decode_record(template, payload[i * size:(i + 1) * size]) for i in range(count)]


def decode(data: bytes, cache: TemplateCache, peer=None) -> DecodeResult:
    """Decode one message, updating ``cache`` with the templates it carries."""
    if len(data) < HEADER.size:
        raise MalformedMessage(f"{len(data)} octets is shorter than a message header")
    version, length, export_time, sequence, domain = HEADER.unpack_from(data)
    if version != IPFIX_VERSION:
        raise MalformedMessage(f"unsupported version {version}")
    if length != len(data):
        raise MalformedMessage(f"header length {length} but {len(data)} octets received")

    result = DecodeResult(export_time, sequence, domain)
    offset = HEADER.size
    while offset < length:
        if length - offset < SET_HEADER.size:
            raise TruncatedSet(f"set header cut at offset {offset}")
        set_id, set_length = SET_HEADER.unpack_from(data, offset)
        if set_length < SET_HEADER.size or offset + set_length > length:
            raise TruncatedSet(f"set {set_id} of length {set_length} at offset {offset} "
                               f"overruns the message")
        payload = data[offset + SET_HEADER.size:offset + set_length]
        offset += set_length

        if set_id == TEMPLATE_SET_ID:
            templates, withdrawn = _parse_templates(payload, cache)
            for template_id in withdrawn:
                cache.withdraw(peer, domain, template_id)
            for template in templates:
                cache.learn(peer, domain, template)
                result.templates.append(template)
                for retained in cache.take_retained(peer, domain, template.template_id):
                    records = _decode_data(template, retained)
                    result.records.extend(records)
                    result.recovered += len(records)
        elif set_id == OPTIONS_TEMPLATE_SET_ID:
            logger.debug("Skipping options template set from %s", peer)
        elif set_id >= MIN_DATA_SET_ID:
            template = cache.get(peer, domain, set_id)
            if template is None:
                result.undecodable_sets += 1
                cache.retain(peer, domain, set_id, payload)
                continue
            result.records.extend(_decode_data(template, payload))
        else:
            raise MalformedMessage(f"set id {set_id} is reserved")
    return result


"""Information Elements and the four profile templates.

The registry is shipped as ``ie_registry.csv`` next to this module so that
third-party collectors can load the enterprise elements too. Every profile
field maps onto exactly one IE per address family.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import pandas as pd

from kpi.kpi_catalog import META_KPIS, TCP_KPIS
from aggregator.profiles import IDENTITY_COLUMNS, kpi_columns

REGISTRY_PATH = Path(__file__).with_name("ie_registry.csv")
REGISTRY_COLUMNS = ["name", "element_id", "pen", "length", "type", "field", "description"]
DEFAULT_ENTERPRISE_NUMBER = 61440  # placeholder, not a registered PEN
ENTERPRISE_BIT = 0x8000

TEMPLATE_TCP_V4 = 256
TEMPLATE_TCP_V6 = 257
TEMPLATE_META_V4 = 258
TEMPLATE_META_V6 = 259

IE_TYPES = ("unsigned8", "unsigned16", "unsigned32", "unsigned64",
            "ipv4Address", "ipv6Address", "string", "octetArray")


@dataclass(frozen=True)
class InformationElement:
    name: str
    element_id: int
    length: int
    ie_type: str
    field: str
    enterprise_number: Optional[int] = None
    description: str = ""

    def __post_init__(self):
        if not 0 < self.element_id < ENTERPRISE_BIT:
            raise ValueError(f"{self.name}: element id {self.element_id} is not a 15-bit value")
        if self.enterprise_number is not None and not 0 <= self.enterprise_number < (1 << 32):
            raise ValueError(f"{self.name}: enterprise number out of range")
        if self.ie_type not in IE_TYPES:
            raise ValueError(f"{self.name}: unsupported type {self.ie_type!r}")
        if self.length <= 0 or self.length == 0xFFFF:
            raise ValueError(f"{self.name}: only fixed-length elements are supported")

    @property
    def is_enterprise(self) -> bool:
        return self.enterprise_number is not None

    @property
    def spec_length(self) -> int:
        """Octets the field specifier takes in a template record."""
        return 8 if self.is_enterprise else 4

    @property
    def wire_key(self) -> Tuple[int, Optional[int]]:
        return self.element_id, self.enterprise_number


def load_registry(path=REGISTRY_PATH, enterprise_number: Optional[int] = None) -> Dict[str, InformationElement]:
    """IEs by name; ``enterprise_number`` replaces the PEN of every enterprise IE."""
    df = pd.read_csv(path, dtype={"pen": "Int64"}, keep_default_na=True)
    missing = set(REGISTRY_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"IE registry {path} lacks column(s): {', '.join(sorted(missing))}")

    registry: Dict[str, InformationElement] = {}
    for row in df.itertuples(index=False):
        pen = None if pd.isna(row.pen) else int(row.pen)
        if pen is not None and enterprise_number is not None:
            pen = enterprise_number
        ie = InformationElement(
            name=row.name,
            element_id=int(row.element_id),
            length=int(row.length),
            ie_type=row.type,
            field=row.field,
            enterprise_number=pen,
            description="" if pd.isna(row.description) else row.description,
        )
        if ie.name in registry:
            raise ValueError(f"IE {ie.name} registered twice")
        registry[ie.name] = ie
    return registry


def registry_frame(registry: Dict[str, InformationElement]) -> pd.DataFrame:
    rows = [{
        "name": ie.name,
        "element_id": ie.element_id,
        "pen": ie.enterprise_number,
        "length": ie.length,
        "type": ie.ie_type,
        "field": ie.field,
        "description": ie.description,
    } for ie in registry.values()]
    df = pd.DataFrame(rows, columns=REGISTRY_COLUMNS)
    df["pen"] = df["pen"].astype("Int64")
    return df


def registry_csv(registry: Dict[str, InformationElement]) -> str:
    buf = io.StringIO()
    registry_frame(registry).to_csv(buf, index=False)
    return buf.getvalue()


# --- templates --------------------------------------------------------------

@dataclass(frozen=True)
class Template:
    template_id: int
    fields: Tuple[InformationElement, ...]

    def __post_init__(self):
        if self.template_id < 256 or self.template_id > 0xFFFF:
            raise ValueError(f"template id {self.template_id} is reserved")
        if not self.fields:
            raise ValueError("a template needs at least one field")

    @property
    def record_length(self) -> int:
        return sum(ie.length for ie in self.fields)

    @property
    def encoded_length(self) -> int:
        """Size of this template's record inside a template set."""
        return 4 + sum(ie.spec_length for ie in self.fields)

    @property
    def field_names(self) -> List[str]:
        return [ie.field for ie in self.fields]

    def same_layout(self, other: "Template") -> bool:
        return [(ie.wire_key, ie.length) for ie in self.fields] == \
               [(ie.wire_key, ie.length) for ie in other.fields]


_ADDRESS_IES = {
    4: ("sourceIPv4Address", "destinationIPv4Address"),
    6: ("sourceIPv6Address", "destinationIPv6Address"),
}


def _template_fields(registry: Dict[str, InformationElement], ip_version: int,
                     kpis: Iterable) -> List[InformationElement]:
    by_field = {ie.field: ie for ie in registry.values() if ie.name not in
                {name for pair in _ADDRESS_IES.values() for name in pair}}
    src_ie, dst_ie = _ADDRESS_IES[ip_version]
    fields = []
    for column in IDENTITY_COLUMNS + kpi_columns(set(kpis)):
        if column == "ip_version":
            # implied by the template
            continue
        if column == "src_addr":
            fields.append(registry[src_ie])
        elif column == "dst_addr":
            fields.append(registry[dst_ie])
        elif column in by_field:
            fields.append(by_field[column])
        else:
            raise ValueError(f"no Information Element for profile field {column!r}")
    return fields


def build_templates(registry: Dict[str, InformationElement]) -> Dict[int, Template]:
    layouts = {
        TEMPLATE_TCP_V4: (4, TCP_KPIS),
        TEMPLATE_TCP_V6: (6, TCP_KPIS),
        TEMPLATE_META_V4: (4, META_KPIS),
        TEMPLATE_META_V6: (6, META_KPIS),
    }
    return {tid: Template(tid, tuple(_template_fields(registry, version, kpis)))
            for tid, (version, kpis) in layouts.items()}


def template_id_for(is_meta: bool, ip_version: int) -> int:
    if ip_version not in _ADDRESS_IES:
        raise ValueError(f"unknown IP version {ip_version}")
    if is_meta:
        return TEMPLATE_META_V4 if ip_version == 4 else TEMPLATE_META_V6
    return TEMPLATE_TCP_V4 if ip_version == 4 else TEMPLATE_TCP_V6


def profile_templates(enterprise_number: int = DEFAULT_ENTERPRISE_NUMBER) -> Dict[int, Template]:
    return build_templates(load_registry(enterprise_number=enterprise_number))

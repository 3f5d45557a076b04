"""Line-oriented trace scripts.

    # comment
    @0        conn 1 open 10.0.0.1:40000 -> 192.0.2.10:443 via eth0
    @1000000  conn 1 rto
    @3000000  conn 1 established rtt=25000
    @3100000  conn 1 recv seq=0 len=1448
    @9000000  conn 1 close fin

Timestamps are nanoseconds from the trace origin. IPv6 endpoints are
written ``[2001:db8::1]:443``.

There are no acknowledgements: data given to ``send`` is taken as acknowledged
before the next directive. Unacknowledged data is written on the timer that
finds it, ``rto retrans=<bytes>``; only then does the write queue count as
pending, which makes the expiry a stall. A bare ``rto`` on an established
connection is an idle timer.
"""
from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, List, Mapping, Optional, Tuple

from tcp_sim.probe_events import MAX_UID
from tcp_sim.sim_errors import ScriptError

SEQ_MAX = (1 << 32) - 1
DSS_MAX = (1 << 64) - 1
IFACE_MAX_OCTETS = 16

LINE_RE = re.compile(
    r"^@(?P<at>\d+)\s+conn\s+(?P<uid>\d+)\s+(?P<verb>[a-z_]+)(?:\s+(?P<rest>.*))?$",
    re.ASCII,
)
ENDPOINT_RE = re.compile(r"^(?:\[(?P<v6>[0-9A-Fa-f:.]+)\]|(?P<v4>[0-9.]+)):(?P<port>\d+)$", re.ASCII)
OPEN_RE = re.compile(r"^(?P<src>\S+)\s+->\s+(?P<dst>\S+)\s+via\s+(?P<iface>\S+)(?:\s+(?P<mptcp>mptcp))?$")
DIGITS_RE = re.compile(r"[0-9]+")

CLOSE_KINDS = ("fin", "rst", "drop")


@dataclass(frozen=True)
class Endpoint:
    addr: Any
    port: int


@dataclass(frozen=True)
class Directive:
    at: int
    uid: int
    verb: str
    args: Mapping[str, Any] = field(default_factory=lambda: MappingProxyType({}))
    line_no: int = 0

    def __str__(self):
        return f"@{self.at} conn {self.uid} {self.verb}"


@dataclass(frozen=True)
class TraceScript:
    directives: Tuple[Directive, ...] = ()
    passive_uids: frozenset = frozenset()
    source: str = "<string>"

    def __len__(self):
        return len(self.directives)

    @property
    def uids(self) -> frozenset:
        return frozenset(d.uid for d in self.directives if d.verb == "open")


def _int(value: str, what: str, line_no: int, low: int = 0, high: Optional[int] = None) -> int:
    if not DIGITS_RE.fullmatch(value):
        raise ScriptError(f"{what} must be a non-negative integer, got {value!r}", line_no)
    number = int(value)
    if number < low or (high is not None and number > high):
        raise ScriptError(f"{what} out of range: {number}", line_no)
    return number


def _keywords(rest: str, allowed: Tuple[str, ...], required: Tuple[str, ...], line_no: int) -> Dict[str, str]:
    found = {}
    for token in rest.split():
        name, sep, value = token.partition("=")
        if not sep or name not in allowed:
            raise ScriptError(f"unexpected argument {token!r}", line_no)
        if name in found:
            raise ScriptError(f"argument {name!r} given twice", line_no)
        found[name] = value
    missing = [name for name in required if name not in found]
    if missing:
        raise ScriptError(f"missing argument(s): {', '.join(missing)}", line_no)
    return found


def _endpoint(text: str, line_no: int) -> Endpoint:
    match = ENDPOINT_RE.match(text)
    if not match:
        raise ScriptError(f"bad endpoint {text!r}", line_no)
    try:
        addr = ipaddress.ip_address(match.group("v6") or match.group("v4"))
    except ValueError as e:
        raise ScriptError(str(e), line_no) from e
    if match.group("v6") and addr.version != 6:
        raise ScriptError(f"bracketed endpoint must be IPv6: {text!r}", line_no)
    return Endpoint(addr, _int(match.group("port"), "port", line_no, high=0xFFFF))


def _parse_args(verb: str, rest: str, line_no: int) -> Dict[str, Any]:
    rest = rest.strip()

    if verb == "open":
        match = OPEN_RE.match(rest)
        if not match:
            raise ScriptError("expected '<src>:<port> -> <dst>:<port> via <iface> [mptcp]'", line_no)
        src = _endpoint(match.group("src"), line_no)
        dst = _endpoint(match.group("dst"), line_no)
        if src.addr.version != dst.addr.version:
            raise ScriptError("source and destination use different address families", line_no)
        iface = match.group("iface")
        if len(iface.encode("utf-8")) > IFACE_MAX_OCTETS:
            raise ScriptError(f"interface name longer than {IFACE_MAX_OCTETS} octets", line_no)
        return {"src": src, "dst": dst, "iface": iface, "mptcp": bool(match.group("mptcp"))}

    if verb in ("accepted", "recovered", "meta_rto"):
        if rest:
            raise ScriptError(f"'{verb}' takes no arguments", line_no)
        return {}

    if verb == "connect_error":
        return {"errno": _int(rest, "errno", line_no)}

    if verb == "established":
        kw = _keywords(rest, ("rtt",), ("rtt",), line_no)
        return {"rtt": _int(kw["rtt"], "rtt", line_no, low=1)}

    if verb in ("send", "corrupt"):
        return {"len": _int(rest, "length", line_no, low=1)}

    if verb == "rtt_sample":
        return {"rtt": _int(rest, "rtt sample", line_no, low=1)}

    if verb == "recv":
        kw = _keywords(rest, ("seq", "len", "dss"), ("seq", "len"), line_no)
        args = {
            "seq": _int(kw["seq"], "seq", line_no, high=SEQ_MAX),
            "len": _int(kw["len"], "len", line_no, low=1),
            "dss": None,
        }
        if "dss" in kw:
            args["dss"] = _int(kw["dss"], "dss", line_no, high=DSS_MAX)
        return args

    if verb == "rto":
        kw = _keywords(rest, ("retrans",), (), line_no)
        return {"retrans": _int(kw.get("retrans", "0"), "retrans", line_no)}

    if verb == "close":
        if rest not in CLOSE_KINDS:
            raise ScriptError(f"close expects one of {', '.join(CLOSE_KINDS)}", line_no)
        return {"how": rest}

    if verb == "join":
        kw = _keywords(rest, ("subflow",), ("subflow",), line_no)
        return {"subflow": _int(kw["subflow"], "subflow uid", line_no, low=1, high=MAX_UID)}

    if verb == "reinject":
        parts = rest.split(None, 1)
        if len(parts) != 2:
            raise ScriptError("expected 'reinject <bytes> from=<uid>'", line_no)
        kw = _keywords(parts[1], ("from",), ("from",), line_no)
        return {
            "len": _int(parts[0], "reinjected bytes", line_no, low=1),
            "from": _int(kw["from"], "source subflow uid", line_no, low=1, high=MAX_UID),
        }

    raise ScriptError(f"unknown directive {verb!r}", line_no)


def parse_trace(text: str, source: str = "<string>") -> TraceScript:
    directives: List[Directive] = []
    last_seen: Dict[int, int] = {}

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = LINE_RE.match(line)
        if not match:
            raise ScriptError(f"unparseable directive {line!r}", line_no)
        at = int(match.group("at"))
        uid = _int(match.group("uid"), "connection uid", line_no, low=1, high=MAX_UID)
        verb = match.group("verb")
        args = _parse_args(verb, match.group("rest") or "", line_no)

        if uid in last_seen and at < last_seen[uid]:
            raise ScriptError(f"directive for connection {uid} goes back in time "
                              f"({at} < {last_seen[uid]})", line_no)
        last_seen[uid] = at
        directives.append(Directive(at, uid, verb, MappingProxyType(args), line_no))

    # global timestamp order, stable for directives sharing an instant
    directives.sort(key=lambda d: d.at)

    passive = set()
    for d in directives:
        if d.verb == "accepted":
            passive.add(d.uid)
        elif d.verb == "join":
            passive.add(d.args["subflow"])

    defined = set()
    for d in directives:
        if d.verb == "open":
            if d.uid in defined:
                raise ScriptError(f"connection uid {d.uid} reused", d.line_no)
            defined.add(d.uid)
            continue
        if d.uid not in defined:
            raise ScriptError(f"connection {d.uid} used before 'open'", d.line_no)
        if d.verb == "reinject" and d.args["from"] not in defined:
            raise ScriptError(f"reinjection from undefined connection {d.args['from']}", d.line_no)
        if d.verb == "join":
            # a joined subflow without its own 'open' inherits the meta's endpoints
            defined.add(d.args["subflow"])

    return TraceScript(tuple(directives), frozenset(passive), source)


def load_trace(path) -> TraceScript:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ScriptError(f"{path} is not UTF-8 text: {e.reason} at byte {e.start}") from e
    return parse_trace(text, source=str(path))

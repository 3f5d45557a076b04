"""Append-only profile store.

One JSON object per line, keys in ``STORE_COLUMNS`` order followed by the
receive metadata. The in-memory index keys every profile by transition,
IP version and destination prefix; queries narrow the store through it
before building their DataFrame.
"""
from __future__ import annotations

import ipaddress
import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import pandas as pd

from aggregator.profiles import (
    STORE_COLUMNS, PerformanceProfile, profile_from_record, profile_to_record,
)

logger = logging.getLogger(__name__)

DEFAULT_PREFIX_V4 = 24
DEFAULT_PREFIX_V6 = 48
META_COLUMNS = ["peer", "received_at"]
FRAME_COLUMNS = STORE_COLUMNS + META_COLUMNS


def dst_prefix(addr, prefix_v4: int = DEFAULT_PREFIX_V4, prefix_v6: int = DEFAULT_PREFIX_V6) -> str:
    addr = ipaddress.ip_address(addr)
    length = prefix_v4 if addr.version == 4 else prefix_v6
    return str(ipaddress.ip_network(f"{addr}/{length}", strict=False))


@dataclass(frozen=True)
class StoredProfile:
    profile: PerformanceProfile
    peer: Optional[str] = None
    received_at: Optional[float] = None

    def to_record(self) -> Dict[str, object]:
        record = profile_to_record(self.profile)
        record["peer"] = self.peer
        record["received_at"] = self.received_at
        return record

    def to_line(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))


IndexKey = Tuple[int, int, int, str]


class ProfileStore:

    def __init__(self, path=None, prefix_v4: int = DEFAULT_PREFIX_V4,
                 prefix_v6: int = DEFAULT_PREFIX_V6):
        self.path = Path(path) if path is not None else None
        self.prefix_v4 = prefix_v4
        self.prefix_v6 = prefix_v6
        self.entries: List[StoredProfile] = []
        self.index: Dict[IndexKey, List[int]] = {}
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[StoredProfile]:
        return iter(self.snapshot())

    @property
    def profiles(self) -> List[PerformanceProfile]:
        return [entry.profile for entry in self.snapshot()]

    def _index_key(self, profile: PerformanceProfile) -> IndexKey:
        return (int(profile.from_state.phase), int(profile.to_state.phase),
                profile.key.ip_version,
                dst_prefix(profile.key.dst_addr, self.prefix_v4, self.prefix_v6))

    def _add(self, entry: StoredProfile) -> None:
        self.index.setdefault(self._index_key(entry.profile), []).append(len(self.entries))
        self.entries.append(entry)

    def append(self, profile: PerformanceProfile, peer: Optional[str] = None,
               received_at: Optional[float] = None) -> StoredProfile:
        return self.extend([profile], peer, received_at)[0]

    def extend(self, profiles: Iterable[PerformanceProfile], peer: Optional[str] = None,
               received_at: Optional[float] = None) -> List[StoredProfile]:
        entries = [StoredProfile(p, peer, received_at) for p in profiles]
        if not entries:
            return []
        with self._lock:
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as f:
                    for entry in entries:
                        f.write(entry.to_line() + "\n")
            for entry in entries:
                self._add(entry)
        return entries

    def snapshot(self) -> Tuple[StoredProfile, ...]:
        with self._lock:
            return tuple(self.entries)

    def select(self, from_phase: Optional[int] = None, to_phase: Optional[int] = None,
               ip_version: Optional[int] = None, prefix: Optional[str] = None) -> List[StoredProfile]:
        """Profiles matching the indexed attributes, in append order."""
        with self._lock:
            positions = []
            for (f, t, v, p), slots in self.index.items():
                if from_phase is not None and f != from_phase:
                    continue
                if to_phase is not None and t != to_phase:
                    continue
                if ip_version is not None and v != ip_version:
                    continue
                if prefix is not None and p != prefix:
                    continue
                positions.extend(slots)
            return [self.entries[i] for i in sorted(positions)]

    def frame(self, **selection) -> pd.DataFrame:
        """The store as a DataFrame; keyword arguments narrow it through ``select``."""
        entries = self.select(**selection) if selection else self.snapshot()
        records = [entry.to_record() for entry in entries]
        return pd.DataFrame.from_records(records, columns=FRAME_COLUMNS)

    @classmethod
    def load(cls, path, prefix_v4: int = DEFAULT_PREFIX_V4,
             prefix_v6: int = DEFAULT_PREFIX_V6) -> "ProfileStore":
        """Read an existing store; new appends go to the same file."""
        store = cls(None, prefix_v4, prefix_v6)
        path = Path(path)
        with path.open(encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    entry = StoredProfile(profile_from_record(record),
                                          record.get("peer"), record.get("received_at"))
                except (ValueError, KeyError, TypeError) as e:
                    raise ValueError(f"{path}:{line_no}: bad profile record: {e}") from e
                store._add(entry)
        store.path = path
        logger.info("Loaded %d profiles from %s", len(store), path)
        return store


def write_profiles(profiles: Iterable[PerformanceProfile], path) -> int:
    """Write a fresh store file holding ``profiles``; returns the count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as f:
        for profile in profiles:
            f.write(StoredProfile(profile).to_line() + "\n")
            count += 1
    return count

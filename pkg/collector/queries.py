"""Operator queries over the profile store.

Every query takes the store as a DataFrame (``ProfileStore.frame()``) so it
runs on an immutable copy and never blocks ingest. ``query_store`` first
narrows the store through its index to the transitions a query reads.
"""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd

from collector.profile_store import DEFAULT_PREFIX_V4, DEFAULT_PREFIX_V6, ProfileStore, dst_prefix
from lifecycle.lifecycle_fsm import Phase
from tcp_sim.probe_events import Protocol

NS_PER_MS = 1_000_000
GROUP_COLUMNS = {"ip-version": "ip_version", "dst-prefix": "dst_prefix"}


@dataclass(frozen=True)
class Summary:
    count: int = 0
    median: Optional[float] = None
    mean: Optional[float] = None
    variance: Optional[float] = None

    def as_dict(self) -> dict:
        return {"count": self.count, "median": self.median, "mean": self.mean,
                "variance": self.variance}


def summarize(values) -> Summary:
    """Lower median, mean and population variance."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return Summary()
    return Summary(
        count=int(arr.size),
        median=float(np.quantile(arr, 0.5, method="lower")),
        mean=float(arr.mean()),
        variance=float(arr.var()),
    )


@dataclass(frozen=True)
class ProfileFilter:
    ip_version: Optional[int] = None
    dst_prefix: Optional[str] = None
    since: Optional[int] = None
    until: Optional[int] = None

    def __post_init__(self):
        if self.ip_version not in (None, 4, 6):
            raise ValueError(f"IP version must be 4 or 6, got {self.ip_version}")
        if self.dst_prefix is not None:
            ipaddress.ip_network(self.dst_prefix, strict=False)

    def apply(self, df: pd.DataFrame) -> pd.DataFrame:
        mask = pd.Series(True, index=df.index)
        if self.ip_version is not None:
            mask &= df["ip_version"] == self.ip_version
        if self.dst_prefix is not None:
            network = ipaddress.ip_network(self.dst_prefix, strict=False)
            mask &= df["dst_addr"].map(lambda a: ipaddress.ip_address(a) in network)
        if self.since is not None:
            mask &= df["window_start"] >= self.since
        if self.until is not None:
            mask &= df["window_end"] <= self.until
        return df[mask]


def _filtered(df: pd.DataFrame, flt: Optional[ProfileFilter]) -> pd.DataFrame:
    return (flt or ProfileFilter()).apply(df)


def establishment_profiles(df: pd.DataFrame) -> pd.DataFrame:
    return df[(df["from_state"] == int(Phase.CONNECTING)) & (df["to_state"] == int(Phase.ESTABLISHED))]


def established_windows(df: pd.DataFrame) -> pd.DataFrame:
    """Established-phase windows of TCP connections and subflows that carry RTT samples."""
    mask = ((df["from_state"] == int(Phase.ESTABLISHED))
            & (df["protocol"] != int(Protocol.MPTCP_META))
            & (df["rtt_count"].fillna(0) > 0))
    return df[mask]


def query_establishment_time(df: pd.DataFrame, flt: Optional[ProfileFilter] = None) -> Summary:
    """Handshake durations in milliseconds."""
    est = establishment_profiles(_filtered(df, flt))
    return summarize((est["window_end"] - est["window_start"]) / NS_PER_MS)


def query_syn_retransmission_ratio(df: pd.DataFrame, flt: Optional[ProfileFilter] = None) -> float:
    est = establishment_profiles(_filtered(df, flt))
    if est.empty:
        return 0.0
    return float((est["stalls"].fillna(0) >= 1).sum()) / len(est)


def query_jitter(df: pd.DataFrame, flt: Optional[ProfileFilter] = None) -> Summary:
    """RTT window variance (µs²)."""
    return summarize(established_windows(_filtered(df, flt))["rtt_var"])


def query_rtt(df: pd.DataFrame, flt: Optional[ProfileFilter] = None) -> Summary:
    """Mean RTT of established windows (µs)."""
    return summarize(established_windows(_filtered(df, flt))["rtt_mean"])


def query_connection_count(df: pd.DataFrame, flt: Optional[ProfileFilter] = None) -> Dict[int, int]:
    """Distinct TCP connections and subflows per IP version."""
    conns = _filtered(df, flt)
    conns = conns[conns["protocol"] != int(Protocol.MPTCP_META)]
    counts = conns.groupby("ip_version")["connection_uid"].nunique()
    return {int(version): int(n) for version, n in counts.items()}


# --- report tables --------------------------------------------------------------

QUERIES: Dict[str, Callable[[pd.DataFrame, Optional[ProfileFilter]], dict]] = {
    "establishment": lambda df, flt: query_establishment_time(df, flt).as_dict(),
    "syn-retrans": lambda df, flt: {
        "count": len(establishment_profiles(_filtered(df, flt))),
        "ratio": query_syn_retransmission_ratio(df, flt),
    },
    "jitter": lambda df, flt: query_jitter(df, flt).as_dict(),
    "rtt": lambda df, flt: query_rtt(df, flt).as_dict(),
    "connections": lambda df, flt: {"count": sum(query_connection_count(df, flt).values())},
}


def with_prefix_column(df: pd.DataFrame, prefix_v4: int = DEFAULT_PREFIX_V4,
                       prefix_v6: int = DEFAULT_PREFIX_V6) -> pd.DataFrame:
    df = df.copy()
    df["dst_prefix"] = df["dst_addr"].map(lambda a: dst_prefix(a, prefix_v4, prefix_v6))
    return df


def run_query(name: str, df: pd.DataFrame, flt: Optional[ProfileFilter] = None,
              by: Optional[str] = None, prefix_v4: int = DEFAULT_PREFIX_V4,
              prefix_v6: int = DEFAULT_PREFIX_V6) -> pd.DataFrame:
    """One row per group (or a single row), columns in a fixed order."""
    if name not in QUERIES:
        raise ValueError(f"unknown query {name!r}; expected one of {', '.join(QUERIES)}")
    if by is not None and by not in GROUP_COLUMNS:
        raise ValueError(f"unknown grouping {by!r}; expected one of {', '.join(GROUP_COLUMNS)}")
    query = QUERIES[name]

    if by is None:
        return pd.DataFrame([query(df, flt)])

    df = with_prefix_column(df, prefix_v4, prefix_v6)
    column = GROUP_COLUMNS[by]
    rows = []
    for group in sorted(df[column].dropna().unique(), key=str):
        row = {column: group}
        row.update(query(df[df[column] == group], flt))
        rows.append(row)
    if not rows:
        return pd.DataFrame(columns=[column] + list(query(df, flt)))
    return pd.DataFrame(rows)


# Transitions each query reads, looked up in the store index.
INDEX_SELECTIONS: Dict[str, dict] = {
    "establishment": {"from_phase": int(Phase.CONNECTING), "to_phase": int(Phase.ESTABLISHED)},
    "syn-retrans": {"from_phase": int(Phase.CONNECTING), "to_phase": int(Phase.ESTABLISHED)},
    "jitter": {"from_phase": int(Phase.ESTABLISHED)},
    "rtt": {"from_phase": int(Phase.ESTABLISHED)},
    "connections": {},
}


def index_selection(name: str, store: ProfileStore, flt: Optional[ProfileFilter] = None) -> dict:
    selection = dict(INDEX_SELECTIONS.get(name, {}))
    if flt is None:
        return selection
    if flt.ip_version is not None:
        selection["ip_version"] = flt.ip_version
    if flt.dst_prefix is not None:
        network = ipaddress.ip_network(flt.dst_prefix, strict=False)
        indexed = store.prefix_v4 if network.version == 4 else store.prefix_v6
        # only a prefix of the indexed length is an index key
        if network.prefixlen == indexed:
            selection["prefix"] = str(network)
    return selection


def query_store(name: str, store: ProfileStore, flt: Optional[ProfileFilter] = None,
                by: Optional[str] = None) -> pd.DataFrame:
    """``run_query`` over the part of ``store`` its index says the query can match."""
    df = store.frame(**index_selection(name, store, flt))
    return run_query(name, df, flt, by, store.prefix_v4, store.prefix_v6)

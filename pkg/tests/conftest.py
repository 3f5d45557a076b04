import ipaddress
import time
from pathlib import Path

import pytest

from aggregator.aggregator_daemon import Aggregator
from aggregator.profiles import PerformanceProfile, ProfileKpis
from app import create_app
from config import TestingConfig
from kpi.kpi_accumulator import CounterPair, WindowStat
from kpi.kpi_catalog import COUNTER_KPIS, EVENT_KPIS, META_KPIS, SAMPLED_KPIS, TCP_KPIS, KpiId
from lifecycle.lifecycle_fsm import CONNECTING, ESTABLISHED
from tcp_sim.probe_events import ConnKey, ProbeEventKind, Protocol
from tcp_sim.simulator import replay
from tcp_sim.trace_script import load_trace

TRACES = Path(__file__).parent / "traces"
ALL_TRACES = sorted(p.name for p in TRACES.glob("*.trace"))


@pytest.fixture
def trace_path():
    def _path(name):
        return TRACES / name
    return _path


@pytest.fixture
def replay_trace():
    """Replay a trace file through an Aggregator; returns (profiles, summary, events)."""
    def _replay(name, **kwargs):
        aggregator = Aggregator()
        profiles, events = [], []

        def sink(event):
            events.append(event)
            profile = aggregator.consume(event)
            if profile is not None:
                profiles.append(profile)

        summary = replay(load_trace(TRACES / name), sink, **kwargs)
        return profiles, summary, events
    return _replay


def make_key(uid=1, src="10.0.0.1", dst="192.0.2.10", sport=40000, dport=443,
             protocol=Protocol.TCP, iface="eth0"):
    return ConnKey(ipaddress.ip_address(src), ipaddress.ip_address(dst), sport, dport,
                   protocol, iface, uid)


def make_profile(uid=1, dst="192.0.2.10", src=None, from_state=CONNECTING, to_state=ESTABLISHED,
                 start=0, end=10_000_000, stalls=0, rtt=None, protocol=Protocol.TCP,
                 export_seq=1, meta_uid=None, trigger=ProbeEventKind.CONNECT_ESTABLISHED,
                 counters=None):
    """Synthetic profile; ``rtt`` is (count, mean, variance) or None for no samples."""
    if src is None:
        src = "2001:db8::1" if ":" in dst else "10.0.0.1"
    kpis = META_KPIS if protocol is Protocol.MPTCP_META else TCP_KPIS
    counter_values = {k: CounterPair(0, 0) for k in COUNTER_KPIS if k in kpis}
    counter_values.update(counters or {})
    events = {k: 0 for k in EVENT_KPIS if k in kpis}
    events[KpiId.STALLS] = stalls
    samples = {k: WindowStat() for k in SAMPLED_KPIS if k in kpis}
    if rtt is not None:
        samples[KpiId.RTT] = WindowStat(*rtt)
    return PerformanceProfile(
        key=make_key(uid, src=src, dst=dst, protocol=protocol),
        from_state=from_state,
        to_state=to_state,
        trigger=trigger,
        window_start=start,
        window_end=end,
        kpis=ProfileKpis(counter_values, events, samples),
        export_seq=export_seq,
        meta_uid=meta_uid,
    )


def wait_for(predicate, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.02)
    return predicate()


@pytest.fixture
def app(tmp_path):
    class Config(TestingConfig):
        STORE_PATH = str(tmp_path / "profiles.jsonl")

    app = create_app(Config)
    yield app


@pytest.fixture
def runner(app):
    return app.test_cli_runner()


@pytest.fixture
def client(app):
    return app.test_client()

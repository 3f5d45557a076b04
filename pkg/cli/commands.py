"""Operator commands: replay, export, collect, report, ie-registry.

Run as ``python -m cli <command>`` or ``flask --app app <command>``. Every
option left unset falls back to the application config, which reads the
environment (``.env`` included) over built-in defaults.

Exit status: 0 success, 1 usage, 2 script error, 3 internal error.
"""
from __future__ import annotations

import functools
import logging
from pathlib import Path

import click
from flask import current_app
from flask.cli import FlaskGroup

from app import create_app

from aggregator.aggregator_daemon import Aggregator
from aggregator.export_buffer import MIN_MTU, ExportBuffer
from aggregator.pipeline import ExportPipeline
from collector.collector_server import Collector
from collector.profile_store import ProfileStore, StoredProfile, write_profiles
from collector.queries import GROUP_COLUMNS, QUERIES, ProfileFilter, query_store
from collector.reports import FORMATS, format_csv, format_table, write_xlsx
from ipfix.exporter import UdpExporter
from ipfix.information_elements import load_registry, profile_templates, registry_csv
from tcp_sim.sim_errors import SimulationError
from tcp_sim.simulator import replay
from tcp_sim.trace_script import load_trace

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_SCRIPT = 2
EXIT_INTERNAL = 3


class KpiflowCommand(click.Command):
    """Command whose parse errors exit with the usage status."""

    def parse_args(self, ctx, args):
        try:
            return super().parse_args(ctx, args)
        except click.UsageError as e:
            e.exit_code = EXIT_USAGE
            raise


class RunConfigError(click.UsageError):
    exit_code = EXIT_USAGE


def _cfg(value, key):
    return value if value is not None else current_app.config[key]


def _check_mtu(mtu: int) -> int:
    if mtu < MIN_MTU:
        raise RunConfigError(f"MTU must be at least {MIN_MTU}, got {mtu}")
    return mtu


def guarded(func):
    """Map script and internal failures onto exit statuses."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except click.ClickException:
            raise
        except SimulationError as e:
            click.echo(f"Error: {e}", err=True)
            raise click.exceptions.Exit(EXIT_SCRIPT)
        except Exception as e:
            logger.exception("Command failed")
            click.echo(f"Internal error: {e}", err=True)
            raise click.exceptions.Exit(EXIT_INTERNAL)
    return wrapper


trace_argument = click.argument("trace", type=click.Path(exists=True, dir_okay=False, path_type=Path))


def replay_cmd(trace, out, capacity):
    script = load_trace(trace)
    aggregator = Aggregator()
    profiles = []

    def sink(event):
        profile = aggregator.consume(event)
        if profile is not None:
            profiles.append(profile)

    summary = replay(script, sink, capacity=_cfg(capacity, "ANCILLARY_CAPACITY"))
    if out is not None:
        write_profiles(profiles, out)
    else:
        for profile in profiles:
            click.echo(StoredProfile(profile).to_line())
    click.echo(f"{len(profiles)} profiles from {summary.connections} connections "
               f"({summary.events} events, {summary.refused} refused)", err=True)
    return profiles


def export_cmd(trace, host, port, mtu, enterprise_number, capacity):
    config = current_app.config
    mtu = _check_mtu(_cfg(mtu, "MTU"))
    script = load_trace(trace)
    templates = profile_templates(_cfg(enterprise_number, "ENTERPRISE_NUMBER"))
    buffer = ExportBuffer(
        templates,
        mtu=mtu,
        observation_domain=config["OBSERVATION_DOMAIN_ID"],
        resend_interval=config["TEMPLATE_RESEND_INTERVAL"],
        idle_flush_seconds=config["IDLE_FLUSH_SECONDS"],
    )
    capacity = _cfg(capacity, "ANCILLARY_CAPACITY")
    with UdpExporter(_cfg(host, "COLLECTOR_HOST"), _cfg(port, "COLLECTOR_PORT"), templates) as exporter:
        with ExportPipeline(buffer, exporter.send, config["CHANNEL_CAPACITY"],
                            config["CHANNEL_MODE"]) as pipeline:
            replay(script, pipeline.submit, capacity=capacity)
    click.echo(f"messages: {exporter.messages} records: {exporter.records} "
               f"octets: {exporter.octets} send errors: {exporter.send_errors}")
    return exporter


def report_cmd(query, store_path, by, ip_version, dst_prefix, since, until, fmt, output):
    config = current_app.config
    if fmt == "xlsx" and output is None:
        raise RunConfigError("--output is required for xlsx reports")
    try:
        flt = ProfileFilter(ip_version, dst_prefix, since, until)
    except ValueError as e:
        raise RunConfigError(str(e)) from e

    store_path = Path(_cfg(store_path, "STORE_PATH"))
    if not store_path.is_file():
        raise RunConfigError(f"profile store {store_path} does not exist")
    store = ProfileStore.load(store_path, config["PREFIX_V4"], config["PREFIX_V6"])
    df = query_store(query, store, flt, by)

    if fmt == "xlsx":
        write_xlsx(df, output, title=f"{query} report")
        click.echo(f"Wrote {len(df)} row(s) to {output}")
        return df
    text = format_csv(df) if fmt == "csv" else format_table(df) + "\n"
    if output is not None:
        Path(output).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)
    return df


def register_commands(app):

    @app.cli.command("replay", cls=KpiflowCommand)
    @trace_argument
    @click.option("--out", type=click.Path(dir_okay=False, path_type=Path),
                  help="Profile store file to write (default: stdout).")
    @click.option("--capacity", type=click.IntRange(min=1), help="Ancillary map capacity.")
    @guarded
    def replay_command(trace, out, capacity):
        """Replay a trace through the aggregator and write its profiles."""
        replay_cmd(trace, out, capacity)

    @app.cli.command("export", cls=KpiflowCommand)
    @trace_argument
    @click.option("--host", help="Collector address.")
    @click.option("--port", type=click.IntRange(1, 65535), help="Collector UDP port.")
    @click.option("--mtu", type=int, help=f"Message size limit (>= {MIN_MTU}).")
    @click.option("--enterprise-number", type=click.IntRange(0, 2**32 - 1),
                  help="PEN of the enterprise Information Elements.")
    @click.option("--capacity", type=click.IntRange(min=1), help="Ancillary map capacity.")
    @guarded
    def export_command(trace, host, port, mtu, enterprise_number, capacity):
        """Replay a trace and send its profiles over IPFIX/UDP."""
        export_cmd(trace, host, port, mtu, enterprise_number, capacity)

    @app.cli.command("collect", cls=KpiflowCommand)
    @click.option("--bind", help="Listen address.")
    @click.option("--port", type=click.IntRange(0, 65535), help="Listen UDP port.")
    @click.option("--store", "store_path", type=click.Path(dir_okay=False, path_type=Path),
                  help="Profile store file (appended to).")
    @click.option("--enterprise-number", type=click.IntRange(0, 2**32 - 1))
    @click.option("--max-datagrams", type=click.IntRange(min=1),
                  help="Stop after this many datagrams.")
    @guarded
    def collect_command(bind, port, store_path, enterprise_number, max_datagrams):
        """Receive IPFIX datagrams and append their profiles to the store."""
        config = current_app.config
        store = ProfileStore(_cfg(store_path, "STORE_PATH"), config["PREFIX_V4"], config["PREFIX_V6"])
        collector = Collector(store, _cfg(enterprise_number, "ENTERPRISE_NUMBER"))
        try:
            collector.serve(_cfg(bind, "COLLECTOR_BIND"), _cfg(port, "COLLECTOR_PORT"),
                            max_datagrams=max_datagrams)
        except KeyboardInterrupt:
            collector.stop()
        stats = collector.stats
        click.echo(f"datagrams: {stats.datagrams} appended: {stats.appended} "
                   f"malformed: {stats.malformed} undecodable sets: {stats.undecodable_sets} "
                   f"recovered: {stats.recovered} rejected: {stats.rejected}")

    @app.cli.command("report", cls=KpiflowCommand)
    @click.argument("query", type=click.Choice(list(QUERIES)))
    @click.option("--store", "store_path", type=click.Path(dir_okay=False, path_type=Path))
    @click.option("--by", type=click.Choice(list(GROUP_COLUMNS)), help="Group rows.")
    @click.option("--filter", "ip_filter", type=click.Choice(["v4", "v6"]),
                  help="Restrict to one address family.")
    @click.option("--dst-prefix", help="Restrict to a destination prefix, e.g. 192.0.2.0/24.")
    @click.option("--since", type=int, help="Window start lower bound (ns).")
    @click.option("--until", type=int, help="Window end upper bound (ns).")
    @click.option("--format", "fmt", type=click.Choice(FORMATS), default="table", show_default=True)
    @click.option("--output", type=click.Path(dir_okay=False, path_type=Path))
    @guarded
    def report_command(query, store_path, by, ip_filter, dst_prefix, since, until, fmt, output):
        """Summarise the profile store (establishment, syn-retrans, jitter, rtt, connections)."""
        report_cmd(query, store_path, by, int(ip_filter[1:]) if ip_filter else None,
                   dst_prefix, since, until, fmt, output)

    @app.cli.command("ie-registry", cls=KpiflowCommand)
    @click.option("--enterprise-number", type=click.IntRange(0, 2**32 - 1))
    @click.option("--output", type=click.Path(dir_okay=False, path_type=Path))
    @guarded
    def ie_registry_command(enterprise_number, output):
        """Print the Information Element registry with the configured PEN."""
        text = registry_csv(load_registry(enterprise_number=_cfg(enterprise_number, "ENTERPRISE_NUMBER")))
        if output is not None:
            output.write_text(text, encoding="utf-8")
        else:
            click.echo(text, nl=False)


cli = FlaskGroup(create_app=create_app, add_default_commands=False,
                 help="End-host transport KPI export and analysis.")


def main():
    cli.main(prog_name="kpiflow")

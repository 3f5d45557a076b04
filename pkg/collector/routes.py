from pathlib import Path

from flask import Blueprint, Response, abort, current_app, jsonify, request

from collector.profile_store import ProfileStore
from collector.queries import GROUP_COLUMNS, QUERIES, ProfileFilter, query_store
from collector.reports import format_csv, records

reports_bp = Blueprint("reports", __name__)


def _optional_int(name):
    value = request.args.get(name)
    if value in (None, ""):
        return None
    try:
        return int(value)
    except ValueError:
        abort(400, description=f"{name} must be an integer")


def _load_store() -> ProfileStore:
    config = current_app.config
    path = Path(config["STORE_PATH"])
    if not path.exists():
        current_app.logger.warning("Profile store %s does not exist yet", path)
        return ProfileStore(None, config["PREFIX_V4"], config["PREFIX_V6"])
    return ProfileStore.load(path, config["PREFIX_V4"], config["PREFIX_V6"])


@reports_bp.route("/", methods=["GET"])
def list_queries():
    return jsonify({"queries": list(QUERIES), "group_by": list(GROUP_COLUMNS)})


@reports_bp.route("/<query>", methods=["GET"])
def report(query):
    if query not in QUERIES:
        abort(404, description=f"unknown query {query!r}")
    by = request.args.get("by") or None
    if by is not None and by not in GROUP_COLUMNS:
        abort(400, description=f"unknown grouping {by!r}")
    try:
        flt = ProfileFilter(
            ip_version=_optional_int("ip_version"),
            dst_prefix=request.args.get("dst_prefix") or None,
            since=_optional_int("since"),
            until=_optional_int("until"),
        )
    except ValueError as e:
        abort(400, description=str(e))

    df = query_store(query, _load_store(), flt, by)
    current_app.logger.info("Report %s (by=%s, %s): %d row(s)", query, by, flt, len(df))

    if request.args.get("format") == "csv":
        return Response(format_csv(df), mimetype="text/csv")
    return jsonify({"query": query, "by": by, "rows": records(df)})

"""Command line interface.

Subcommands: ingest, query, cycle, eval, serve, snapshot. Machine-readable
JSON goes to stdout, diagnostics to stderr. Exit codes: 0 success, 1 usage
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig
from .errors import ParseError, SenseRagError
from .evaluate import emit_report, run_experiment
from .ingest import ingest_csv, load_mapping
from .llm import make_endpoint
from .query import QueryContext, RenderProfile, parse_query, render_sql, validate_sql
from .query.executor import execute, project
from .query.sqlite_eval import load_sqlite, run_select
from .rag import Arm, run_proactive_cycle
from .store import KnowledgeStore
from .timeutil import parse_instant


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="senserag", description=__doc__)
    parser.add_argument("--version", action="version", version=f"senserag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_ingest = sub.add_parser("ingest", help="load CSV feeds into a store snapshot")
    p_ingest.add_argument("--store", help="existing snapshot to extend")
    p_ingest.add_argument("--save", help="write the resulting snapshot here")
    p_ingest.add_argument("--trajectories", help="trajectory CSV (vehicles & pedestrians)")
    p_ingest.add_argument("--vehicles", dest="trajectories", help=argparse.SUPPRESS)
    p_ingest.add_argument("--weather", help="weather CSV")
    p_ingest.add_argument("--signals", help="traffic signal CSV")
    p_ingest.add_argument("--mapping", help="column-mapping key-value file")

    p_query = sub.add_parser("query", help="compile and run a query")
    group = p_query.add_mutually_exclusive_group(required=True)
    group.add_argument("--nl", help="natural-language query text")
    group.add_argument("--sql", help="raw SQL (validated, run on a sqlite mirror)")
    p_query.add_argument("--store", help="snapshot to query")
    p_query.add_argument("--at", help="'current time' for deictic queries (ISO-8601)")
    p_query.add_argument("--here", help="'current position' as X,Y")
    p_query.add_argument("--ego", help="ego entity id for exclusion filters")
    p_query.add_argument("--radius", type=float, default=30.0,
                         help="default radius in meters for 'around' queries")
    p_query.add_argument("--profile", choices=[p.value for p in RenderProfile],
                         default=RenderProfile.DEFAULT.value, help="SQL rendering profile")

    p_cycle = sub.add_parser("cycle", help="run one proactive prediction cycle")
    p_cycle.add_argument("--store", required=True)
    p_cycle.add_argument("--ego", required=True)
    p_cycle.add_argument("--at", required=True, help="anchor instant (ISO-8601)")
    p_cycle.add_argument("--horizon", type=int, default=10)
    p_cycle.add_argument("--mode", choices=[a.value for a in Arm], default=Arm.SENSERAG.value)
    p_cycle.add_argument("--endpoint", default="stub:constant-velocity")
    p_cycle.add_argument("--config", help="run config file for endpoint/radii settings")

    p_eval = sub.add_parser("eval", help="run the baseline-vs-retrieval experiment")
    p_eval.add_argument("--config", required=True, help="run config file")
    p_eval.add_argument("--format", choices=["json", "csv", "markdown"], default="json")
    p_eval.add_argument("--out", help="report file (default: <output_dir>/report.<ext>)")

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--config", help="run config file")
    p_serve.add_argument("--host")
    p_serve.add_argument("--port", type=int)
    p_serve.add_argument("--store")
    p_serve.add_argument("--endpoint")

    p_snap = sub.add_parser("snapshot", help="inspect a snapshot file")
    p_snap.add_argument("path")

    return parser


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")


def _load_store(path: str | None) -> KnowledgeStore:
    return KnowledgeStore.load_snapshot(path) if path else KnowledgeStore()


def _cmd_ingest(args) -> int:
    store = _load_store(args.store)
    mapping = load_mapping(args.mapping) if args.mapping else None
    reports = {}
    for kind, path in (("trajectory", args.trajectories), ("weather", args.weather),
                       ("signals", args.signals)):
        if path:
            reports[kind] = ingest_csv(store, kind, path, mapping).to_json()
    if not reports:
        raise _UsageError("ingest: provide at least one of --trajectories/--weather/--signals")
    if args.save:
        store.save_snapshot(args.save)
    _emit({"reports": reports, "store_counts": store.counts(),
           "saved": args.save or None})
    return 0


def _context_from(args) -> QueryContext:
    position = None
    if args.here:
        xs, ys = args.here.split(",", 1)
        position = (float(xs), float(ys))
    return QueryContext(
        now=parse_instant(args.at) if args.at else None,
        position=position,
        ego_id=args.ego,
        default_radius=args.radius,
    )


def _cmd_query(args) -> int:
    store = _load_store(args.store)
    if args.sql is not None:
        violations = validate_sql(args.sql)
        if violations:
            _emit({"sql": args.sql,
                   "violations": [{"kind": v.kind.value, "detail": v.detail} for v in violations]})
            return 2
        names, rows = run_select(load_sqlite(store), args.sql)
        _emit({"sql": args.sql, "rows": [dict(zip(names, row)) for row in rows]})
        return 0

    ir = parse_query(args.nl)
    profile = RenderProfile(args.profile)
    context = _context_from(args)
    try:
        resolved = ir.resolve(context)
    except ValueError as exc:
        # deictic query without context: show the compatibility SQL only
        _emit({"sql": render_sql(ir, RenderProfile.COMPAT).statement,
               "rows": None, "note": str(exc)})
        return 0
    sql = render_sql(resolved if profile is RenderProfile.DEFAULT else ir, profile)
    rows = execute(resolved, store)
    _emit({"sql": sql.statement, "rows": project(rows, resolved)})
    return 0


def _cmd_cycle(args) -> int:
    run_cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    store = KnowledgeStore.load_snapshot(args.store)
    endpoint = make_endpoint(args.endpoint, run_cfg.endpoint_config())
    result = run_proactive_cycle(
        store, args.ego, parse_instant(args.at), args.horizon, endpoint,
        mode=Arm(args.mode), config=run_cfg.cycle_config())
    _emit({
        "prediction": result.prediction.to_json(),
        "query": None if result.query is None else {
            "text": result.query.text,
            "used_fallback": result.query.used_fallback,
            "attempts": result.query.attempts,
        },
        "retrieved_count": len(result.retrieved),
        "visible_count": len(result.snapshot.visible),
    })
    return 0


def _cmd_eval(args) -> int:
    run_cfg = RunConfig.from_file(args.config)
    store = run_cfg.build_store()
    endpoint = run_cfg.build_endpoint()
    run_dir = Path(run_cfg.output_dir) if run_cfg.output_dir else None
    report = run_experiment(store, endpoint, run_cfg.experiment_config(), run_dir=run_dir)
    if args.out:
        out = Path(args.out)
    else:
        ext = {"json": "json", "csv": "csv", "markdown": "md"}[args.format]
        base = run_dir if run_dir else Path(".")
        base.mkdir(parents=True, exist_ok=True)
        out = base / f"report.{ext}"
    emit_report(report, args.format, out)
    _emit({"report": report.to_json(), "written": str(out)})
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    run_cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.store:
        run_cfg.store_path = args.store
    if args.endpoint:
        run_cfg.endpoint = args.endpoint
    host = args.host or run_cfg.host
    port = args.port or run_cfg.port
    app = create_app(run_cfg.build_store(), run_cfg)
    print(f"serving on http://{host}:{port}", file=sys.stderr)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return 0


def _cmd_snapshot(args) -> int:
    store = KnowledgeStore.load_snapshot(args.path)
    counts = store.counts()
    _emit({"path": args.path, "table_counts": counts, "total": sum(counts.values())})
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "query": _cmd_query,
    "cycle": _cmd_cycle,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
    "snapshot": _cmd_snapshot,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ParseError as exc:
        print(f"query parse error: {exc}", file=sys.stderr)
        return 2
    except SenseRagError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

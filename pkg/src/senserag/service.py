"""HTTP JSON service exposing inserts, queries, and single prediction cycles.

Single process, no auth; writes go through the store's single-writer lock
while reads run concurrently. The CLI and this service share the same
underlying operations, so identical logical requests give identical results.
"""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .config import RunConfig
from .errors import (
    DanglingReference,
    EgoNotFound,
    EndpointUnavailable,
    EpochOutOfBounds,
    InvariantViolation,
    MalformedPrediction,
    ParseError,
    SenseRagError,
    UnknownTable,
)
from .query import QueryContext, RenderProfile, parse_query, render_sql, validate_sql
from .query.executor import execute, project
from .query.sqlite_eval import load_sqlite, run_select
from .rag import Arm, run_proactive_cycle
from .records import record_from_json, table_from_name
from .store import KnowledgeStore
from .timeutil import parse_instant


class RecordIn(BaseModel):
    table: str
    record: dict[str, Any]


class ContextIn(BaseModel):
    at: Optional[str] = None
    x: Optional[float] = None
    y: Optional[float] = None
    ego_id: Optional[str] = None
    radius: float = 30.0


class QueryIn(BaseModel):
    nl: Optional[str] = None
    sql: Optional[str] = None
    context: Optional[ContextIn] = None
    profile: str = RenderProfile.DEFAULT.value


class CycleIn(BaseModel):
    ego_id: str
    at: str
    horizon: int = 10
    mode: str = Arm.SENSERAG.value


def create_app(store: KnowledgeStore | None = None, config: RunConfig | None = None) -> FastAPI:
    config = config or RunConfig()
    app = FastAPI(title="senserag", version=__version__)
    app.state.store = store if store is not None else KnowledgeStore()
    app.state.config = config
    app.state.endpoint = config.build_endpoint()

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/records")
    def insert_record(body: RecordIn):
        try:
            table = table_from_name(body.table)
            record = record_from_json(table, body.record)
            result = app.state.store.insert(record)
        except InvariantViolation as exc:
            return JSONResponse(status_code=422, content={"error": str(exc), "field": exc.field})
        except EpochOutOfBounds as exc:
            return JSONResponse(status_code=422, content={"error": str(exc), "field": "timestamp"})
        except (DanglingReference, UnknownTable) as exc:
            return JSONResponse(status_code=422, content={"error": str(exc)})
        except (KeyError, ValueError, TypeError) as exc:
            return JSONResponse(status_code=422, content={"error": f"malformed record: {exc}"})
        return {"key": [result.key[0], result.key[1]], "replaced": result.replaced}

    @app.post("/query")
    def query(body: QueryIn):
        store: KnowledgeStore = app.state.store
        if (body.nl is None) == (body.sql is None):
            return JSONResponse(status_code=400,
                                content={"error": "provide exactly one of 'nl' or 'sql'"})
        if body.sql is not None:
            violations = validate_sql(body.sql)
            if violations:
                return JSONResponse(status_code=400, content={
                    "violations": [{"kind": v.kind.value, "detail": v.detail}
                                   for v in violations]})
            names, rows = run_select(load_sqlite(store), body.sql)
            return {"sql": body.sql, "rows": [dict(zip(names, row)) for row in rows]}

        try:
            ir = parse_query(body.nl)
        except ParseError as exc:
            return JSONResponse(status_code=400, content={
                "error": str(exc), "position": exc.position, "expected": list(exc.expected)})
        ctx = body.context or ContextIn()
        context = QueryContext(
            now=parse_instant(ctx.at) if ctx.at else None,
            position=(ctx.x, ctx.y) if ctx.x is not None and ctx.y is not None else None,
            ego_id=ctx.ego_id,
            default_radius=ctx.radius,
        )
        try:
            resolved = ir.resolve(context)
        except ValueError as exc:
            return JSONResponse(status_code=400, content={
                "error": str(exc),
                "sql": render_sql(ir, RenderProfile.COMPAT).statement})
        profile = RenderProfile(body.profile)
        sql = render_sql(resolved if profile is RenderProfile.DEFAULT else ir, profile)
        rows = execute(resolved, store)
        return {"sql": sql.statement, "rows": project(rows, resolved)}

    @app.post("/cycle")
    def cycle(body: CycleIn):
        store: KnowledgeStore = app.state.store
        try:
            result = run_proactive_cycle(
                store, body.ego_id, parse_instant(body.at), body.horizon,
                app.state.endpoint, mode=Arm(body.mode),
                config=app.state.config.cycle_config())
        except EgoNotFound as exc:
            return JSONResponse(status_code=404, content={"error": str(exc)})
        except (MalformedPrediction, EndpointUnavailable) as exc:
            return JSONResponse(status_code=502,
                                content={"error": str(exc), "kind": type(exc).__name__})
        except SenseRagError as exc:
            return JSONResponse(status_code=400,
                                content={"error": str(exc), "kind": type(exc).__name__})
        return {
            "prediction": result.prediction.to_json(),
            "query": None if result.query is None else {
                "text": result.query.text,
                "used_fallback": result.query.used_fallback,
            },
            "retrieved_count": len(result.retrieved),
            "visible_count": len(result.snapshot.visible),
        }

    return app

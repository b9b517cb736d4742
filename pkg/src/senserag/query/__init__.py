"""Constrained natural-language query compiler: parse -> IR -> SQL -> execute."""

from .ir import (
    ALL,
    Current,
    EntityEquals,
    EntityExclude,
    Instant,
    PointEqual,
    QueryContext,
    QueryIR,
    RadiusAround,
    Window,
)
from .parser import parse_query
from .sql import RenderProfile, SqlText, Violation, render_sql, validate_sql
from .executor import execute, project

__all__ = [
    "ALL", "Current", "EntityEquals", "EntityExclude", "Instant", "PointEqual",
    "QueryContext", "QueryIR", "RadiusAround", "Window",
    "parse_query", "RenderProfile", "SqlText", "Violation", "render_sql",
    "validate_sql", "execute", "project",
]

"""UTC instants at millisecond precision.

All timestamps in the store are timezone-aware UTC datetimes truncated to
whole milliseconds; kernels and indexes work on integer epoch milliseconds.
"""

from __future__ import annotations

from datetime import datetime, timezone

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def to_utc_ms(dt: datetime) -> int:
    """Epoch milliseconds of a datetime (naive datetimes are taken as UTC)."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return round(dt.timestamp() * 1000)


def from_utc_ms(ms: int) -> datetime:
    return datetime.fromtimestamp(ms / 1000.0, tz=timezone.utc)


def truncate_ms(dt: datetime) -> datetime:
    """Normalize to UTC and drop sub-millisecond digits."""
    return from_utc_ms(to_utc_ms(dt))


def parse_instant(text: str) -> datetime:
    """Parse an ISO-8601 instant; accepts a space or 'T' separator and 'Z'."""
    cleaned = text.strip()
    if cleaned.endswith(("Z", "z")):
        cleaned = cleaned[:-1] + "+00:00"
    dt = datetime.fromisoformat(cleaned)
    return truncate_ms(dt)


def format_instant(dt: datetime) -> str:
    """Canonical ISO form used in snapshot files: 'YYYY-MM-DDTHH:MM:SS[.mmm]Z'."""
    dt = truncate_ms(dt)
    base = dt.strftime("%Y-%m-%dT%H:%M:%S")
    if dt.microsecond:
        base += f".{dt.microsecond // 1000:03d}"
    return base + "Z"


def format_instant_sql(dt: datetime) -> str:
    """Fixed-width ISO form for SQL literals and columns.

    Milliseconds are always present so lexicographic order equals
    chronological order in text comparisons.
    """
    dt = truncate_ms(dt)
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{dt.microsecond // 1000:03d}Z"


def format_instant_verbal(dt: datetime) -> str:
    """Human form used in sentences and queries: 'YYYY-MM-DD HH:MM:SS[.mmm]'."""
    dt = truncate_ms(dt)
    base = dt.strftime("%Y-%m-%d %H:%M:%S")
    if dt.microsecond:
        base += f".{dt.microsecond // 1000:03d}"
    return base

"""Parser for the closed natural-language query grammar.

The grammar is a set of sentence frames with typed slots (timestamp,
coordinate pair, field list, table noun, distance). Matching is
case-insensitive and whitespace-flexible. On failure, the frame that
consumed the most input reports a ParseError with the failure position and
the expected-token set; no input ever raises anything else.

The frames (EBNF-style sketch; see docs/grammar.md for the full version):

  ego_query      = "At timestamp" TS "," "provide the" FIELDS
                   "of my car located at" POINT "."
                   [ "In addition, provide the same information for other"
                     TABLE_NOUN "around my car" [ "within" NUM LENGTH_UNIT ] "." ]
  around_query   = "At timestamp" TS "," "provide" ("all information" | "the" FIELDS)
                   ("about" | "of" | "for") TABLE_NOUN
                   "within" NUM LENGTH_UNIT "of" POINT "."
  signal_query   = "Retrieve the traffic signal status for the current road segment."
  weather_query  = "Retrieve the" ["current"] "weather conditions"
                   ["for the current location"] "."
"""

from __future__ import annotations

import re
from typing import Callable, Optional

from ..errors import ParseError
from ..records import Table
from .ir import (
    ALL,
    Current,
    EntityExclude,
    Instant,
    PointEqual,
    QueryIR,
    RadiusAround,
)

_WS = re.compile(r"\s+")
_NUMBER = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")
_TIMESTAMP = re.compile(r"\d{4}-\d{2}-\d{2}[ T]\d{2}:\d{2}:\d{2}(?:\.\d{1,6})?Z?")
_WORD = re.compile(r"[A-Za-z_]+")

#: Field nouns -> projected columns.
FIELD_SYNONYMS: dict[str, tuple[str, ...]] = {
    "location": ("x", "y"),
    "position": ("x", "y"),
    "coordinates": ("x", "y"),
    "velocity": ("vx", "vy"),
    "speed": ("vx", "vy"),
    "acceleration": ("ax", "ay"),
    "status": ("state",),
    "state": ("state",),
    "class": ("class",),
    "timestamp": ("timestamp",),
}

#: Table nouns (longest first so "traffic signals" wins over "signals").
TABLE_NOUNS: list[tuple[str, Table]] = [
    ("traffic signals", Table.TRAFFIC_SIGNALS),
    ("traffic signs", Table.TRAFFIC_SIGNS),
    ("traffic lights", Table.TRAFFIC_SIGNALS),
    ("intersections", Table.INTERSECTIONS),
    ("pedestrians", Table.PEDESTRIANS),
    ("vehicles", Table.VEHICLES),
    ("cars", Table.VEHICLES),
    ("signals", Table.TRAFFIC_SIGNALS),
    ("signs", Table.TRAFFIC_SIGNS),
]

_LENGTH_WORDS = ("meters", "metres", "meter", "m")


class _Fail(Exception):
    def __init__(self, position: int, expected: tuple[str, ...]):
        self.position = position
        self.expected = expected


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        m = _WS.match(self.text, self.pos)
        if m:
            self.pos = m.end()

    def try_literal(self, phrase: str) -> bool:
        """Match a phrase word by word, ignoring case and whitespace runs."""
        saved = self.pos
        for word in phrase.split():
            self.skip_ws()
            if self.text[self.pos:self.pos + len(word)].lower() != word.lower():
                self.pos = saved
                return False
            self.pos += len(word)
        return True

    def expect_literal(self, phrase: str) -> None:
        if not self.try_literal(phrase):
            self.skip_ws()
            raise _Fail(self.pos, (repr(phrase),))

    def expect_regex(self, pattern: re.Pattern, expected: str) -> str:
        self.skip_ws()
        m = pattern.match(self.text, self.pos)
        if not m:
            raise _Fail(self.pos, (expected,))
        self.pos = m.end()
        return m.group(0)

    def expect_end(self) -> None:
        self.skip_ws()
        if self.pos != len(self.text):
            raise _Fail(self.pos, ("end of query",))


def _parse_timestamp(scanner: _Scanner):
    from ..timeutil import parse_instant

    start = scanner.pos
    raw = scanner.expect_regex(_TIMESTAMP, "timestamp 'YYYY-MM-DD HH:MM:SS'")
    try:
        return parse_instant(raw)
    except ValueError:
        raise _Fail(start, ("valid calendar timestamp",)) from None


def _parse_number(scanner: _Scanner) -> float:
    return float(scanner.expect_regex(_NUMBER, "number"))


def _parse_point(scanner: _Scanner) -> tuple[float, float]:
    scanner.expect_literal("(")
    x = _parse_number(scanner)
    scanner.expect_literal(",")
    y = _parse_number(scanner)
    scanner.expect_literal(")")
    return (x, y)


def _parse_field_list(scanner: _Scanner) -> tuple[str, ...]:
    """Comma/'and' separated field nouns, mapped through the synonym table."""
    columns: list[str] = []
    while True:
        scanner.skip_ws()
        at = scanner.pos
        word = scanner.expect_regex(_WORD, "field name (location, velocity, ...)").lower()
        mapped = FIELD_SYNONYMS.get(word)
        if mapped is None:
            raise _Fail(at, tuple(sorted(FIELD_SYNONYMS)))
        for col in mapped:
            if col not in columns:
                columns.append(col)
        if scanner.try_literal(", and") or scanner.try_literal(",") or scanner.try_literal("and"):
            continue
        return tuple(columns)


def _parse_table_noun(scanner: _Scanner) -> Table:
    scanner.skip_ws()
    for noun, table in TABLE_NOUNS:
        if scanner.try_literal(noun):
            return table
    raise _Fail(scanner.pos, tuple(noun for noun, _ in TABLE_NOUNS))


def _parse_distance(scanner: _Scanner, required: bool = False) -> Optional[float]:
    """'within N meters' clause; None when absent and not required."""
    if not scanner.try_literal("within"):
        if required:
            scanner.skip_ws()
            raise _Fail(scanner.pos, ("'within'",))
        return None
    value = _parse_number(scanner)
    for unit in _LENGTH_WORDS:
        if scanner.try_literal(unit):
            return value
    scanner.skip_ws()
    raise _Fail(scanner.pos, _LENGTH_WORDS)


def _frame_ego_query(scanner: _Scanner) -> QueryIR:
    scanner.expect_literal("At timestamp")
    ts = _parse_timestamp(scanner)
    scanner.expect_literal(",")
    scanner.expect_literal("provide the")
    fields = _parse_field_list(scanner)
    scanner.expect_literal("of my car located at")
    center = _parse_point(scanner)
    scanner.expect_literal(".")

    scanner.skip_ws()
    if scanner.pos == len(scanner.text):
        # single sentence: the ego row itself
        return QueryIR(table=Table.VEHICLES, projection=fields,
                       spatial=PointEqual(center), temporal=Instant(ts))

    scanner.expect_literal("In addition, provide the same information for other")
    table = _parse_table_noun(scanner)
    scanner.expect_literal("around my car")
    radius = _parse_distance(scanner)
    scanner.expect_literal(".")
    scanner.expect_end()
    return QueryIR(table=table, projection=fields,
                   spatial=RadiusAround(center, radius), temporal=Instant(ts),
                   entity_filter=EntityExclude(Current.EGO))


def _frame_around_query(scanner: _Scanner) -> QueryIR:
    scanner.expect_literal("At timestamp")
    ts = _parse_timestamp(scanner)
    scanner.expect_literal(",")
    scanner.expect_literal("provide")
    if scanner.try_literal("all information"):
        fields: tuple[str, ...] | str = ALL
    else:
        scanner.expect_literal("the")
        fields = _parse_field_list(scanner)
    if not (scanner.try_literal("about") or scanner.try_literal("of") or scanner.try_literal("for")):
        scanner.skip_ws()
        raise _Fail(scanner.pos, ("'about'", "'of'", "'for'"))
    table = _parse_table_noun(scanner)
    radius = _parse_distance(scanner, required=True)
    scanner.expect_literal("of")
    center = _parse_point(scanner)
    scanner.expect_literal(".")
    scanner.expect_end()
    return QueryIR(table=table, projection=fields,
                   spatial=RadiusAround(center, radius), temporal=Instant(ts))


def _frame_signal_query(scanner: _Scanner) -> QueryIR:
    scanner.expect_literal("Retrieve the traffic signal status for the current road segment.")
    scanner.expect_end()
    return QueryIR(table=Table.TRAFFIC_SIGNALS, projection=("state",),
                   spatial=RadiusAround(Current.POSITION, None),
                   temporal=Instant(Current.TIME))


def _frame_weather_query(scanner: _Scanner) -> QueryIR:
    scanner.expect_literal("Retrieve the")
    scanner.try_literal("current")
    scanner.expect_literal("weather conditions")
    scanner.try_literal("for the current location")
    scanner.expect_literal(".")
    scanner.expect_end()
    return QueryIR(table=Table.WEATHER, projection=ALL, temporal=Instant(Current.TIME))


_FRAMES: list[Callable[[_Scanner], QueryIR]] = [
    _frame_ego_query,
    _frame_around_query,
    _frame_signal_query,
    _frame_weather_query,
]


def parse_query(text: str) -> QueryIR:
    """Parse constrained natural language into a validated QueryIR.

    Total over arbitrary strings: the result is either an IR or ParseError.
    """
    if not isinstance(text, str):
        raise ParseError(0, ("query text",), "input is not text")
    best: Optional[_Fail] = None
    for frame in _FRAMES:
        scanner = _Scanner(text)
        try:
            ir = frame(scanner)
        except _Fail as fail:
            if best is None or fail.position > best.position:
                best = fail
            elif fail.position == best.position:
                merged = tuple(dict.fromkeys(best.expected + fail.expected))
                best = _Fail(best.position, merged)
            continue
        ir.validate()
        return ir
    assert best is not None
    raise ParseError(best.position, best.expected)

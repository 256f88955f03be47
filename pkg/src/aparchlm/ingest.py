"""
Tick-file ingestion: parsing, front-month selection and calendar-clean bars.

The pipeline is ``parse_ticks -> select_front_contract -> build_bars ->
log_returns``; :func:`ingest` runs all four and assembles a JSON-ready report.
"""

from __future__ import annotations

import datetime as dt
import io
import json
import math
import re
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

import numpy as np

from .errors import ConfigurationError, DataError
from .series import BarSeries, ReturnSeries, TradingCalendar, log_returns

__all__ = [
    "TickRecord",
    "FormatDescriptor",
    "ParseResult",
    "IngestConfig",
    "IngestResult",
    "parse_ticks",
    "expiry_sort_key",
    "front_contract_schedule",
    "select_front_contract",
    "build_bars",
    "ingest",
]

RECORD_TYPES = ("trade", "bid", "ask", "other")
TICK_FIELDS = ("timestamp", "expiry_code", "price", "volume", "record_type")

_MONTH_CODES = "FGHJKMNQUVXZ"
_MONTH_NAMES = ("jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec")


@dataclass(frozen=True, slots=True)
class TickRecord:
    timestamp: dt.datetime
    expiry_code: str
    price: float
    volume: int
    record_type: str


@dataclass(frozen=True)
class FormatDescriptor:
    """Column layout of a delimited tick file.

    Parameters
    ----------
    columns : dict
        Maps each tick field name to the header label that holds it.
    delimiter : str
    timestamp_format : str
        ``"iso"`` or a :func:`datetime.strptime` pattern.
    record_type_map : dict
        Raw record-type labels mapped onto ``trade``/``bid``/``ask``/``other``;
        labels that are already canonical pass through, others become ``other``.
    """

    columns: dict[str, str] = field(default_factory=lambda: {f: f for f in TICK_FIELDS})
    delimiter: str = ","
    timestamp_format: str = "iso"
    record_type_map: dict[str, str] = field(
        default_factory=lambda: {"T": "trade", "B": "bid", "A": "ask"}
    )

    def __post_init__(self) -> None:
        missing = [f for f in TICK_FIELDS if f not in self.columns]
        if missing:
            raise ConfigurationError(f"format descriptor lacks columns for {missing}")
        bad = {v for v in self.record_type_map.values() if v not in RECORD_TYPES}
        if bad:
            raise ConfigurationError(f"unknown record types in map: {sorted(bad)}")

    @classmethod
    def from_json(cls, path: str | Path) -> FormatDescriptor:
        raw = json.loads(Path(path).read_text())
        return cls(**raw)

    def to_dict(self) -> dict:
        return {
            "columns": dict(self.columns),
            "delimiter": self.delimiter,
            "timestamp_format": self.timestamp_format,
            "record_type_map": dict(self.record_type_map),
        }


@dataclass
class ParseResult:
    records: list[TickRecord]
    rejects: list[dict]
    n_lines: int

    def __len__(self) -> int:
        return len(self.records)


def _parse_timestamp(text: str, fmt: str) -> dt.datetime:
    text = text.strip()
    if fmt == "iso":
        ts = dt.datetime.fromisoformat(text)
    else:
        ts = dt.datetime.strptime(text, fmt)
    return ts.replace(microsecond=0, tzinfo=None)


def parse_ticks(stream: IO | Iterable[str] | bytes | str,
                fmt: FormatDescriptor | None = None) -> ParseResult:
    """Parse a delimited tick file.

    Bad lines never abort the parse: each one is recorded in
    ``ParseResult.rejects`` with its line number and the reason. Only a
    missing or incomplete header is fatal.
    """
    fmt = fmt or FormatDescriptor()
    if isinstance(stream, bytes):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = (ln.decode("utf-8") if isinstance(ln, bytes) else ln for ln in stream)

    header_line = next(lines, None)
    if header_line is None or not header_line.strip():
        return ParseResult([], [], 0)
    header = [h.strip() for h in header_line.rstrip("\r\n").split(fmt.delimiter)]
    try:
        idx = {f: header.index(fmt.columns[f]) for f in TICK_FIELDS}
    except ValueError as exc:
        raise DataError(f"tick header {header} does not match format descriptor: {exc}") from exc
    width = max(idx.values()) + 1

    records: list[TickRecord] = []
    rejects: list[dict] = []
    n_lines = 0
    for lineno, line in enumerate(lines, start=2):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        n_lines += 1
        parts = line.split(fmt.delimiter)
        try:
            if len(parts) < width:
                raise ValueError(f"expected at least {width} fields, got {len(parts)}")
            raw_type = parts[idx["record_type"]].strip()
            rtype = fmt.record_type_map.get(raw_type, raw_type.lower())
            if rtype not in RECORD_TYPES:
                rtype = "other"
            price = float(parts[idx["price"]])
            if not math.isfinite(price):
                raise ValueError(f"non-finite price {price}")
            if rtype == "trade" and price <= 0:
                raise ValueError(f"non-positive trade price {price}")
            vol_text = parts[idx["volume"]].strip()
            volume = int(float(vol_text)) if vol_text else 0
            if volume < 0:
                raise ValueError(f"negative volume {volume}")
            rec = TickRecord(
                timestamp=_parse_timestamp(parts[idx["timestamp"]], fmt.timestamp_format),
                expiry_code=parts[idx["expiry_code"]].strip(),
                price=price,
                volume=volume,
                record_type=rtype,
            )
        except ValueError as exc:
            rejects.append({"line": lineno, "text": line, "reason": str(exc)})
            continue
        records.append(rec)
    return ParseResult(records, rejects, n_lines)


def _full_year(yy: str) -> int:
    y = int(yy)
    if len(yy) == 4:
        return y
    return 1900 + y if y >= 50 else 2000 + y


def expiry_sort_key(code: str) -> tuple[int, int]:
    """Delivery (year, month) for an expiry label.

    Accepts ``YYYYMM``, ``YYYY-MM``, exchange month codes (``H99``, ``Z1999``,
    optionally prefixed by a root symbol) and month names (``MAR99``).
    """
    c = code.strip()
    m = re.fullmatch(r"(\d{4})-?(\d{2})", c)
    if m:
        return int(m.group(1)), int(m.group(2))
    m = re.fullmatch(r"([A-Za-z]{3})[-\s]?(\d{2}|\d{4})", c)
    if m and m.group(1).lower() in _MONTH_NAMES:
        return _full_year(m.group(2)), _MONTH_NAMES.index(m.group(1).lower()) + 1
    m = re.fullmatch(r"[A-Za-z]*?([FGHJKMNQUVXZ])(\d{2}|\d{4})", c.upper())
    if m:
        return _full_year(m.group(2)), _MONTH_CODES.index(m.group(1)) + 1
    raise DataError(f"unrecognised expiry code {code!r}")


def front_contract_schedule(ticks: Sequence[TickRecord]) -> dict[dt.date, str]:
    """Active expiry per calendar day under the daily volume-crossover rule.

    The first day's highest-volume expiry starts active. On later days the
    active contract moves to a later expiry whose daily traded volume exceeds
    the incumbent's, and never moves back.
    """
    volume: dict[dt.date, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    days: set[dt.date] = set()
    for t in ticks:
        day = t.timestamp.date()
        days.add(day)
        if t.record_type == "trade":
            volume[day][t.expiry_code] += t.volume
    if not volume:
        raise DataError("no trade records to select a front contract from")

    schedule: dict[dt.date, str] = {}
    active: str | None = None
    for day in sorted(days):
        vol = volume.get(day, {})
        if active is None:
            if not vol:
                continue
            # ties go to the nearer delivery
            active = max(vol, key=lambda e: (vol[e], tuple(-x for x in expiry_sort_key(e))))
        else:
            incumbent = vol.get(active, 0)
            rank = expiry_sort_key(active)
            challengers = [e for e, v in vol.items() if expiry_sort_key(e) > rank and v > incumbent]
            if challengers:
                active = max(challengers, key=lambda e: (vol[e], tuple(-x for x in expiry_sort_key(e))))
        schedule[day] = active
    return schedule


def select_front_contract(ticks: Sequence[TickRecord]) -> list[TickRecord]:
    """Keep only ticks of each day's active (most traded) delivery month."""
    schedule = front_contract_schedule(ticks)
    return [t for t in ticks if schedule.get(t.timestamp.date()) == t.expiry_code]


def roll_dates(schedule: dict[dt.date, str]) -> list[dict]:
    out = []
    prev = None
    for day in sorted(schedule):
        cur = schedule[day]
        if prev is not None and cur != prev:
            out.append({"date": day.isoformat(), "from": prev, "to": cur})
        prev = cur
    return out


@dataclass(frozen=True)
class IngestConfig:
    calendar: TradingCalendar
    bar_width: int = 5
    roll_rule: str = "volume-crossover"
    trade_types_used: frozenset[str] = frozenset({"trade"})

    def __post_init__(self) -> None:
        self.calendar.intervals_per_day(self.bar_width)
        if self.roll_rule not in ("volume-crossover", "none"):
            raise ConfigurationError(f"unknown roll rule {self.roll_rule!r}")

    @property
    def intervals_per_day(self) -> int:
        return self.calendar.intervals_per_day(self.bar_width)


def build_bars(ticks: Sequence[TickRecord], config: IngestConfig,
               contract_id: str = "") -> BarSeries:
    """Aggregate trades into session-aligned bars.

    Interval ``k`` covers ``(open + k*w, open + (k+1)*w]`` (the first one also
    includes the opening instant) and is stamped with its right edge. Its
    close is the last trade inside it; intervals without a trade are dropped,
    as are weekends, holidays and anything outside the session.
    """
    cal = config.calendar
    n_slots = config.intervals_per_day
    width = config.bar_width * 60
    open_s = cal.session_open * 60
    close_s = cal.session_close * 60

    trades = sorted(
        (t for t in ticks if t.record_type in config.trade_types_used),
        key=lambda t: t.timestamp,
    )
    last: dict[tuple[dt.date, int], float] = {}
    for t in trades:
        day = t.timestamp.date()
        if not cal.is_trading_day(day):
            continue
        secs = t.timestamp.hour * 3600 + t.timestamp.minute * 60 + t.timestamp.second
        if secs < open_s or secs > close_s:
            continue
        k = max(0, math.ceil((secs - open_s) / width) - 1)
        last[(day, min(k, n_slots - 1))] = t.price

    keys = sorted(last)
    stamps = np.array(
        [np.datetime64(day, "s") + np.timedelta64(open_s + (k + 1) * width, "s") for day, k in keys],
        dtype="datetime64[s]",
    )
    prices = np.array([last[key] for key in keys], dtype=float)
    return BarSeries(stamps, prices, n_slots, contract_id)


@dataclass
class IngestResult:
    bars: BarSeries
    returns: ReturnSeries
    report: dict


def ingest(source: str | Path | IO, config: IngestConfig, fmt: FormatDescriptor | None = None,
           drop_overnight: bool = False, contract_id: str = "") -> IngestResult:
    """Run the full tick-to-returns pipeline.

    The first return after each contract roll spans two delivery months and is
    dropped; the report lists those timestamps under ``dropped_roll_returns``.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            parsed = parse_ticks(fh, fmt)
    else:
        parsed = parse_ticks(source, fmt)

    ticks = parsed.records
    rolls: list[dict] = []
    if config.roll_rule == "volume-crossover":
        schedule = front_contract_schedule(ticks)
        ticks = [t for t in ticks if schedule.get(t.timestamp.date()) == t.expiry_code]
        rolls = roll_dates(schedule)
    bars = build_bars(ticks, config, contract_id)

    day_of_bar = bars.timestamps.astype("datetime64[D]")
    breaks = []
    for roll in rolls:
        hits = np.flatnonzero(day_of_bar == np.datetime64(roll["date"], "D"))
        if hits.size:
            breaks.append(bars.timestamps[hits[0]])
    returns = log_returns(bars, drop_overnight=drop_overnight, breaks=breaks)

    days, counts = np.unique(day_of_bar, return_counts=True)
    by_type: dict[str, int] = defaultdict(int)
    for t in parsed.records:
        by_type[t.record_type] += 1
    report = {
        "n_lines": parsed.n_lines,
        "n_records": len(parsed.records),
        "n_rejects": len(parsed.rejects),
        "rejects": parsed.rejects,
        "records_by_type": dict(sorted(by_type.items())),
        "n_front_ticks": len(ticks),
        "calendar": config.calendar.name,
        "bar_width_minutes": config.bar_width,
        "intervals_per_day": config.intervals_per_day,
        "n_bars": len(bars),
        "n_returns": returns.n,
        "bars_per_day": {str(d): int(c) for d, c in zip(days, counts)},
        "roll_dates": rolls,
        "dropped_roll_returns": [str(b) for b in breaks],
        "drop_overnight": drop_overnight,
    }
    return IngestResult(bars, returns, report)

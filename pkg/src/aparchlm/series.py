"""
Core time-series containers, power transformations and sample moments.

Timestamps are stored as ``numpy.datetime64[s]`` arrays; values as float64
arrays. Containers freeze their arrays on construction so they can be shared
between readers without copying.
"""

from __future__ import annotations

import configparser
import csv
import datetime as dt
from collections.abc import Iterable
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import ConfigurationError, DataError, DegenerateSeriesError

__all__ = [
    "BarSeries",
    "ReturnSeries",
    "PowerTransform",
    "TradingCalendar",
    "log_returns",
    "power_transform",
    "moments",
    "load_calendar",
    "parse_calendar",
    "read_series_csv",
    "write_series_csv",
    "BUNDLED_CALENDARS",
]

BUNDLED_CALENDARS = ("ftse100", "gilt", "sterling")

_WEEKDAYS = {"mon": 0, "tue": 1, "wed": 2, "thu": 3, "fri": 4, "sat": 5, "sun": 6}


def _as_timestamps(values: Iterable) -> np.ndarray:
    ts = np.asarray(values)
    if ts.dtype.kind != "M":
        ts = ts.astype("datetime64[s]")
    return ts.astype("datetime64[s]")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def check_variance(x: np.ndarray) -> float:
    """Return the population variance of `x`, rejecting (numerically) constant input."""
    centred = x - x.mean()
    m2 = float(np.dot(centred, centred) / x.size)
    scale = float(np.max(np.abs(x))) if x.size else 0.0
    if not np.isfinite(m2) or m2 <= (np.finfo(float).eps * scale) ** 2:
        raise DegenerateSeriesError("series has zero variance")
    return m2


@dataclass(frozen=True)
class BarSeries:
    """Interval closing prices for one contract.

    Parameters
    ----------
    timestamps : array-like of datetime64
        Bar end times, strictly increasing.
    close_prices : array-like of float
        Closing prices, all positive.
    intervals_per_day : int
        Number of bar slots in a full trading session.
    contract_id : str
        Free-form label.
    """

    timestamps: np.ndarray
    close_prices: np.ndarray
    intervals_per_day: int
    contract_id: str = ""

    def __post_init__(self) -> None:
        ts = _as_timestamps(self.timestamps)
        px = np.asarray(self.close_prices, dtype=float)
        if ts.shape != px.shape or ts.ndim != 1:
            raise DataError("timestamps and close_prices must be 1-d and equal length")
        if ts.size > 1 and not np.all(ts[1:] > ts[:-1]):
            raise DataError("bar timestamps must be strictly increasing")
        bad = np.flatnonzero(~(px > 0))
        if bad.size:
            raise DataError(f"non-positive close price at {ts[bad[0]]}")
        if self.intervals_per_day < 1:
            raise DataError("intervals_per_day must be positive")
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "close_prices", _frozen(px))

    def __len__(self) -> int:
        return self.close_prices.size

    def to_csv(self, path: str | Path) -> None:
        write_series_csv(path, self.timestamps, self.close_prices)


@dataclass(frozen=True)
class ReturnSeries:
    """Log returns with aligned timestamps."""

    values: np.ndarray
    timestamps: np.ndarray
    intervals_per_day: int = 1

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        ts = _as_timestamps(self.timestamps)
        if v.ndim != 1 or v.shape != ts.shape:
            raise DataError("values and timestamps must be 1-d and equal length")
        if self.intervals_per_day < 1:
            raise DataError("intervals_per_day must be positive")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "timestamps", _frozen(ts))

    @property
    def n(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def from_values(cls, values, intervals_per_day: int = 1, start: str = "2000-01-03T08:00:00",
                    step_seconds: int = 300) -> ReturnSeries:
        """Wrap a bare array on a synthetic regular time grid."""
        v = np.asarray(values, dtype=float)
        ts = np.datetime64(start, "s") + np.arange(v.size) * np.timedelta64(step_seconds, "s")
        return cls(v, ts, intervals_per_day)

    def with_values(self, values) -> ReturnSeries:
        return ReturnSeries(values, self.timestamps, self.intervals_per_day)

    def to_csv(self, path: str | Path) -> None:
        write_series_csv(path, self.timestamps, self.values)

    @classmethod
    def read_csv(cls, path: str | Path, intervals_per_day: int = 1) -> ReturnSeries:
        ts, v = read_series_csv(path)
        return cls(v, ts, intervals_per_day)


@dataclass(frozen=True)
class PowerTransform:
    """Volatility proxy ``|r|**k`` (absolute) or ``(r**2)**k`` (squared)."""

    k: float
    mode: Literal["absolute", "squared"] = "absolute"

    def __post_init__(self) -> None:
        if not self.k > 0:
            raise DataError(f"power k must be positive, got {self.k}")
        if self.mode not in ("absolute", "squared"):
            raise DataError(f"unknown transform mode {self.mode!r}")

    @property
    def exponent(self) -> float:
        """Exponent applied to ``|r|``."""
        return self.k if self.mode == "absolute" else 2.0 * self.k


@dataclass(frozen=True)
class TradingCalendar:
    """Single-session exchange calendar.

    Session bounds are minutes after midnight. ``weekend_days`` uses
    ``date.weekday()`` numbering (Monday is 0).
    """

    session_open: int
    session_close: int
    holiday_dates: frozenset[dt.date] = field(default_factory=frozenset)
    weekend_days: frozenset[int] = frozenset({5, 6})
    name: str = ""

    def __post_init__(self) -> None:
        if not 0 <= self.session_open < self.session_close <= 24 * 60:
            raise ConfigurationError(
                f"session_open must precede session_close ({self.session_open}, {self.session_close})"
            )
        object.__setattr__(self, "holiday_dates", frozenset(self.holiday_dates))
        object.__setattr__(self, "weekend_days", frozenset(self.weekend_days))

    @property
    def session_minutes(self) -> int:
        return self.session_close - self.session_open

    def intervals_per_day(self, bar_width: int) -> int:
        if bar_width <= 0 or self.session_minutes % bar_width:
            raise ConfigurationError(
                f"bar width {bar_width} min does not divide the {self.session_minutes} min session"
            )
        return self.session_minutes // bar_width

    def is_trading_day(self, day: dt.date) -> bool:
        return day.weekday() not in self.weekend_days and day not in self.holiday_dates

    def trading_days(self, start: dt.date, end: dt.date) -> list[dt.date]:
        """Trading days in the closed range ``[start, end]``."""
        out = []
        day = start
        while day <= end:
            if self.is_trading_day(day):
                out.append(day)
            day += dt.timedelta(days=1)
        return out


def _parse_hhmm(text: str) -> int:
    try:
        hh, mm = text.strip().split(":")
        return int(hh) * 60 + int(mm)
    except ValueError as exc:
        raise ConfigurationError(f"bad session time {text!r}, expected HH:MM") from exc


def _split_list(text: str) -> list[str]:
    return [tok for tok in (t.strip() for t in text.replace("\n", ",").split(",")) if tok]


def parse_calendar(text: str, name: str = "") -> TradingCalendar:
    """Build a calendar from ``key = value`` text.

    Recognised keys are ``session_open``, ``session_close`` (``HH:MM``),
    ``holidays`` (comma/newline separated ``YYYY-MM-DD``) and ``weekend_days``
    (three-letter day names or integers).
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string("[calendar]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable calendar: {exc}") from exc
    sec = parser["calendar"]
    for key in ("session_open", "session_close"):
        if key not in sec:
            raise ConfigurationError(f"calendar is missing {key!r}")
    try:
        holidays = frozenset(dt.date.fromisoformat(s) for s in _split_list(sec.get("holidays", "")))
    except ValueError as exc:
        raise ConfigurationError(f"bad holiday date: {exc}") from exc
    weekend = set()
    for tok in _split_list(sec.get("weekend_days", "sat, sun")):
        tok = tok.lower()[:3]
        if tok in _WEEKDAYS:
            weekend.add(_WEEKDAYS[tok])
        elif tok.isdigit() and int(tok) < 7:
            weekend.add(int(tok))
        else:
            raise ConfigurationError(f"bad weekend day {tok!r}")
    return TradingCalendar(
        session_open=_parse_hhmm(sec["session_open"]),
        session_close=_parse_hhmm(sec["session_close"]),
        holiday_dates=holidays,
        weekend_days=frozenset(weekend),
        name=name,
    )


def load_calendar(name_or_path: str | Path) -> TradingCalendar:
    """Load a bundled calendar (``ftse100``, ``gilt``, ``sterling``) or a file."""
    key = str(name_or_path).lower()
    if key in BUNDLED_CALENDARS:
        text = resources.files("aparchlm").joinpath(f"data/{key}.cfg").read_text()
        return parse_calendar(text, name=key)
    path = Path(name_or_path)
    if not path.exists():
        raise ConfigurationError(
            f"unknown calendar {name_or_path!r}; bundled: {', '.join(BUNDLED_CALENDARS)}"
        )
    return parse_calendar(path.read_text(), name=path.stem)


def log_returns(bars: BarSeries, drop_overnight: bool = False,
                breaks: Iterable | None = None) -> ReturnSeries:
    """First differences of log closing prices.

    Parameters
    ----------
    bars : BarSeries
    drop_overnight : bool
        Omit returns whose two bars fall on different calendar days.
    breaks : iterable of datetime64, optional
        Bar timestamps that start a new price segment (e.g. a contract roll);
        the return ending at such a bar is omitted.

    Returns
    -------
    ReturnSeries
        Each return is stamped with the later bar's timestamp.
    """
    if len(bars) < 2:
        raise DataError("need at least two bars to form a return")
    logp = np.log(bars.close_prices)
    values = np.diff(logp)
    ts = bars.timestamps[1:]
    keep = np.ones(values.size, dtype=bool)
    if drop_overnight:
        days = bars.timestamps.astype("datetime64[D]")
        keep &= days[1:] == days[:-1]
    if breaks is not None:
        brk = _as_timestamps(list(breaks))
        if brk.size:
            keep &= ~np.isin(ts, brk)
    return ReturnSeries(values[keep], ts[keep], bars.intervals_per_day)


def power_transform(series: ReturnSeries | np.ndarray, t: PowerTransform):
    """Apply ``|r|**k`` or ``(r**2)**k``.

    The squared mode is evaluated as ``|r|**(2k)`` so that squared-``k`` and
    absolute-``2k`` agree bit for bit.
    """
    if isinstance(series, ReturnSeries):
        return series.with_values(np.abs(series.values) ** t.exponent)
    return np.abs(np.asarray(series, dtype=float)) ** t.exponent


def moments(series: ReturnSeries | np.ndarray) -> dict[str, float]:
    """Mean, population variance, skewness and excess kurtosis."""
    x = np.asarray(series.values if isinstance(series, ReturnSeries) else series, dtype=float)
    if x.size < 4:
        raise DataError("moments need at least 4 observations")
    m2 = check_variance(x)
    c = x - x.mean()
    m3 = float(np.mean(c**3))
    m4 = float(np.mean(c**4))
    return {
        "mean": float(x.mean()),
        "variance": m2,
        "skewness": m3 / m2**1.5,
        "excess_kurtosis": m4 / m2**2 - 3.0,
    }


def write_series_csv(path: str | Path, timestamps: np.ndarray, values: np.ndarray) -> None:
    """Write ``timestamp,value`` rows with ISO-8601 second-resolution stamps."""
    ts = _as_timestamps(timestamps)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "value"])
        for t, v in zip(np.datetime_as_string(ts, unit="s"), np.asarray(values, dtype=float)):
            w.writerow([t, repr(float(v))])


def read_series_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["timestamp", "value"]:
            raise DataError(f"{path}: expected header 'timestamp,value'")
        ts, vals = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts.append(np.datetime64(row[0].strip(), "s"))
                vals.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return np.array(ts, dtype="datetime64[s]"), np.array(vals, dtype=float)

from __future__ import annotations

"""Calendar period keys over integer days since 1970-01-01.

A period is identified by the integer day it starts on. Units:
  day, month, season (3-month blocks, meteorological by default), year,
  whole (one period for the whole range) and ``<N>d`` steps of N days
  anchored at an explicit day.
"""

import datetime as _dt
import re
from typing import Optional, Union

import numpy as np

from .errors import UsageError

DateLike = Union[int, np.integer, str, _dt.date]

UNITS = ("day", "month", "season", "year", "whole")
_STEP_RE = re.compile(r"^(\d+)d$")
_MONTH_LETTERS = "JFMAMJJASOND"
DEFAULT_SEASON_START_MONTH = 12  # DJF / MAM / JJA / SON


def to_day(value: DateLike) -> int:
    """Integer day since the epoch for an int, ISO string or date."""
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, _dt.datetime):
        value = value.date()
    if isinstance(value, _dt.date):
        return (value - _dt.date(1970, 1, 1)).days
    try:
        return int(np.datetime64(str(value)[:10], "D").astype(np.int64))
    except Exception as exc:
        raise UsageError(f"not a date: {value!r}") from exc


def day_to_iso(day: int) -> str:
    return str(np.datetime64(int(day), "D"))


def step_days(unit: str) -> Optional[int]:
    m = _STEP_RE.match(unit)
    if not m:
        return None
    n = int(m.group(1))
    if n < 1:
        raise UsageError(f"step must be at least one day: {unit}")
    return n


def check_unit(unit: str) -> str:
    if unit in UNITS or step_days(unit) is not None:
        return unit
    raise UsageError(f"unknown period unit {unit!r} (expected one of {', '.join(UNITS)} or '<N>d')")


def period_keys(times, unit: str, anchor: Optional[int] = None,
                season_start_month: int = DEFAULT_SEASON_START_MONTH) -> np.ndarray:
    """Start day of the period containing each time."""
    check_unit(unit)
    t = np.asarray(times, dtype=np.int64)
    if t.size == 0:
        return t.copy()
    if unit == "day":
        return t.copy()
    if unit == "whole":
        return np.full_like(t, int(t.min()) if anchor is None else int(anchor))
    step = step_days(unit)
    if step is not None:
        a = int(t.min()) if anchor is None else int(anchor)
        return a + ((t - a) // step) * step
    d = t.astype("datetime64[D]")
    if unit == "year":
        return d.astype("datetime64[Y]").astype("datetime64[D]").astype(np.int64)
    months = d.astype("datetime64[M]").astype(np.int64)
    if unit == "season":
        s0 = (season_start_month - 1) % 12
        months = months - ((months % 12 - s0) % 3)
    return months.astype("datetime64[M]").astype("datetime64[D]").astype(np.int64)


def period_range(start: int, end: int, unit: str, anchor: Optional[int] = None,
                 season_start_month: int = DEFAULT_SEASON_START_MONTH) -> np.ndarray:
    """All period starts of periods overlapping the half-open day range [start, end)."""
    check_unit(unit)
    if end <= start:
        return np.zeros(0, dtype=np.int64)
    if unit == "whole":
        return np.array([start if anchor is None else anchor], dtype=np.int64)
    step = step_days(unit)
    if unit == "day" or step is not None:
        days = np.arange(start, end, dtype=np.int64)
        a = start if anchor is None else anchor
        return np.unique(period_keys(days, unit, anchor=a))
    first = period_keys([start], unit, season_start_month=season_start_month)[0]
    last = period_keys([end - 1], unit, season_start_month=season_start_month)[0]
    months = np.arange(np.datetime64(int(first), "D").astype("datetime64[M]"),
                       np.datetime64(int(last), "D").astype("datetime64[M]") + 1)
    days = months.astype("datetime64[D]").astype(np.int64)
    return np.unique(period_keys(days, unit, season_start_month=season_start_month))


def period_label(start: int, unit: str) -> str:
    iso = day_to_iso(start)
    if unit == "month":
        return iso[:7]
    if unit == "year":
        return iso[:4]
    if unit == "whole":
        return "all"
    if unit == "season":
        m0 = int(iso[5:7]) - 1
        name = "".join(_MONTH_LETTERS[(m0 + k) % 12] for k in range(3))
        return f"{iso[:4]}-{name}"
    return iso


def year_of(day: int) -> int:
    return int(day_to_iso(day)[:4])


def year_start(year: int) -> int:
    return to_day(_dt.date(year, 1, 1))


__all__ = [
    "UNITS",
    "to_day",
    "day_to_iso",
    "step_days",
    "check_unit",
    "period_keys",
    "period_range",
    "period_label",
    "year_of",
    "year_start",
]

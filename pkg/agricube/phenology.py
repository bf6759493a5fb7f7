from __future__ import annotations

"""Phenology metrics from prepared curves and a threshold mowing detector."""

from dataclasses import asdict, dataclass
import logging
from typing import Dict, Iterable, List, Optional

import numpy as np
from scipy.integrate import trapezoid

from .errors import InsufficientDataError
from .periods import year_of, year_start
from .sits import TimeSeries

log = logging.getLogger(__name__)

FLAT_EPS = 1e-6
METRIC_NAMES = (
    "sos_day",
    "pos_day",
    "eos_day",
    "amplitude",
    "integral",
    "integral_above_base",
    "max_derivative",
    "min_derivative",
)
DEFAULT_FEATURE_METRICS = METRIC_NAMES[:7]


@dataclass(frozen=True)
class PhenologyMetrics:
    """Season markers are day offsets from 1 January of the first sample's year.

    ``integral`` is the biomass indicator, ``integral_above_base`` the yield
    indicator. Markers are None for flat curves.
    """

    sos_day: Optional[float]
    pos_day: Optional[float]
    eos_day: Optional[float]
    amplitude: float
    integral: float
    integral_above_base: float
    max_derivative: float
    min_derivative: float
    base: float = 0.0
    peak_value: float = 0.0

    def as_dict(self) -> Dict[str, Optional[float]]:
        return asdict(self)

    def get(self, name: str) -> Optional[float]:
        return getattr(self, name)


def _crossing(t0: float, v0: float, t1: float, v1: float, level: float) -> float:
    if v1 == v0:
        return t1
    return t0 + (level - v0) / (v1 - v0) * (t1 - t0)


def phenology(ts: TimeSeries, amplitude_fraction: float = 0.5) -> PhenologyMetrics:
    ok = ts.valid
    if ok.sum() < 4:
        raise InsufficientDataError(f"phenology needs at least 4 valid points, got {int(ok.sum())}")
    t = ts.times[ok].astype(np.float64)
    v = ts.values[ok].astype(np.float64)
    origin = year_start(year_of(int(t[0])))
    d = t - origin

    base = float(v.min())
    top = float(v.max())
    amplitude = top - base
    slopes = np.diff(v) / np.diff(d)
    integral = float(trapezoid(v, d))
    above = float(trapezoid(np.maximum(v - base, 0.0), d))
    if amplitude < FLAT_EPS:
        return PhenologyMetrics(None, None, None, amplitude, integral, above,
                                float(slopes.max()), float(slopes.min()), base, top)

    ipos = int(np.argmax(v))  # earliest on ties
    level = base + amplitude_fraction * amplitude
    hit = np.flatnonzero(v >= level)
    first, last = int(hit[0]), int(hit[-1])
    sos = float(d[0]) if first == 0 else _crossing(d[first - 1], v[first - 1], d[first], v[first], level)
    eos = float(d[-1]) if last == v.size - 1 else _crossing(d[last], v[last], d[last + 1], v[last + 1], level)
    return PhenologyMetrics(
        sos_day=sos,
        pos_day=float(d[ipos]),
        eos_day=eos,
        amplitude=amplitude,
        integral=integral,
        integral_above_base=above,
        max_derivative=float(slopes.max()),
        min_derivative=float(slopes.min()),
        base=base,
        peak_value=top,
    )


@dataclass(frozen=True)
class MowingEvent:
    parcel_id: int
    event_day: int
    drop_magnitude: float
    pre_event_value: float

    @property
    def year(self) -> int:
        return year_of(self.event_day)


def detect_mowing(ts: TimeSeries, min_pre: float = 0.5, min_drop: float = 0.25, max_window_days: int = 15,
                  refractory_days: int = 30, parcel_id: int = 0) -> List[MowingEvent]:
    """Abrupt drops: a value >= min_pre followed within max_window_days by a fall of >= min_drop.

    The pre-event point is moved to the local maximum before the drop; the
    event day is the start of the steepest falling segment.
    """
    ok = ts.valid
    t = ts.times[ok]
    v = ts.values[ok]
    n = t.size
    events: List[MowingEvent] = []
    blocked_until = None
    i = 0
    while i < n - 1:
        if v[i] < min_pre or (blocked_until is not None and t[i] < blocked_until):
            i += 1
            continue
        j_end = int(np.searchsorted(t, t[i] + max_window_days, side="right"))
        if j_end <= i + 1:
            i += 1
            continue
        j = i + 1 + int(np.argmin(v[i + 1:j_end]))
        if v[i] - v[j] < min_drop:
            i += 1
            continue
        k = i + int(np.argmax(v[i:j]))
        seg = np.diff(v[k:j + 1]) / np.diff(t[k:j + 1])
        start = k + int(np.argmin(seg))
        ev = MowingEvent(int(parcel_id), int(t[start]), float(v[k] - v[j]), float(v[k]))
        events.append(ev)
        log.debug("mowing event parcel=%s day=%d drop=%.3f", parcel_id, ev.event_day, ev.drop_magnitude)
        blocked_until = ev.event_day + refractory_days
        i = j + 1
    return events


def events_per_year(events: Iterable[MowingEvent], years: Iterable[int]) -> Dict[int, int]:
    counts = {int(y): 0 for y in years}
    for ev in events:
        if ev.year in counts:
            counts[ev.year] += 1
    return counts


__all__ = [
    "FLAT_EPS",
    "METRIC_NAMES",
    "DEFAULT_FEATURE_METRICS",
    "PhenologyMetrics",
    "phenology",
    "MowingEvent",
    "detect_mowing",
    "events_per_year",
]

from __future__ import annotations

"""Per-period frames of one variable over a parcel or bbox, with PPM export."""

from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from .config import check_keys, dataclass_keys
from .errors import ConfigError, PreconditionError, UsageError
from .grid import BandId, BBox, CubeArray, GridSpec
from .masking import DEFAULT_CLOUD_BUFFER_M, DEFAULT_INWARD_BUFFER_M, erode_labels
from .parcels import LabelRaster
from .periods import check_unit, day_to_iso, period_keys, period_label, period_range, to_day
from .zonal import StatRequest, masked_cube, zonal_stats_grouped

log = logging.getLogger(__name__)

# brown -> pale yellow -> green over the normalized value; invalid pixels are black
COLORMAP_STOPS = np.array([0.0, 0.5, 1.0])
COLORMAP_RGB = np.array([
    [128, 64, 0],
    [255, 255, 128],
    [0, 128, 0],
], dtype=np.float64)
INVALID_RGB = (0, 0, 0)


@dataclass(frozen=True)
class AnimationSpec:
    """Frames cover [start, end] with both ends inclusive.

    ``step`` is a period unit: month, season, year, day or ``<N>d`` (N-day
    steps anchored at ``start``).
    """

    start: str
    end: str
    band: BandId = BandId.NDVI
    step: str = "month"
    parcel_id: Optional[int] = None
    bbox: Optional[BBox] = None
    statistic: str = "mean"
    buffer_inward_m: float = DEFAULT_INWARD_BUFFER_M
    cloud_buffer_m: float = DEFAULT_CLOUD_BUFFER_M
    max_cloud_cover_fraction: float = 1.0
    value_range: Optional[Tuple[float, float]] = None
    scale: int = 4

    def __post_init__(self):
        object.__setattr__(self, "band", BandId.parse(self.band))
        if isinstance(self.step, int):
            object.__setattr__(self, "step", f"{self.step}d")
        check_unit(self.step)
        if self.step == "whole":
            raise UsageError("animation step must split the range into periods")
        if (self.parcel_id is None) == (self.bbox is None):
            raise UsageError("animation target must be exactly one of parcel_id or bbox")
        if self.bbox is not None:
            object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if to_day(self.end) < to_day(self.start):
            raise UsageError(f"animation range ends before it starts ({self.start} .. {self.end})")
        if self.scale < 1:
            raise UsageError("scale must be >= 1")
        if self.value_range is not None:
            lo, hi = self.value_range
            if not hi > lo:
                raise UsageError("value_range must be increasing")
            object.__setattr__(self, "value_range", (float(lo), float(hi)))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AnimationSpec":
        check_keys("animation spec", data, dataclass_keys(cls) + ["step_days"])
        kw = dict(data)
        if "step_days" in kw:
            kw["step"] = f"{int(kw.pop('step_days'))}d"
        for k in ("bbox", "value_range"):
            if isinstance(kw.get(k), list):
                kw[k] = tuple(kw[k])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"animation spec: {exc}") from None

    @property
    def window(self) -> Tuple[int, int]:
        return to_day(self.start), to_day(self.end) + 1

    def periods(self) -> np.ndarray:
        a, b = self.window
        return period_range(a, b, self.step, anchor=a)

    def request(self) -> StatRequest:
        a, b = self.window
        return StatRequest(statistics=(self.statistic,), period=self.step, bands=(self.band,),
                           buffer_inward_m=self.buffer_inward_m, cloud_buffer_m=self.cloud_buffer_m,
                           max_cloud_cover_fraction=self.max_cloud_cover_fraction, anchor=a, time_range=(a, b))


@dataclass
class Frame:
    period_start: int
    label: str
    values: np.ndarray
    valid: np.ndarray
    aggregate: Optional[float] = None
    n_valid_pixels: int = 0


@dataclass
class FrameSet:
    spec: AnimationSpec
    grid: Optional[GridSpec]
    frames: List[Frame] = field(default_factory=list)
    reason: Optional[str] = None

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def empty(self) -> bool:
        return not self.frames

    def aggregates(self) -> pd.DataFrame:
        return pd.DataFrame({
            "period_start": [day_to_iso(f.period_start) for f in self.frames],
            "label": [f.label for f in self.frames],
            "value": [np.nan if f.aggregate is None else f.aggregate for f in self.frames],
            "n_valid_pixels": [f.n_valid_pixels for f in self.frames],
        })


def _target_window(spec: AnimationSpec, grid: GridSpec, labels: Optional[LabelRaster]):
    if spec.parcel_id is not None:
        if labels is None:
            raise UsageError("parcel animation needs a label raster")
        rows, cols = np.nonzero(labels.labels == int(spec.parcel_id))
        if rows.size == 0:
            raise PreconditionError(f"parcel {spec.parcel_id} has no pixels on the label raster")
        return int(rows.min()), int(rows.max()) + 1, int(cols.min()), int(cols.max()) + 1
    return grid.window(spec.bbox)


def animate(source, spec: AnimationSpec, labels: Optional[LabelRaster] = None, threads: int = 1) -> FrameSet:
    """Composite every period of the range over the target.

    For a parcel target pixels outside the (inward-buffered) parcel are
    invalid, and the aggregate is the parcel's zonal statistic for that
    period. For a bbox target the aggregate pools every valid observation
    inside the box.
    """
    if labels is not None and not labels.grid.aligned(source.grid):
        from .errors import GridMismatchError
        raise GridMismatchError("label raster is not aligned to the cube grid")
    r0, r1, c0, c1 = _target_window(spec, source.grid, labels)
    if r1 <= r0 or c1 <= c0:
        return FrameSet(spec, None, [], "target does not intersect the cube")
    req = spec.request()
    try:
        cube = masked_cube(source, req)
    except PreconditionError:
        return FrameSet(spec, None, [], "no acquisitions in the requested range")
    grid = cube.grid.subgrid((r0, r1, c0, c1))
    v, ok = cube.band(spec.band)
    v = v[:, r0:r1, c0:c1].astype(np.float64)
    ok = ok[:, r0:r1, c0:c1]
    inside = np.ones(grid.shape, dtype=bool)
    table = None
    if spec.parcel_id is not None:
        lab = erode_labels(labels, spec.buffer_inward_m) if spec.buffer_inward_m > 0 else labels
        inside = lab.labels[r0:r1, c0:c1] == int(spec.parcel_id)
        table = zonal_stats_grouped(source, labels, req, threads=threads).lookup()
    ok = ok & inside[None]
    if not ok.any():
        return FrameSet(spec, grid, [], "no valid observations of the target in the requested range")

    keys = period_keys(cube.times, spec.step, anchor=req.anchor)
    frames: List[Frame] = []
    for p in spec.periods():
        tis = np.flatnonzero(keys == p)
        n = ok[tis].sum(axis=0) if tis.size else np.zeros(grid.shape, dtype=np.int64)
        with np.errstate(invalid="ignore", divide="ignore"):
            comp = np.where(ok[tis], v[tis], 0.0).sum(axis=0) / n if tis.size else np.full(grid.shape, np.nan)
        valid = n > 0
        frame = Frame(int(p), period_label(int(p), spec.step), np.where(valid, comp, np.nan), valid)
        if table is not None:
            hit = table.get((int(spec.parcel_id), int(p), spec.band.value, spec.statistic))
            if hit is not None:
                frame.aggregate, frame.n_valid_pixels = hit
        elif tis.size:
            x = v[tis][ok[tis]]
            if x.size:
                frame.aggregate = _pooled(x, spec.statistic)
                frame.n_valid_pixels = int(x.size)
        frames.append(frame)
    log.info("animation of %s: %d frame(s), %d with data", spec.band.value, len(frames),
             sum(f.aggregate is not None for f in frames))
    return FrameSet(spec, grid, frames)


def _pooled(x: np.ndarray, statistic: str) -> float:
    funcs = {"mean": np.mean, "median": np.median, "min": np.min, "max": np.max, "std": np.std}
    if statistic == "count":
        return float(x.size)
    if statistic not in funcs:
        raise UsageError(f"statistic {statistic!r} is not available for bbox animations")
    return float(funcs[statistic](x))


def colorize(values: np.ndarray, valid: np.ndarray, value_range: Tuple[float, float]) -> np.ndarray:
    lo, hi = value_range
    t = np.clip((np.where(valid, values, lo) - lo) / (hi - lo), 0.0, 1.0)
    rgb = np.stack([np.interp(t, COLORMAP_STOPS, COLORMAP_RGB[:, k]) for k in range(3)], axis=-1)
    rgb = np.rint(rgb).astype(np.uint8)
    rgb[~valid] = INVALID_RGB
    return rgb


def write_ppm(path: str | Path, rgb: np.ndarray) -> Path:
    p = Path(path)
    h, w, _ = rgb.shape
    p.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
    return p


def export_frames(frames: FrameSet, out_dir: str | Path) -> List[Path]:
    """frame_<NNN>_<label>.ppm per frame plus aggregate.csv; returns written paths."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    spec = frames.spec
    value_range = spec.value_range or spec.band.valid_range
    written = []
    for i, f in enumerate(frames.frames):
        rgb = colorize(f.values, f.valid, value_range)
        if spec.scale > 1:
            rgb = np.repeat(np.repeat(rgb, spec.scale, axis=0), spec.scale, axis=1)
        written.append(write_ppm(d / f"frame_{i:03d}_{f.label}.ppm", rgb))
    csv = d / "aggregate.csv"
    frames.aggregates().to_csv(csv, index=False, float_format="%.9g", lineterminator="\n")
    written.append(csv)
    if frames.reason:
        (d / "EMPTY").write_text(frames.reason + "\n", encoding="utf-8")
        written.append(d / "EMPTY")
    return written


__all__ = [
    "AnimationSpec",
    "Frame",
    "FrameSet",
    "animate",
    "colorize",
    "write_ppm",
    "export_frames",
]

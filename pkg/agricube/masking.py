from __future__ import annotations

"""Cloud/shadow masks, outward buffering of masks and inward buffering of labels."""

from dataclasses import dataclass
import logging
import math
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from .errors import DataError, GridMismatchError, UsageError
from .grid import BandId, CubeArray, GridSpec, Raster
from .parcels import BACKGROUND, LabelRaster

log = logging.getLogger(__name__)

NODATA, CLEAR, CLOUD, SHADOW, WATER, SNOW = 0, 1, 2, 3, 4, 5
CODE_TABLE: Dict[int, str] = {
    NODATA: "nodata",
    CLEAR: "clear",
    CLOUD: "cloud",
    SHADOW: "shadow",
    WATER: "water",
    SNOW: "snow",
}
DEFAULT_MASKED_CODES = frozenset({CLOUD, SHADOW})
DEFAULT_INWARD_BUFFER_M = 5.0
DEFAULT_CLOUD_BUFFER_M = 50.0
_EPS = 1e-9


@dataclass(frozen=True)
class SceneClassMask:
    grid: GridSpec
    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes)
        if codes.shape != self.grid.shape:
            raise GridMismatchError(f"scene class codes {codes.shape} do not match grid {self.grid.shape}")
        bad = ~np.isin(codes, list(CODE_TABLE))
        if bad.any():
            raise DataError(f"scene class codes outside the code table: {sorted(np.unique(codes[bad]).tolist())[:5]}")
        object.__setattr__(self, "codes", codes.astype(np.int16))

    @classmethod
    def from_raster(cls, raster: Raster) -> "SceneClassMask":
        """Raster nodata becomes code 0."""
        ok = raster.valid_mask()
        return cls(raster.grid, np.where(ok, raster.values, NODATA).astype(np.int16))

    def fraction(self, codes: Iterable[int]) -> float:
        return float(np.isin(self.codes, list(codes)).mean())


@dataclass(frozen=True)
class PixelMask:
    grid: GridSpec
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != self.grid.shape:
            raise GridMismatchError(f"mask {bits.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "bits", bits)

    @property
    def fraction(self) -> float:
        return float(self.bits.mean())

    def to_raster(self) -> Raster:
        return Raster(self.grid, self.bits.astype(np.uint8), nodata=255)

    @classmethod
    def from_raster(cls, raster: Raster) -> "PixelMask":
        return cls(raster.grid, raster.valid_mask() & (raster.values != 0))


def class_mask(scl: SceneClassMask, masked_codes: Iterable[int] = DEFAULT_MASKED_CODES) -> PixelMask:
    codes = set(int(c) for c in masked_codes) | {NODATA}
    return PixelMask(scl.grid, np.isin(scl.codes, sorted(codes)))


def _check_radius(radius_m: float) -> None:
    if radius_m < 0 or math.isnan(radius_m):
        raise UsageError(f"buffer radius must be >= 0, got {radius_m}")


def _radius_px2(radius_m: float, pixel_size: float) -> float:
    return (radius_m / pixel_size) ** 2 + _EPS


def dilate_mask(mask: PixelMask, radius_m: float) -> PixelMask:
    """Outward buffer: true within radius_m of any originally true pixel centre.

    Uses the exact Euclidean distance transform; the squared distance is
    recomputed from the returned nearest-feature indices so the comparison
    is done on integers.
    """
    _check_radius(radius_m)
    bits = mask.bits
    if radius_m == 0 or not bits.any() or bits.all():
        return PixelMask(mask.grid, bits.copy())
    _, (ri, ci) = ndimage.distance_transform_edt(~bits, return_distances=True, return_indices=True)
    rr, cc = np.indices(bits.shape)
    d2 = (ri - rr) ** 2 + (ci - cc) ** 2
    out = d2 <= _radius_px2(radius_m, mask.grid.pixel_size)
    return PixelMask(mask.grid, out | bits)


def disk_footprint(radius_m: float, pixel_size: float) -> np.ndarray:
    """Offsets whose pixel centre lies within radius_m of the origin centre."""
    k = int(math.floor(radius_m / pixel_size + _EPS))
    dy, dx = np.mgrid[-k:k + 1, -k:k + 1]
    return (dy * dy + dx * dx) <= _radius_px2(radius_m, pixel_size)


def edge_footprint(radius_m: float, pixel_size: float) -> np.ndarray:
    """Offsets whose pixel area comes within radius_m of the origin centre.

    At 10 m pixels a 5 m radius reaches the four edge neighbours, a 10 m
    radius the full 3x3 block.
    """
    k = int(math.floor(radius_m / pixel_size + 0.5 + _EPS))
    dy, dx = np.mgrid[-k:k + 1, -k:k + 1]
    ey = np.maximum(np.abs(dy) - 0.5, 0.0)
    ex = np.maximum(np.abs(dx) - 0.5, 0.0)
    return (ey * ey + ex * ex) <= _radius_px2(radius_m, pixel_size)


def erode_labels(labels: LabelRaster, radius_m: float) -> LabelRaster:
    """Inward buffer: a pixel keeps its id only if no pixel carrying another id
    (background included) comes within radius_m of its centre, measured to the
    nearest point of that pixel. Positions outside the grid are ignored."""
    _check_radius(radius_m)
    lab = labels.labels
    fp = edge_footprint(radius_m, labels.grid.pixel_size)
    if fp.shape == (1, 1):
        return LabelRaster(labels.grid, lab.copy(), labels.overlaps)
    # nearest-mode padding only repeats pixels already inside the disk
    lo = ndimage.minimum_filter(lab, footprint=fp, mode="nearest")
    hi = ndimage.maximum_filter(lab, footprint=fp, mode="nearest")
    keep = (lo == lab) & (hi == lab)
    out = np.where(keep, lab, BACKGROUND).astype(np.int32)
    log.debug("erosion r=%.1fm removed %d labelled pixel(s)", radius_m,
              int(np.count_nonzero((lab != BACKGROUND) & ~keep)))
    return LabelRaster(labels.grid, out, labels.overlaps)


def _time_indices(cube: CubeArray, times: Optional[Iterable]) -> np.ndarray:
    if times is None:
        return np.arange(cube.times.size)
    from .periods import to_day

    wanted = {to_day(t) for t in times}
    return np.array([i for i, t in enumerate(cube.times) if int(t) in wanted], dtype=np.int64)


def apply_mask(cube: CubeArray, mask: PixelMask, times: Optional[Iterable] = None,
               bands: Optional[Iterable["BandId | str"]] = None) -> CubeArray:
    """Invalidate cube cells under the mask for the addressed timesteps (all by default)."""
    if not mask.grid.aligned(cube.grid):
        raise GridMismatchError("mask grid does not match cube grid")
    valid = np.array(cube.valid, copy=True)
    ti = _time_indices(cube, times)
    bi = list(range(len(cube.bands))) if bands is None else [cube.band_index(b) for b in bands]
    if ti.size and bi:
        for b in bi:
            valid[ti, b] &= ~mask.bits
    return cube.with_valid(valid)


@dataclass(frozen=True)
class CloudMaskResult:
    cube: CubeArray
    masks: Dict[int, PixelMask]
    cloud_fraction: Dict[int, float]


def cloud_mask_stack(cube: CubeArray, cloud_buffer_m: float = DEFAULT_CLOUD_BUFFER_M,
                     masked_codes: Iterable[int] = DEFAULT_MASKED_CODES) -> CloudMaskResult:
    """Mask every optical band of each timestep with that timestep's buffered SCL mask.

    Timesteps without any SCL observation (radar-only dates) are left untouched.
    The returned cloud fractions are measured before buffering.
    """
    _check_radius(cloud_buffer_m)
    if BandId.SCL not in cube.bands:
        return CloudMaskResult(cube, {}, {})
    scl_vals, scl_ok = cube.band(BandId.SCL)
    optical = [i for i, b in enumerate(cube.bands) if b.sensor == "S2" and not b.categorical]
    valid = np.array(cube.valid, copy=True)
    masks: Dict[int, PixelMask] = {}
    fractions: Dict[int, float] = {}
    codes = sorted(set(int(c) for c in masked_codes) | {NODATA})
    for ti, t in enumerate(cube.times):
        if not scl_ok[ti].any():
            continue
        scene = SceneClassMask(cube.grid, np.where(scl_ok[ti], scl_vals[ti], NODATA).astype(np.int16))
        base = class_mask(scene, codes)
        fractions[int(t)] = base.fraction
        buffered = dilate_mask(base, cloud_buffer_m)
        masks[int(t)] = buffered
        for bi in optical:
            valid[ti, bi] &= ~buffered.bits
    return CloudMaskResult(cube.with_valid(valid), masks, fractions)


def scene_cloud_fraction(scl: SceneClassMask, masked_codes: Iterable[int] = DEFAULT_MASKED_CODES) -> float:
    return class_mask(scl, masked_codes).fraction


__all__ = [
    "CODE_TABLE",
    "NODATA",
    "CLEAR",
    "CLOUD",
    "SHADOW",
    "WATER",
    "SNOW",
    "DEFAULT_MASKED_CODES",
    "DEFAULT_INWARD_BUFFER_M",
    "DEFAULT_CLOUD_BUFFER_M",
    "SceneClassMask",
    "PixelMask",
    "CloudMaskResult",
    "class_mask",
    "dilate_mask",
    "disk_footprint",
    "edge_footprint",
    "erode_labels",
    "apply_mask",
    "cloud_mask_stack",
    "scene_cloud_fraction",
]

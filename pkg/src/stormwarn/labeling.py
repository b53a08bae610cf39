"""Hourly severe-thunderstorm labels from rain-rate rasters and lightning strikes.

An hour is labelled 1 when the rain-rate raster holds a contiguous patch of at
least ``min_pixels`` cells above ``rain_threshold`` mm/h and at least
``min_strikes`` strikes fall within ``radius_km`` of that patch inside some
``window_min``-minute span of the hour. Hours with a qualifying patch but no
such lightning burst are flagged ``rain_only``.
"""

from __future__ import annotations

import bisect
import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

EARTH_RADIUS_KM = 6371.0

_STRUCTURES = {
    "four": ndimage.generate_binary_structure(2, 1),
    "eight": ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True, eq=False)
class RainGrid:
    """Hourly rain-rate raster; NaN marks missing cells.

    Cell ``(row, col)`` is centred at ``(lat0 + row * dlat, lon0 + col * dlon)``.
    The grid covers the hour starting at ``timestamp``.
    """

    values: np.ndarray
    lat0: float
    lon0: float
    dlat: float
    dlon: float
    timestamp: dt.datetime

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"rain grid must be 2-D, got shape {values.shape}")
        if self.dlat <= 0 or self.dlon <= 0:
            raise ValueError("dlat and dlon must be positive")
        if (values[~np.isnan(values)] < 0).any():
            raise ValueError("rain rates must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def coords(self, pixels: Sequence[tuple[int, int]]) -> np.ndarray:
        """(lat, lon) in degrees for each (row, col)."""
        rc = np.asarray(pixels, dtype=float).reshape(-1, 2)
        return np.column_stack([self.lat0 + rc[:, 0] * self.dlat, self.lon0 + rc[:, 1] * self.dlon])


@dataclass(frozen=True)
class LightningRecord:
    time: dt.datetime
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"invalid strike coordinates ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class LabelParams:
    rain_threshold: float = 50.0
    min_pixels: int = 3
    connectivity: str = "four"
    radius_km: float = 5.0
    window_min: float = 10.0
    min_strikes: int = 10
    hour: dt.timedelta = dt.timedelta(hours=1)

    def __post_init__(self):
        if self.rain_threshold <= 0:
            raise ValueError("rain threshold must be positive")
        if self.min_pixels < 1 or self.min_strikes < 1:
            raise ValueError("min_pixels and min_strikes must be >= 1")
        if self.connectivity not in _STRUCTURES:
            raise ValueError("connectivity must be 'four' or 'eight'")


@dataclass(frozen=True)
class EventLabel:
    timestamp: dt.datetime
    label: int
    rain_only: bool
    component_pixels: tuple[tuple[int, int], ...] = ()
    missing_cells: int = 0

    def __post_init__(self):
        if self.label == 1 and (self.rain_only or not self.component_pixels):
            raise ValueError("a positive label needs a component and cannot be rain-only")


@dataclass(frozen=True)
class Component:
    pixels: tuple[tuple[int, int], ...] = field(default=())

    def __len__(self) -> int:
        return len(self.pixels)


def over_threshold_components(grid: RainGrid | np.ndarray, thresh_mm_h: float = 50.0, min_size: int = 3,
                              connectivity: str = "four") -> list[Component]:
    """Connected patches of cells strictly above ``thresh_mm_h`` with at least ``min_size`` cells.

    Missing cells count as dry. Components come back in raster order of their
    first cell, each with its pixels sorted.
    """
    values = grid.values if isinstance(grid, RainGrid) else np.asarray(grid, dtype=float)
    if values.size == 0:
        raise ValueError("empty rain grid")
    if thresh_mm_h <= 0 or min_size < 1:
        raise ValueError("threshold must be positive and min_size >= 1")
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 'four' or 'eight'")
    wet = np.nan_to_num(values, nan=0.0) > thresh_mm_h
    labels, n = ndimage.label(wet, structure=_STRUCTURES[connectivity])
    out = []
    for lab in range(1, n + 1):
        rows, cols = np.nonzero(labels == lab)
        if rows.size >= min_size:
            out.append(Component(tuple(zip(rows.tolist(), cols.tolist()))))
    return out


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between two (lat, lon) points in degrees."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_matrix_km(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Pairwise distances, shape (len(lat1), len(lat2))."""
    p1 = np.radians(np.column_stack([np.atleast_1d(lat1), np.atleast_1d(lon1)]))
    p2 = np.radians(np.column_stack([np.atleast_1d(lat2), np.atleast_1d(lon2)]))
    dlat = p2[None, :, 0] - p1[:, None, 0]
    dlon = p2[None, :, 1] - p1[:, None, 1]
    h = np.sin(dlat / 2) ** 2 + np.cos(p1[:, None, 0]) * np.cos(p2[None, :, 0]) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def _check_sorted(strikes: Sequence[LightningRecord]) -> None:
    for prev, cur in zip(strikes, strikes[1:]):
        if cur.time < prev.time:
            raise ValueError(f"strikes are not time-sorted ({cur.time} follows {prev.time})")


def lightning_rule(pixel_coords: np.ndarray, strikes: Sequence[LightningRecord], radius_km: float = 5.0,
                   window_min: float = 10.0, min_count: int = 10,
                   start: dt.datetime | None = None, end: dt.datetime | None = None) -> bool:
    """True iff ``min_count`` nearby strikes fit inside one ``window_min`` span.

    A strike is nearby when it lies within ``radius_km`` of any of the
    ``pixel_coords`` (lat, lon rows). Only strikes in ``[start, end)`` count
    when those bounds are given. The window is sliding and inclusive: the
    first and last strike may be exactly ``window_min`` apart.
    """
    _check_sorted(strikes)
    coords = np.asarray(pixel_coords, dtype=float).reshape(-1, 2)
    if coords.size == 0 or len(strikes) < min_count:
        return False
    pool = [s for s in strikes if (start is None or s.time >= start) and (end is None or s.time < end)]
    if len(pool) < min_count:
        return False
    lat = np.array([s.lat for s in pool])
    lon = np.array([s.lon for s in pool])
    near = (haversine_matrix_km(lat, lon, coords[:, 0], coords[:, 1]) <= radius_km).any(axis=1)
    times = [s.time for s, ok in zip(pool, near) if ok]
    if len(times) < min_count:
        return False
    span = dt.timedelta(minutes=window_min)
    return any(times[i + min_count - 1] - times[i] <= span for i in range(len(times) - min_count + 1))


def label_event(grid: RainGrid, strikes: Sequence[LightningRecord], params: LabelParams | None = None) -> EventLabel:
    """Severe-event label for the hour covered by ``grid``."""
    params = params or LabelParams()
    _check_sorted(strikes)
    comps = over_threshold_components(grid, params.rain_threshold, params.min_pixels, params.connectivity)
    missing = int(np.isnan(grid.values).sum())
    if not comps:
        return EventLabel(grid.timestamp, 0, False, (), missing)
    start, end = grid.timestamp, grid.timestamp + params.hour
    for comp in comps:
        if lightning_rule(grid.coords(comp.pixels), strikes, params.radius_km, params.window_min,
                          params.min_strikes, start, end):
            return EventLabel(grid.timestamp, 1, False, comp.pixels, missing)
    pixels = tuple(sorted(p for c in comps for p in c.pixels))
    return EventLabel(grid.timestamp, 0, True, pixels, missing)


def label_hours(grids: Iterable[RainGrid], strikes: Sequence[LightningRecord],
                params: LabelParams | None = None) -> list[EventLabel]:
    """Label a sequence of hourly grids against one time-sorted strike list."""
    params = params or LabelParams()
    _check_sorted(strikes)
    times = [s.time for s in strikes]
    out = []
    for grid in sorted(grids, key=lambda g: g.timestamp):
        lo = bisect.bisect_left(times, grid.timestamp)
        hi = bisect.bisect_left(times, grid.timestamp + params.hour)
        out.append(label_event(grid, strikes[lo:hi], params))
    return out

"""Web-Mercator (slippy map) tile arithmetic and tile grids.

All math follows the standard spherical-Mercator tiling of the world into
2^zoom x 2^zoom cells. Row 0 is at the northern projection limit; y grows
southward. The production zoom level is 24 (cells of roughly 2.4 m at the
equator) but every function takes the zoom explicitly so small grids can be
exercised at coarse zooms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Final, Optional

MERCATOR_MAX_LAT: Final[float] = 85.05112878
DEFAULT_ZOOM: Final[int] = 24

# Tolerance, in fractional-tile units, for snapping a bbox edge that falls on
# a tile boundary. An edge shared by two tiles belongs to the earlier tile.
# Recomputing a tile's own latitude edge is accurate to ~1e-7 tiles at zoom
# 24, so the snap band must sit comfortably above that.
_EDGE_SNAP: Final[float] = 1e-6


@dataclass(frozen=True)
class TileId:
    """One cell of the slippy-map grid at a fixed zoom."""

    x: int
    y: int
    zoom: int = DEFAULT_ZOOM

    def __post_init__(self) -> None:
        if not 0 <= self.zoom <= 30:
            raise ValueError(f"zoom {self.zoom} out of range [0, 30]")
        n = 1 << self.zoom
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise ValueError(
                f"tile ({self.x}, {self.y}) out of range for zoom {self.zoom}"
            )


@dataclass(frozen=True)
class GeoBBox:
    """Geographic bounding box in degrees, within the Mercator latitude limit."""

    lon_min: float
    lat_min: float
    lon_max: float
    lat_max: float

    def __post_init__(self) -> None:
        if not (self.lon_min < self.lon_max and self.lat_min < self.lat_max):
            raise ValueError(
                f"degenerate bbox: ({self.lon_min}, {self.lat_min}, "
                f"{self.lon_max}, {self.lat_max})"
            )
        for lat in (self.lat_min, self.lat_max):
            if abs(lat) > MERCATOR_MAX_LAT:
                raise ValueError(f"latitude {lat} beyond Mercator limit")
        for lon in (self.lon_min, self.lon_max):
            if abs(lon) > 180.0:
                raise ValueError(f"longitude {lon} out of [-180, 180]")

    @property
    def center(self) -> tuple[float, float]:
        return (
            0.5 * (self.lon_min + self.lon_max),
            0.5 * (self.lat_min + self.lat_max),
        )


@dataclass(frozen=True)
class TileGrid:
    """Rectangular block of tiles; origin is the northwest corner."""

    origin: TileId
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid dimensions {self.width}x{self.height} invalid")
        n = 1 << self.origin.zoom
        if self.origin.x + self.width > n or self.origin.y + self.height > n:
            raise ValueError("grid extends past the edge of the world")

    @property
    def zoom(self) -> int:
        return self.origin.zoom

    def tile_at(self, row: int, col: int) -> TileId:
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise ValueError(f"cell ({row}, {col}) outside {self.height}x{self.width} grid")
        return TileId(self.origin.x + col, self.origin.y + row, self.origin.zoom)


def _mercator_norm(lat: float) -> float:
    """Map latitude to [0, 1], 0 at the northern limit."""
    phi = math.radians(lat)
    return (1.0 - math.log(math.tan(phi) + 1.0 / math.cos(phi)) / math.pi) / 2.0


def lonlat_to_tile(lon: float, lat: float, zoom: int = DEFAULT_ZOOM) -> TileId:
    """Tile containing a lon/lat point.

    Inputs at the edge of the world (lon = 180, lat = +-85.05112878) clamp to
    the last row/column rather than wrapping.
    """
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"longitude {lon} out of [-180, 180]")
    if not abs(lat) <= MERCATOR_MAX_LAT:
        raise ValueError(f"latitude {lat} beyond Mercator limit {MERCATOR_MAX_LAT}")
    if not (math.isfinite(lon) and math.isfinite(lat)):
        raise ValueError("non-finite coordinate")
    n = 1 << zoom
    x = int(math.floor((lon + 180.0) / 360.0 * n))
    y = int(math.floor(_mercator_norm(lat) * n))
    x = min(max(x, 0), n - 1)
    y = min(max(y, 0), n - 1)
    return TileId(x, y, zoom)


def tile_to_bbox(tile: TileId) -> GeoBBox:
    """Geographic bounds of a tile (west/south edges shared with neighbors)."""
    n = 1 << tile.zoom
    lon_min = tile.x / n * 360.0 - 180.0
    lon_max = (tile.x + 1) / n * 360.0 - 180.0

    def edge_lat(yy: float) -> float:
        return math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * yy / n))))

    lat_max = edge_lat(tile.y)
    lat_min = edge_lat(tile.y + 1)
    return GeoBBox(lon_min, lat_min, lon_max, lat_max)


def tile_center(tile: TileId) -> tuple[float, float]:
    return tile_to_bbox(tile).center


def _snap(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) < _EDGE_SNAP else v


def make_grid(bbox: GeoBBox, zoom: int = DEFAULT_ZOOM) -> TileGrid:
    """Minimal grid of tiles covering a bbox.

    A bbox edge lying exactly on a tile boundary does not pull in the next
    tile: the bbox of a single tile yields a 1x1 grid.
    """
    n = 1 << zoom
    x_lo_f = _snap((bbox.lon_min + 180.0) / 360.0 * n)
    x_hi_f = _snap((bbox.lon_max + 180.0) / 360.0 * n)
    y_lo_f = _snap(_mercator_norm(bbox.lat_max) * n)
    y_hi_f = _snap(_mercator_norm(bbox.lat_min) * n)

    x_lo = min(max(int(math.floor(x_lo_f)), 0), n - 1)
    y_lo = min(max(int(math.floor(y_lo_f)), 0), n - 1)
    x_hi = min(max(int(math.ceil(x_hi_f)) - 1, x_lo), n - 1)
    y_hi = min(max(int(math.ceil(y_hi_f)) - 1, y_lo), n - 1)

    origin = TileId(x_lo, y_lo, zoom)
    return TileGrid(origin, x_hi - x_lo + 1, y_hi - y_lo + 1)


def grid_index(grid: TileGrid, tile: TileId) -> Optional[tuple[int, int]]:
    """(row, col) of a tile within the grid, or None when outside."""
    if tile.zoom != grid.zoom:
        raise ValueError(f"tile zoom {tile.zoom} does not match grid zoom {grid.zoom}")
    row = tile.y - grid.origin.y
    col = tile.x - grid.origin.x
    if 0 <= row < grid.height and 0 <= col < grid.width:
        return (row, col)
    return None

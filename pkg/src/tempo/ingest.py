"""GPS trajectory ingestion: parsing, windowed aggregation, grid densify.

Input files carry one record per line, either CSV with the fixed column
order ``timestamp,lon,lat,modality,trajectory_id`` or JSONL with the same
field names. Files ending in ``.gz`` are transparently decompressed.
Malformed lines are collected into a report instead of aborting, unless
they make up more than half of the file.
"""

from __future__ import annotations

import gzip
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Union

import numpy as np

from .errors import DataError
from .tiles import DEFAULT_ZOOM, MERCATOR_MAX_LAT, TileGrid, TileId, grid_index, lonlat_to_tile

MODALITIES = ("driving", "walking", "biking", "unknown")

Source = Union[str, Path, IO[bytes], IO[str]]


@dataclass(frozen=True, slots=True)
class GpsRecord:
    """One timestamped GPS fix."""

    timestamp: int
    lon: float
    lat: float
    modality: str
    trajectory_id: str


@dataclass(frozen=True)
class TimeWindow:
    """N consecutive buckets of dt seconds starting at t0.

    t0 is treated as midnight on a Monday for the purpose of weekly phase;
    no timezone machinery is applied anywhere in the pipeline.
    """

    t0: int
    dt: int
    n: int

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError(f"bucket length dt={self.dt} must be positive")
        if self.n < 2:
            raise ValueError(f"bucket count n={self.n} must be at least 2")

    @property
    def t_end(self) -> int:
        return self.t0 + self.n * self.dt

    def bucket_of(self, timestamp: int) -> Optional[int]:
        """Bucket index for a timestamp, or None when outside the window.

        Buckets are half-open: [t0 + k*dt, t0 + (k+1)*dt).
        """
        if timestamp < self.t0 or timestamp >= self.t_end:
            return None
        return (timestamp - self.t0) // self.dt


@dataclass
class ActivitySeries:
    """Per-tile record counts over the buckets of a window."""

    tile: TileId
    counts: np.ndarray
    window: TimeWindow

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.window.n,):
            raise ValueError(
                f"counts length {self.counts.shape} != window n {self.window.n}"
            )
        if (self.counts < 0).any():
            raise ValueError("negative counts")


@dataclass
class ParseReport:
    """Summary of a parse run; bad lines are (line_number, reason) pairs."""

    total_lines: int = 0
    n_ok: int = 0
    bad_lines: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_bad(self) -> int:
        return len(self.bad_lines)

    def merge(self, other: "ParseReport") -> "ParseReport":
        merged = ParseReport(
            total_lines=self.total_lines + other.total_lines,
            n_ok=self.n_ok + other.n_ok,
            bad_lines=sorted(self.bad_lines + other.bad_lines),
        )
        return merged


def _open_source(source: Source, fmt: Optional[str]) -> tuple[IO[str], str, bool]:
    """Resolve a path/stream into a text stream plus format; bool = we opened it."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        name = path.name.lower()
        gz = name.endswith(".gz")
        stem = name[:-3] if gz else name
        if fmt is None:
            if stem.endswith(".jsonl"):
                fmt = "jsonl"
            elif stem.endswith(".csv"):
                fmt = "csv"
            else:
                raise DataError(f"cannot infer format from file name: {path}")
        try:
            raw = gzip.open(path, "rt", encoding="utf-8") if gz else open(
                path, "r", encoding="utf-8"
            )
        except OSError as exc:
            raise DataError(f"cannot open trajectory file {path}: {exc}") from exc
        return raw, fmt, True
    if fmt not in ("csv", "jsonl"):
        raise DataError("format must be 'csv' or 'jsonl' when reading a stream")
    if isinstance(source, io.TextIOBase):
        return source, fmt, False
    return io.TextIOWrapper(source, encoding="utf-8"), fmt, False


def _record_from_fields(
    ts_s: str, lon_s: str, lat_s: str, modality: str, traj: str
) -> GpsRecord:
    ts = int(ts_s)
    if ts < 0:
        raise ValueError("negative timestamp")
    lon = float(lon_s)
    lat = float(lat_s)
    if not (math.isfinite(lon) and math.isfinite(lat)):
        raise ValueError("non-finite coordinate")
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"longitude {lon} out of range")
    if abs(lat) > MERCATOR_MAX_LAT:
        raise ValueError(f"latitude {lat} beyond projection limit")
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    if not traj:
        raise ValueError("empty trajectory_id")
    return GpsRecord(ts, lon, lat, modality, traj)


def _parse_line(line: str, fmt: str) -> GpsRecord:
    if fmt == "csv":
        parts = line.split(",")
        if len(parts) != 5:
            raise ValueError(f"expected 5 fields, got {len(parts)}")
        return _record_from_fields(*[p.strip() for p in parts])
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("JSONL line is not an object")
    try:
        return _record_from_fields(
            str(obj["timestamp"]),
            str(obj["lon"]),
            str(obj["lat"]),
            str(obj["modality"]),
            str(obj["trajectory_id"]),
        )
    except KeyError as exc:
        raise ValueError(f"missing field {exc}") from exc


def stream_records(
    source: Source, fmt: Optional[str] = None, report: Optional[ParseReport] = None
) -> Iterator[GpsRecord]:
    """Yield well-formed records in input order, recording failures.

    Raises DataError at end of stream if more than half of the non-empty
    lines were malformed.
    """
    if report is None:
        report = ParseReport()
    stream, fmt, owned = _open_source(source, fmt)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.strip()
            if not line:
                continue
            report.total_lines += 1
            try:
                rec = _parse_line(line, fmt)
            except (ValueError, json.JSONDecodeError) as exc:
                report.bad_lines.append((lineno, str(exc)))
                continue
            report.n_ok += 1
            yield rec
    finally:
        if owned:
            stream.close()
    if report.total_lines and report.n_bad * 2 > report.total_lines:
        raise DataError(
            f"{report.n_bad} of {report.total_lines} lines malformed; "
            f"first failures: {report.bad_lines[:3]}"
        )


def parse_records(
    source: Source, fmt: Optional[str] = None
) -> tuple[list[GpsRecord], ParseReport]:
    """Eagerly parse a whole file; use stream_records for large inputs."""
    report = ParseReport()
    records = list(stream_records(source, fmt, report))
    return records, report


def aggregate(
    records: Iterable[GpsRecord],
    window: TimeWindow,
    modality: Optional[str] = None,
    zoom: int = DEFAULT_ZOOM,
    dedup_trajectories: bool = False,
) -> dict[TileId, ActivitySeries]:
    """Count records per tile per bucket.

    Records outside the window or not matching the modality filter are
    dropped. With dedup_trajectories=True a trajectory contributes at most
    one count per (tile, bucket); the default counts raw records.
    Only tiles that received at least one record appear in the result.
    """
    if modality is not None and modality not in MODALITIES:
        raise ValueError(f"unknown modality filter {modality!r}")
    counts: dict[TileId, np.ndarray] = {}
    seen: set[tuple[TileId, int, str]] = set()
    for rec in records:
        if modality is not None and rec.modality != modality:
            continue
        bucket = window.bucket_of(rec.timestamp)
        if bucket is None:
            continue
        tile = lonlat_to_tile(rec.lon, rec.lat, zoom)
        if dedup_trajectories:
            key = (tile, bucket, rec.trajectory_id)
            if key in seen:
                continue
            seen.add(key)
        arr = counts.get(tile)
        if arr is None:
            arr = np.zeros(window.n, dtype=np.int64)
            counts[tile] = arr
        arr[bucket] += 1
    return {t: ActivitySeries(t, arr, window) for t, arr in counts.items()}


def merge_aggregates(
    a: dict[TileId, ActivitySeries], b: dict[TileId, ActivitySeries]
) -> dict[TileId, ActivitySeries]:
    """Element-wise sum of two shard aggregations (same window)."""
    out = dict(a)
    for tile, series in b.items():
        if tile in out:
            if out[tile].window != series.window:
                raise ValueError("cannot merge aggregations over different windows")
            out[tile] = ActivitySeries(
                tile, out[tile].counts + series.counts, series.window
            )
        else:
            out[tile] = series
    return out


@dataclass
class DenseActivity:
    """Grid-aligned activity: every cell has a series, zeros where no data."""

    grid: TileGrid
    window: TimeWindow
    counts: np.ndarray  # (height, width, n) int64
    has_data: np.ndarray  # (height, width) bool

    def series_at(self, row: int, col: int) -> ActivitySeries:
        return ActivitySeries(self.grid.tile_at(row, col), self.counts[row, col], self.window)


def densify(
    series_map: dict[TileId, ActivitySeries], grid: TileGrid, window: TimeWindow
) -> DenseActivity:
    """Lay per-tile series out on the grid; absent cells get zero counts.

    A tile outside the grid is fatal: it means the grid and the aggregation
    disagree about the area of interest.
    """
    counts = np.zeros((grid.height, grid.width, window.n), dtype=np.int64)
    has_data = np.zeros((grid.height, grid.width), dtype=bool)
    for tile, series in series_map.items():
        if series.window != window:
            raise ValueError("series window does not match densify window")
        idx = grid_index(grid, tile)
        if idx is None:
            raise DataError(
                f"tile ({tile.x}, {tile.y}, z{tile.zoom}) outside grid "
                f"origin=({grid.origin.x}, {grid.origin.y}) "
                f"{grid.width}x{grid.height}"
            )
        counts[idx] = series.counts
        has_data[idx] = True
    return DenseActivity(grid, window, counts, has_data)

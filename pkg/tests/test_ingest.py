from __future__ import annotations

import gzip
import io
import json
import random

import numpy as np
import pytest

from tempo.errors import DataError
from tempo.ingest import (
    ActivitySeries,
    GpsRecord,
    TimeWindow,
    aggregate,
    densify,
    merge_aggregates,
    parse_records,
)
from tempo.tiles import TileGrid, TileId, lonlat_to_tile, tile_center

WINDOW = TimeWindow(t0=1_700_000_000, dt=3600, n=24)


def _csv(lines: list[str]) -> io.StringIO:
    return io.StringIO("\n".join(lines) + ("\n" if lines else ""))


class TestParse:
    def test_empty_stream(self):
        records, report = parse_records(_csv([]), fmt="csv")
        assert records == []
        assert report.n_bad == 0
        assert report.total_lines == 0

    def test_single_csv_line(self):
        records, report = parse_records(
            _csv(["1700000000,-122.4194,37.7749,driving,trj1"]), fmt="csv"
        )
        assert report.n_ok == 1
        assert records == [GpsRecord(1_700_000_000, -122.4194, 37.7749, "driving", "trj1")]

    def test_three_valid_one_malformed(self):
        records, report = parse_records(
            _csv(
                [
                    "1700000000,-122.0,37.0,driving,a",
                    "1700000600,-122.0,37.0,walking,b",
                    "not,a,record",
                    "1700001200,-122.0,37.0,biking,c",
                ]
            ),
            fmt="csv",
        )
        assert len(records) == 3
        assert report.n_bad == 1
        assert report.bad_lines[0][0] == 3

    def test_majority_malformed_is_fatal(self):
        with pytest.raises(DataError, match="malformed"):
            parse_records(
                _csv(["garbage", "more garbage", "1700000000,-122.0,37.0,driving,a"]),
                fmt="csv",
            )

    def test_jsonl(self):
        line = json.dumps(
            {
                "timestamp": 1_700_000_000,
                "lon": -122.4194,
                "lat": 37.7749,
                "modality": "driving",
                "trajectory_id": "trj1",
            }
        )
        records, report = parse_records(io.StringIO(line + "\n"), fmt="jsonl")
        assert report.n_bad == 0
        assert records[0].lat == 37.7749

    def test_gzip_path(self, tmp_path):
        p = tmp_path / "traj.csv.gz"
        with gzip.open(p, "wt", encoding="utf-8") as fh:
            fh.write("1700000000,-122.0,37.0,driving,a\n")
        records, report = parse_records(p)
        assert len(records) == 1 and report.n_bad == 0

    def test_rejected_values_reported(self):
        bad = [
            "-5,-122.0,37.0,driving,a",  # negative timestamp
            "1700000000,-200.0,37.0,driving,a",  # lon out of range
            "1700000000,-122.0,88.0,driving,a",  # lat beyond limit
            "1700000000,-122.0,37.0,teleport,a",  # bad modality
            "1700000000,-122.0,37.0,driving,",  # empty trajectory id
        ]
        good = ["1700000000,-122.0,37.0,driving,a"] * len(bad)
        records, report = parse_records(_csv(good + bad), fmt="csv")
        assert len(records) == len(good)
        assert report.n_bad == len(bad)

    def test_unreadable_path_fatal(self, tmp_path):
        with pytest.raises(DataError, match="cannot open"):
            parse_records(tmp_path / "missing.csv")

    def test_report_merge_sorted(self):
        from tempo.ingest import ParseReport

        a = ParseReport(total_lines=3, n_ok=2, bad_lines=[(7, "x")])
        b = ParseReport(total_lines=4, n_ok=3, bad_lines=[(2, "y")])
        merged = a.merge(b)
        assert merged.total_lines == 7
        assert merged.n_ok == 5
        assert [ln for ln, _ in merged.bad_lines] == [2, 7]


def _rec(ts: int, lon: float = -122.0, lat: float = 37.0, modality: str = "driving",
         traj: str = "t") -> GpsRecord:
    return GpsRecord(ts, lon, lat, modality, traj)


class TestAggregate:
    def test_empty(self):
        assert aggregate([], WINDOW) == {}

    def test_single_record_first_bucket(self):
        out = aggregate([_rec(WINDOW.t0)], WINDOW)
        assert len(out) == 1
        series = next(iter(out.values()))
        assert series.counts[0] == 1
        assert series.counts[1:].sum() == 0

    def test_window_boundaries_half_open(self):
        out = aggregate(
            [_rec(WINDOW.t0 - 1), _rec(WINDOW.t0), _rec(WINDOW.t_end - 1), _rec(WINDOW.t_end)],
            WINDOW,
        )
        series = next(iter(out.values()))
        assert series.counts.sum() == 2
        assert series.counts[0] == 1
        assert series.counts[-1] == 1

    def test_modality_filter(self):
        recs = [_rec(WINDOW.t0, modality="driving"), _rec(WINDOW.t0, modality="walking")]
        out = aggregate(recs, WINDOW, modality="driving")
        assert next(iter(out.values())).counts.sum() == 1
        with pytest.raises(ValueError):
            aggregate(recs, WINDOW, modality="flying")

    def test_random_against_recount_oracle(self):
        rng = random.Random(99)
        records = []
        for i in range(1000):
            ts = WINDOW.t0 + rng.randrange(-3600, WINDOW.n * 3600 + 3600)
            lon = rng.uniform(-122.01, -121.99)
            lat = rng.uniform(36.99, 37.01)
            modality = rng.choice(["driving", "walking"])
            records.append(_rec(ts, lon, lat, modality, f"t{i}"))
        out = aggregate(records, WINDOW, modality="driving", zoom=12)

        # Independent O(records x buckets) recount.
        expected: dict = {}
        for rec in records:
            if rec.modality != "driving":
                continue
            for k in range(WINDOW.n):
                lo = WINDOW.t0 + k * WINDOW.dt
                if lo <= rec.timestamp < lo + WINDOW.dt:
                    tile = lonlat_to_tile(rec.lon, rec.lat, 12)
                    expected.setdefault(tile, np.zeros(WINDOW.n, dtype=np.int64))[k] += 1
        assert set(out) == set(expected)
        for tile, series in out.items():
            assert np.array_equal(series.counts, expected[tile])

    def test_conservation(self):
        rng = random.Random(5)
        records = [
            _rec(WINDOW.t0 + rng.randrange(WINDOW.n * WINDOW.dt),
                 lon=rng.uniform(-122.4, -122.2), lat=rng.uniform(37.0, 37.2))
            for _ in range(500)
        ]
        out = aggregate(records, WINDOW)
        assert sum(int(s.counts.sum()) for s in out.values()) == 500

    def test_order_independence(self):
        rng = random.Random(6)
        records = [
            _rec(WINDOW.t0 + rng.randrange(WINDOW.n * WINDOW.dt),
                 lon=rng.uniform(-122.4, -122.2), lat=rng.uniform(37.0, 37.2))
            for _ in range(200)
        ]
        shuffled = records[:]
        rng.shuffle(shuffled)
        a = aggregate(records, WINDOW)
        b = aggregate(shuffled, WINDOW)
        assert set(a) == set(b)
        for tile in a:
            assert np.array_equal(a[tile].counts, b[tile].counts)

    def test_shard_merge_equals_union(self):
        rng = random.Random(7)
        records = [
            _rec(WINDOW.t0 + rng.randrange(WINDOW.n * WINDOW.dt),
                 lon=rng.uniform(-122.4, -122.2), lat=rng.uniform(37.0, 37.2))
            for _ in range(300)
        ]
        whole = aggregate(records, WINDOW)
        merged = merge_aggregates(aggregate(records[:120], WINDOW), aggregate(records[120:], WINDOW))
        assert set(whole) == set(merged)
        for tile in whole:
            assert np.array_equal(whole[tile].counts, merged[tile].counts)

    def test_dedup_trajectories_flag(self):
        recs = [
            _rec(WINDOW.t0, traj="a"),
            _rec(WINDOW.t0 + 10, traj="a"),
            _rec(WINDOW.t0 + 20, traj="b"),
            _rec(WINDOW.t0 + WINDOW.dt, traj="a"),  # next bucket counts again
        ]
        raw = next(iter(aggregate(recs, WINDOW).values()))
        dedup = next(iter(aggregate(recs, WINDOW, dedup_trajectories=True).values()))
        assert raw.counts.sum() == 4
        assert dedup.counts.sum() == 3
        assert dedup.counts[0] == 2


class TestDensify:
    GRID = TileGrid(TileId(655, 1582, 12), width=2, height=2)

    def test_empty_map(self):
        dense = densify({}, self.GRID, WINDOW)
        assert dense.counts.shape == (2, 2, WINDOW.n)
        assert dense.counts.sum() == 0
        assert not dense.has_data.any()

    def test_single_tile_flagged(self):
        tile = TileId(655, 1582, 12)
        series = ActivitySeries(tile, np.ones(WINDOW.n, dtype=np.int64), WINDOW)
        dense = densify({tile: series}, self.GRID, WINDOW)
        assert dense.has_data[0, 0]
        assert dense.has_data.sum() == 1
        assert np.array_equal(dense.counts[0, 0], series.counts)

    def test_flag_count_matches_map_size(self):
        rng = random.Random(8)
        grid = TileGrid(TileId(100, 100, 12), width=6, height=5)
        series_map = {}
        cells = [(r, c) for r in range(5) for c in range(6)]
        for r, c in rng.sample(cells, 12):
            tile = grid.tile_at(r, c)
            counts = np.zeros(WINDOW.n, dtype=np.int64)
            counts[rng.randrange(WINDOW.n)] = 1 + rng.randrange(5)
            series_map[tile] = ActivitySeries(tile, counts, WINDOW)
        dense = densify(series_map, grid, WINDOW)
        assert int(dense.has_data.sum()) == len(series_map)
        assert dense.counts.sum() == sum(s.counts.sum() for s in series_map.values())

    def test_tile_outside_grid_fatal(self):
        tile = TileId(99, 100, 12)
        series = ActivitySeries(tile, np.zeros(WINDOW.n, dtype=np.int64), WINDOW)
        grid = TileGrid(TileId(100, 100, 12), width=2, height=2)
        with pytest.raises(DataError, match=r"\(99, 100"):
            densify({tile: series}, grid, WINDOW)


def test_window_validation():
    with pytest.raises(ValueError):
        TimeWindow(0, 0, 10)
    with pytest.raises(ValueError):
        TimeWindow(0, 3600, 1)
    assert TimeWindow(0, 3600, 4).t_end == 14_400


def test_series_validation():
    tile = TileId(0, 0, 12)
    with pytest.raises(ValueError):
        ActivitySeries(tile, np.zeros(3, dtype=np.int64), WINDOW)
    with pytest.raises(ValueError):
        ActivitySeries(tile, -np.ones(WINDOW.n, dtype=np.int64), WINDOW)


def test_parse_aggregate_round_trip_through_text():
    # A record written with repr-precision coordinates lands in its own tile.
    tile = TileId(2683450, 6484745, 24)
    lon, lat = tile_center(tile)
    line = f"{WINDOW.t0},{lon!r},{lat!r},driving,x"
    records, _ = parse_records(io.StringIO(line), fmt="csv")
    out = aggregate(records, WINDOW)
    assert list(out) == [tile]

"""Synthetic mobility scenes with known ground truth.

Each tile gets a land-use archetype whose weekly intensity profile drives
Poisson record emission. Commercial tiles beat with lunch/evening peaks,
residential tiles are flat but jittery, intersections spike at commute
hours, and so on; the profiles are hand-authored constants shipped as
package data. Because the labels, rates and record placement are all
known, the generator doubles as the oracle for end-to-end verification:
emitting records and re-ingesting them must reproduce the counts exactly.

Randomness is decomposed per tile: every tile owns deterministic RNG
streams derived from (scene seed, tile x, tile y), so generation order
does not matter and any subset of the scene can be regenerated bit-for-bit.
A per-tile lognormal rate scale (rate_sigma) varies activity volume within
each archetype, which keeps density from trivially identifying the class
and gives every class a sparse tail.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .downstream import IGNORE_LABEL, LabelRaster
from .errors import DataError
from .ingest import ActivitySeries, TimeWindow
from .tiles import TileGrid, TileId, tile_to_bbox

PROFILE_LEN = 168

TASKS = ("res_vs_com", "strata", "activity_area")

# Records are placed uniformly in the middle 98% of their tile so that text
# round-trips can never push a point across a tile edge.
_INTERIOR_MARGIN = 0.01


@dataclass(frozen=True)
class Archetype:
    """Land-use class with a weekly intensity shape.

    profile has one multiplier per bucket over a 168-bucket week and is
    normalized to mean 1 at construction: the shape carries the pattern,
    base_rate (records/hour) carries the volume. noise_sigma is the sigma
    of the mean-1 lognormal per-bucket jitter.
    """

    name: str
    base_rate: float
    noise_sigma: float
    profile: np.ndarray

    def __post_init__(self) -> None:
        prof = np.asarray(self.profile, dtype=np.float64)
        if prof.shape != (PROFILE_LEN,):
            raise ValueError(f"profile must have length {PROFILE_LEN}")
        if (prof < 0).any():
            raise ValueError("profile multipliers must be non-negative")
        if self.base_rate < 0 or self.noise_sigma < 0:
            raise ValueError("base_rate and noise_sigma must be non-negative")
        mean = prof.mean()
        if mean > 0:
            prof = prof / mean
        object.__setattr__(self, "profile", prof)


def load_archetypes(path=None) -> dict[str, Archetype]:
    """Archetype set from a JSON data file (package default when path=None)."""
    if path is None:
        text = resources.files("tempo").joinpath("data/archetypes.json").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    raw = json.loads(text)
    out = {}
    for name, spec in raw["archetypes"].items():
        out[name] = Archetype(
            name=name,
            base_rate=float(spec["base_rate"]),
            noise_sigma=float(spec["noise_sigma"]),
            profile=np.asarray(spec["profile"], dtype=np.float64),
        )
    return out


def default_archetypes() -> dict[str, Archetype]:
    return load_archetypes()


@dataclass
class SceneSpec:
    """Complete description of a synthetic scene."""

    grid: TileGrid
    window: TimeWindow
    seed: int
    rate_sigma: float
    arch_names: list[str]  # id -> archetype name
    arch_idx: np.ndarray  # (height, width) uint8 into arch_names

    def __post_init__(self) -> None:
        self.arch_idx = np.asarray(self.arch_idx, dtype=np.uint8)
        if self.arch_idx.shape != (self.grid.height, self.grid.width):
            raise ValueError("assignment shape does not match grid")
        if self.arch_idx.max(initial=0) >= len(self.arch_names):
            raise ValueError("assignment references an unknown archetype id")

    def archetype_at(self, row: int, col: int) -> str:
        return self.arch_names[self.arch_idx[row, col]]


def random_scene(
    grid: TileGrid,
    window: TimeWindow,
    seed: int,
    weights: Optional[Mapping[str, float]] = None,
    rate_sigma: float = 0.8,
    archetypes: Optional[Mapping[str, Archetype]] = None,
) -> SceneSpec:
    """Scene with archetypes drawn i.i.d. per tile from a weighted palette."""
    archetypes = archetypes or default_archetypes()
    if weights is None:
        weights = {
            "commercial": 0.24,
            "residential": 0.24,
            "golf": 0.08,
            "grocery": 0.10,
            "intersection": 0.12,
            "rural": 0.22,
        }
    names = sorted(weights)
    for name in names:
        if name not in archetypes:
            raise ValueError(f"weights reference unknown archetype {name!r}")
    probs = np.array([weights[n] for n in names], dtype=np.float64)
    if (probs < 0).any() or probs.sum() <= 0:
        raise ValueError("weights must be non-negative and not all zero")
    probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(names), size=(grid.height, grid.width), p=probs)
    return SceneSpec(grid, window, seed, rate_sigma, names, idx.astype(np.uint8))


def _tile_rng(seed: int, x: int, y: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(x, y, stream)))


def _draw_rate_scale(rng: np.random.Generator, sigma: float) -> float:
    if sigma == 0.0:
        return 1.0
    return float(np.exp(rng.normal(-0.5 * sigma * sigma, sigma)))


def tile_rate_scale(spec: SceneSpec, x: int, y: int) -> float:
    """Per-tile volume multiplier (mean-1 lognormal over the scene)."""
    return _draw_rate_scale(_tile_rng(spec.seed, x, y, 0), spec.rate_sigma)


def effective_rates(
    spec: SceneSpec, archetypes: Optional[Mapping[str, Archetype]] = None
) -> np.ndarray:
    """(height, width) records/hour after the per-tile scale."""
    archetypes = archetypes or default_archetypes()
    rates = np.zeros((spec.grid.height, spec.grid.width))
    for r in range(spec.grid.height):
        for c in range(spec.grid.width):
            tile = spec.grid.tile_at(r, c)
            base = archetypes[spec.archetype_at(r, c)].base_rate
            rates[r, c] = base * tile_rate_scale(spec, tile.x, tile.y)
    return rates


def generate_counts(
    spec: SceneSpec, archetypes: Optional[Mapping[str, Archetype]] = None
) -> dict[TileId, ActivitySeries]:
    """Poisson counts for every tile of the scene.

    counts[k] ~ Poisson(rate * profile[k mod 168] * jitter[k]) with the
    tile's effective hourly rate scaled by the bucket length. Each tile
    draws from its own seeded stream, so the result is a pure function of
    the spec regardless of iteration order.
    """
    archetypes = archetypes or default_archetypes()
    window = spec.window
    hours_per_bucket = window.dt / 3600.0
    k = np.arange(window.n)
    out: dict[TileId, ActivitySeries] = {}
    for r in range(spec.grid.height):
        for c in range(spec.grid.width):
            tile = spec.grid.tile_at(r, c)
            arch = archetypes[spec.archetype_at(r, c)]
            rng = _tile_rng(spec.seed, tile.x, tile.y, 0)
            scale = _draw_rate_scale(rng, spec.rate_sigma)
            lam = arch.base_rate * scale * hours_per_bucket * arch.profile[k % PROFILE_LEN]
            if arch.noise_sigma > 0:
                sig = arch.noise_sigma
                lam = lam * np.exp(rng.normal(-0.5 * sig * sig, sig, size=window.n))
            counts = rng.poisson(lam) if lam.any() else np.zeros(window.n, dtype=np.int64)
            out[tile] = ActivitySeries(tile, counts.astype(np.int64), window)
    return out


def emit_records(
    counts: Mapping[TileId, ActivitySeries],
    spec: SceneSpec,
    path,
    fmt: str = "csv",
) -> int:
    """Write one record per count to a trajectory file; returns record count.

    Records get uniform positions inside their tile (kept off the edges so
    ingest maps them back exactly), uniform integer timestamps inside their
    bucket, modality "driving", and a synthetic per-record trajectory id.
    """
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {fmt!r}")
    window = spec.window
    total = 0
    tiles = sorted(counts, key=lambda t: (t.y, t.x))
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt", encoding="utf-8") as fh:
        for tile in tiles:
            series = counts[tile]
            if series.counts.sum() == 0:
                continue
            rng = _tile_rng(spec.seed, tile.x, tile.y, 1)
            bbox = tile_to_bbox(tile)
            lon_span = bbox.lon_max - bbox.lon_min
            lat_span = bbox.lat_max - bbox.lat_min
            serial = 0
            lines = []
            for k, count in enumerate(series.counts):
                if count == 0:
                    continue
                n = int(count)
                u = _INTERIOR_MARGIN + (1 - 2 * _INTERIOR_MARGIN) * rng.random(n)
                v = _INTERIOR_MARGIN + (1 - 2 * _INTERIOR_MARGIN) * rng.random(n)
                lons = bbox.lon_min + u * lon_span
                lats = bbox.lat_min + v * lat_span
                lo = window.t0 + k * window.dt
                ts = rng.integers(lo, lo + window.dt, size=n)
                for i in range(n):
                    traj = f"{tile.x}.{tile.y}.{serial}"
                    serial += 1
                    lon, lat = float(lons[i]), float(lats[i])
                    if fmt == "csv":
                        lines.append(f"{ts[i]},{lon!r},{lat!r},driving,{traj}")
                    else:
                        lines.append(
                            json.dumps(
                                {
                                    "timestamp": int(ts[i]),
                                    "lon": lon,
                                    "lat": lat,
                                    "modality": "driving",
                                    "trajectory_id": traj,
                                },
                                separators=(",", ":"),
                            )
                        )
                total += n
            if lines:
                fh.write("\n".join(lines) + "\n")
    return total


def label_raster(
    spec: SceneSpec,
    task: str,
    archetypes: Optional[Mapping[str, Archetype]] = None,
) -> LabelRaster:
    """Ground-truth labels for a classification task.

    res_vs_com labels residential/commercial tiles and ignores the rest;
    strata maps effective-rate quartiles to rural/suburban/urban/downtown;
    activity_area marks golf, grocery and intersection tiles against
    everything else.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    h, w = spec.grid.height, spec.grid.width
    names = np.array(spec.arch_names, dtype=object)[spec.arch_idx]
    if task == "res_vs_com":
        labels = np.full((h, w), IGNORE_LABEL, dtype=np.uint8)
        labels[names == "residential"] = 0
        labels[names == "commercial"] = 1
        table = {0: "residential", 1: "commercial"}
    elif task == "strata":
        rates = effective_rates(spec, archetypes)
        thresholds = np.percentile(rates, [25.0, 50.0, 75.0])
        labels = np.searchsorted(thresholds, rates, side="right").astype(np.uint8)
        table = {0: "rural", 1: "suburban", 2: "urban", 3: "downtown"}
    else:
        labels = np.zeros((h, w), dtype=np.uint8)
        for lid, name in ((1, "golf"), (2, "grocery"), (3, "intersection")):
            labels[names == name] = lid
        table = {0: "other", 1: "golf", 2: "grocery", 3: "intersection"}
    return LabelRaster(spec.grid, labels, table)


def _rle_rows(arr: np.ndarray, names: list[str]) -> list[list[list]]:
    rows = []
    for row in arr:
        runs: list[list] = []
        for val in row:
            name = names[val]
            if runs and runs[-1][0] == name:
                runs[-1][1] += 1
            else:
                runs.append([name, 1])
        rows.append(runs)
    return rows


def save_scene(spec: SceneSpec, path) -> None:
    doc = {
        "version": 1,
        "zoom": spec.grid.zoom,
        "origin_x": spec.grid.origin.x,
        "origin_y": spec.grid.origin.y,
        "width": spec.grid.width,
        "height": spec.grid.height,
        "window": {"t0": spec.window.t0, "dt": spec.window.dt, "n": spec.window.n},
        "seed": spec.seed,
        "rate_sigma": spec.rate_sigma,
        "rows": _rle_rows(spec.arch_idx, spec.arch_names),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_scene(path) -> SceneSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read scene file {path}: {exc}") from exc
    if doc.get("version") != 1:
        raise DataError(f"unsupported scene version in {path}")
    grid = TileGrid(
        TileId(doc["origin_x"], doc["origin_y"], doc["zoom"]),
        doc["width"],
        doc["height"],
    )
    window = TimeWindow(**doc["window"])
    names: list[str] = []
    idx = np.zeros((grid.height, grid.width), dtype=np.uint8)
    for r, runs in enumerate(doc["rows"]):
        c = 0
        for name, run in runs:
            if name not in names:
                names.append(name)
            idx[r, c : c + run] = names.index(name)
            c += run
        if c != grid.width:
            raise DataError(f"scene row {r} encodes {c} tiles, expected {grid.width}")
    return SceneSpec(grid, window, doc["seed"], doc["rate_sigma"], names, idx)

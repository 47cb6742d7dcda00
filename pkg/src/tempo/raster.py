"""Image-like rasters of per-tile embeddings and their serialization.

The TEMB container is a small self-describing binary: magic "TEMB",
version u16, zoom u8, origin x/y u32, width/height u32, channels u16,
dtype u8 (1 = uint8, 2 = float32), then the raw data little-endian,
row-major, channel-interleaved. Embedding rasters carry the embedding
channels plus a trailing validity-mask channel (1 where the tile had
data); label rasters reuse the container with uint8 payloads.

The RGB map projects masked pixels onto the top three principal
directions of the embedding cloud. This is a deterministic stand-in for a
nonlinear 3-D layout: the map's job is to color similar temporal patterns
alike, which a linear projection already does, reproducibly.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Union

import numpy as np
from PIL import Image

from .cae import TemporalEmbedding
from .errors import DataError
from .tiles import TileGrid, TileId, grid_index

TEMB_MAGIC = b"TEMB"
TEMB_VERSION = 1
_DTYPES = {1: np.dtype("<u1"), 2: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype("uint8"): 1, np.dtype("float32"): 2}
_HEADER = struct.Struct("<4sHBIIIIHB")


@dataclass
class EmbeddingRaster:
    """(height, width, channels) float32 grid; last channel is the mask."""

    grid: TileGrid
    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError("raster data must be (height, width, channels)")
        if self.data.shape[:2] != (self.grid.height, self.grid.width):
            raise ValueError(
                f"data shape {self.data.shape[:2]} != grid "
                f"{(self.grid.height, self.grid.width)}"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def mask(self) -> np.ndarray:
        return self.data[:, :, -1]

    @property
    def values(self) -> np.ndarray:
        return self.data[:, :, :-1]


EmbeddingLike = Union[TemporalEmbedding, np.ndarray, list]


def build_raster(
    embeddings: Mapping[TileId, EmbeddingLike], grid: TileGrid, channels: int = 16
) -> EmbeddingRaster:
    """Place per-tile embeddings on the grid; missing cells get zeros, mask 0."""
    data = np.zeros((grid.height, grid.width, channels + 1), dtype=np.float32)
    for tile, emb in embeddings.items():
        vec = emb.values if isinstance(emb, TemporalEmbedding) else emb
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (channels,):
            raise ValueError(f"embedding for ({tile.x}, {tile.y}) has shape {vec.shape}")
        if not np.isfinite(vec).all():
            raise ValueError(f"non-finite embedding for ({tile.x}, {tile.y})")
        idx = grid_index(grid, tile)
        if idx is None:
            raise DataError(
                f"tile ({tile.x}, {tile.y}, z{tile.zoom}) outside raster grid"
            )
        data[idx[0], idx[1], :channels] = vec
        data[idx[0], idx[1], channels] = 1.0
    return EmbeddingRaster(grid, data)


def save_array_raster(grid: TileGrid, data: np.ndarray, path) -> None:
    """Write any (H, W, C) uint8/float32 array in the TEMB container."""
    arr = np.ascontiguousarray(data)
    if arr.ndim != 3:
        raise ValueError("raster data must be 3-D")
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ValueError(f"unsupported raster dtype {arr.dtype}")
    header = _HEADER.pack(
        TEMB_MAGIC,
        TEMB_VERSION,
        grid.zoom,
        grid.origin.x,
        grid.origin.y,
        grid.width,
        grid.height,
        arr.shape[2],
        code,
    )
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    Path(path).write_bytes(header + payload)


def load_array_raster(path) -> tuple[TileGrid, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, zoom, ox, oy, width, height, channels, code = _HEADER.unpack_from(blob)
    if magic != TEMB_MAGIC:
        raise DataError(f"{path}: bad magic at offset 0")
    if version != TEMB_VERSION:
        raise DataError(f"{path}: unsupported version {version} at offset 4")
    if code not in _DTYPES:
        raise DataError(f"{path}: unknown dtype code {code} at offset {_HEADER.size - 1}")
    dtype = _DTYPES[code]
    expected = height * width * channels * dtype.itemsize
    got = len(blob) - _HEADER.size
    if got != expected:
        raise DataError(
            f"{path}: payload is {got} bytes, expected {expected} "
            f"(truncation at offset {_HEADER.size + got})"
        )
    data = np.frombuffer(blob, dtype=dtype, offset=_HEADER.size).reshape(
        height, width, channels
    )
    grid = TileGrid(TileId(ox, oy, zoom), width, height)
    return grid, data.copy()


def save_raster(raster: EmbeddingRaster, path) -> None:
    save_array_raster(raster.grid, raster.data, path)


def load_raster(path) -> EmbeddingRaster:
    grid, data = load_array_raster(path)
    if data.dtype != np.float32:
        raise DataError(f"{path}: expected float32 embedding raster")
    return EmbeddingRaster(grid, data)


@dataclass
class Projection3:
    """Top-3 principal directions plus color-scaling ranges."""

    components: np.ndarray  # (3, channels), orthonormal rows
    mean: np.ndarray  # (channels,)
    lo: np.ndarray  # (3,) projected minima over the fitting data
    hi: np.ndarray  # (3,) projected maxima

    def apply(self, vectors: np.ndarray) -> np.ndarray:
        return (np.asarray(vectors, dtype=np.float64) - self.mean) @ self.components.T


def fit_projection(raster: EmbeddingRaster) -> Projection3:
    """Principal 3-D projection of the masked pixels' embeddings.

    Deterministic: eigen-decomposition of the channel covariance with the
    sign of each component fixed so its largest-magnitude entry is
    positive. If the data has rank < 3 the remaining directions are an
    arbitrary orthonormal completion (with a warning).
    """
    mask = raster.mask >= 0.5
    pixels = raster.values[mask].astype(np.float64)
    if pixels.shape[0] < 4:
        raise ValueError(f"need at least 4 masked pixels to fit, got {pixels.shape[0]}")
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    cov = centered.T @ centered / pixels.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]

    rank_tol = max(eigvals[0], 0.0) * 1e-12 + 1e-30
    if (eigvals[:3] > rank_tol).sum() < 3:
        warnings.warn(
            "embedding cloud has rank < 3; completing projection with "
            "arbitrary orthonormal directions",
            stacklevel=2,
        )
    components = eigvecs[:, :3].T.copy()
    for i in range(3):
        j = np.argmax(np.abs(components[i]))
        if components[i, j] < 0:
            components[i] = -components[i]
    projected = centered @ components.T
    return Projection3(components, mean, projected.min(axis=0), projected.max(axis=0))


def render_rgb(raster: EmbeddingRaster, proj: Projection3, path) -> None:
    """Write a PNG map: masked pixels min-max colored, others black."""
    height, width = raster.grid.height, raster.grid.width
    img = np.zeros((height, width, 3), dtype=np.uint8)
    mask = raster.mask >= 0.5
    if mask.any():
        coords = proj.apply(raster.values[mask])
        span = proj.hi - proj.lo
        scaled = np.empty_like(coords)
        for c in range(3):
            if span[c] > 0:
                scaled[:, c] = (coords[:, c] - proj.lo[c]) / span[c]
            else:
                scaled[:, c] = 0.5
        img[mask] = np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, "RGB").save(path, format="PNG")


def raster_to_csv(raster: EmbeddingRaster, path) -> None:
    """Spreadsheet export of masked cells: tile_x, tile_y, e0..e{C-1}."""
    n_emb = raster.channels - 1
    header = "tile_x,tile_y," + ",".join(f"e{i}" for i in range(n_emb))
    lines = [header]
    for r in range(raster.grid.height):
        for c in range(raster.grid.width):
            if raster.mask[r, c] >= 0.5:
                tile = raster.grid.tile_at(r, c)
                vals = ",".join(repr(float(v)) for v in raster.values[r, c])
                lines.append(f"{tile.x},{tile.y},{vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

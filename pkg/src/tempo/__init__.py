"""Temporal activity embeddings for land-use mapping.

GPS trajectories are aggregated into per-tile activity time series on the
Web-Mercator zoom-24 grid, transformed into rolling-window DFT
spectrograms, compressed to 16-dim embeddings by a contractive
autoencoder, and laid out as image-like rasters for per-pixel land-use
classification. A synthetic scene generator with known archetypes closes
the loop for verification.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, DivergenceError, TempoError
from .ingest import ActivitySeries, GpsRecord, TimeWindow
from .tiles import GeoBBox, TileGrid, TileId

__all__ = [
    "ActivitySeries",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "GeoBBox",
    "GpsRecord",
    "TempoError",
    "TileGrid",
    "TileId",
    "TimeWindow",
    "__version__",
]

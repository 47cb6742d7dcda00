"""Frequency-domain features of activity series.

A tile's activity series is turned into a matrix of rolling-window DFT
magnitudes: rows are window positions (one per hop), columns are the low
frequency bins. With the defaults (window 168, hop 24, 85 bins at hourly
buckets) each row sees one week and rows advance one day at a time, so the
matrix captures the change in daily/weekly frequency content over time.

Two DFT routes exist on purpose: dft_direct is the O(N^2) definition used
as the oracle, fft is an iterative radix-2 transform for power-of-two
lengths. Windowed transforms use the direct route (via a precomputed basis)
unless the window length is a power of two.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .ingest import ActivitySeries

DEFAULT_WINDOW_LEN = 168
DEFAULT_HOP = 24
DEFAULT_BINS = 85  # all non-redundant bins of a length-168 real window

_STD_FLOOR = 1e-8


@dataclass
class Spectrum:
    """Complex DFT bins of one real signal."""

    bins: np.ndarray
    sample_period: float = 1.0


@dataclass
class Spectrogram:
    """Rolling-window DFT magnitudes, rows ordered by window start."""

    values: np.ndarray  # (n_windows, kept_bins) float64, non-negative
    window_len: int
    hop: int

    @property
    def n_windows(self) -> int:
        return self.values.shape[0]

    @property
    def kept_bins(self) -> int:
        return self.values.shape[1]


@dataclass
class NormStats:
    """Per-frequency-column standardization statistics for flattening."""

    mean: np.ndarray  # (kept_bins,)
    std: np.ndarray  # (kept_bins,), floored at 1e-8
    n_windows: int
    window_len: int
    hop: int

    @property
    def kept_bins(self) -> int:
        return self.mean.shape[0]

    @property
    def flat_dim(self) -> int:
        return self.n_windows * self.kept_bins


def _as_signal(x: Union[np.ndarray, list, tuple]) -> np.ndarray:
    signal = np.asarray(x, dtype=np.float64)
    if signal.ndim != 1 or signal.size < 1:
        raise ValueError("signal must be a non-empty 1-D sequence")
    if not np.isfinite(signal).all():
        raise ValueError("signal contains non-finite values")
    return signal


def dft_direct(x, sample_period: float = 1.0) -> Spectrum:
    """O(N^2) discrete Fourier transform straight from the definition.

    bins[k] = sum_t x[t] * exp(-2*pi*i*k*t/N). Serves as the oracle for
    the fast transform.
    """
    signal = _as_signal(x)
    n = signal.size
    k = np.arange(n)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return Spectrum(basis @ signal.astype(np.complex128), sample_period)


def _bit_reverse_indices(n: int) -> np.ndarray:
    levels = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(levels):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_rows(rows: np.ndarray) -> np.ndarray:
    """Radix-2 decimation-in-time FFT along the last axis (power of two)."""
    n = rows.shape[-1]
    out = rows[..., _bit_reverse_indices(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        out = out.reshape(-1, size)
        even = out[:, :half].copy()
        odd = out[:, half:] * twiddle
        out[:, :half] = even + odd
        out[:, half:] = even - odd
        out = out.reshape(rows.shape)
        size *= 2
    return out


def fft(x, sample_period: float = 1.0) -> Spectrum:
    """Radix-2 FFT for power-of-two lengths; matches dft_direct."""
    signal = _as_signal(x)
    n = signal.size
    if n & (n - 1):
        raise ValueError(f"fft requires a power-of-two length, got {n}; pad or use dft_direct")
    return Spectrum(_fft_rows(signal[np.newaxis, :])[0], sample_period)


def _window_starts(n: int, window_len: int, hop: int) -> np.ndarray:
    return np.arange(0, n - window_len + 1, hop)


def _dft_basis(window_len: int, kept_bins: int) -> np.ndarray:
    k = np.arange(kept_bins)
    t = np.arange(window_len)
    return np.exp(-2j * np.pi * np.outer(k, t) / window_len)


def _check_window_params(n: int, window_len: int, hop: int, kept_bins: int) -> None:
    if window_len > n:
        raise ValueError(
            f"window length {window_len} exceeds series length {n}; "
            f"need a series of at least {window_len} buckets"
        )
    if hop < 1:
        raise ValueError(f"hop {hop} must be >= 1")
    max_bins = window_len // 2 + 1
    if not 1 <= kept_bins <= max_bins:
        raise ValueError(f"kept bins {kept_bins} outside [1, {max_bins}]")


def spectrogram_stack(
    counts: np.ndarray,
    window_len: int = DEFAULT_WINDOW_LEN,
    hop: int = DEFAULT_HOP,
    kept_bins: int = DEFAULT_BINS,
    remove_mean: bool = True,
    log_compress: bool = True,
) -> np.ndarray:
    """Rolling-window DFT magnitudes for a batch of series.

    counts has shape (..., n); the result has shape (..., n_windows,
    kept_bins). Each window is mean-removed before the transform (so the
    activity volume does not dominate the pattern) and magnitudes are
    log1p-compressed; both steps can be disabled for baseline runs.
    """
    arr = np.asarray(counts, dtype=np.float64)
    n = arr.shape[-1]
    _check_window_params(n, window_len, hop, kept_bins)
    starts = _window_starts(n, window_len, hop)
    windows = np.lib.stride_tricks.sliding_window_view(arr, window_len, axis=-1)[
        ..., starts, :
    ]
    if remove_mean:
        windows = windows - windows.mean(axis=-1, keepdims=True)
    if window_len & (window_len - 1) == 0:
        spectra = _fft_rows(windows)[..., :kept_bins]
    else:
        basis = _dft_basis(window_len, kept_bins)
        spectra = windows @ basis.T
    mags = np.abs(spectra)
    if log_compress:
        mags = np.log1p(mags)
    return mags


def spectrogram(
    series: Union[ActivitySeries, np.ndarray, list],
    window_len: int = DEFAULT_WINDOW_LEN,
    hop: int = DEFAULT_HOP,
    kept_bins: int = DEFAULT_BINS,
    remove_mean: bool = True,
    log_compress: bool = True,
) -> Spectrogram:
    """Spectrogram of one activity series (or plain 1-D signal)."""
    signal = series.counts if isinstance(series, ActivitySeries) else series
    signal = _as_signal(signal)
    values = spectrogram_stack(
        signal[np.newaxis, :], window_len, hop, kept_bins, remove_mean, log_compress
    )[0]
    return Spectrogram(values, window_len, hop)


def compute_norm_stats(stack: np.ndarray, window_len: int, hop: int) -> NormStats:
    """Per-column mean/std over every window row of a training stack.

    stack has shape (..., n_windows, kept_bins); statistics pool all leading
    axes and all window rows, so a column is one frequency bin.
    """
    arr = np.asarray(stack, dtype=np.float64)
    if arr.ndim < 2:
        raise ValueError("stack must have at least (n_windows, kept_bins) axes")
    flat = arr.reshape(-1, arr.shape[-1])
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), _STD_FLOOR)
    return NormStats(mean, std, n_windows=arr.shape[-2], window_len=window_len, hop=hop)


def flatten(sp: Spectrogram, stats: NormStats) -> np.ndarray:
    """Standardize columns and flatten row-major to one feature vector."""
    if sp.values.shape != (stats.n_windows, stats.kept_bins):
        raise ValueError(
            f"spectrogram shape {sp.values.shape} does not match stats "
            f"({stats.n_windows}, {stats.kept_bins})"
        )
    return ((sp.values - stats.mean) / stats.std).reshape(-1)


def flatten_stack(stack: np.ndarray, stats: NormStats) -> np.ndarray:
    """flatten() applied over leading axes: (..., W, F) -> (..., W*F)."""
    arr = np.asarray(stack, dtype=np.float64)
    if arr.shape[-2:] != (stats.n_windows, stats.kept_bins):
        raise ValueError("stack shape does not match stats")
    out = (arr - stats.mean) / stats.std
    return out.reshape(*arr.shape[:-2], stats.flat_dim)


def unflatten(vec: np.ndarray, stats: NormStats) -> Spectrogram:
    """Inverse of flatten: restore the standardized vector to magnitudes."""
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != (stats.flat_dim,):
        raise ValueError(f"vector length {v.shape} != {stats.flat_dim}")
    values = v.reshape(stats.n_windows, stats.kept_bins) * stats.std + stats.mean
    return Spectrogram(values, stats.window_len, stats.hop)


def spectrogram_to_csv(sp: Spectrogram, path) -> None:
    """Debug dump: one CSV row per window."""
    header = ",".join(f"bin{k}" for k in range(sp.kept_bins))
    np.savetxt(path, sp.values, delimiter=",", header=header, comments="")

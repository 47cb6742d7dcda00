from __future__ import annotations

import numpy as np
import pytest

from tempo.ingest import ActivitySeries, TimeWindow
from tempo.spectral import (
    NormStats,
    Spectrogram,
    compute_norm_stats,
    dft_direct,
    fft,
    flatten,
    flatten_stack,
    spectrogram,
    spectrogram_stack,
    unflatten,
)
from tempo.tiles import TileId


class TestDirectDft:
    def test_constant_signal_is_dc_only(self):
        s = dft_direct(np.ones(8))
        assert s.bins[0] == pytest.approx(8.0)
        assert np.abs(s.bins[1:]).max() <= 1e-12

    def test_single_tone(self):
        t = np.arange(8)
        s = dft_direct(np.cos(2 * np.pi * 2 * t / 8))
        mags = np.abs(s.bins)
        assert mags[2] == pytest.approx(4.0, abs=1e-12)
        assert mags[6] == pytest.approx(4.0, abs=1e-12)
        others = np.delete(mags, [2, 6])
        assert others.max() <= 1e-12

    def test_length_one_identity(self):
        assert dft_direct([5.0]).bins[0] == pytest.approx(5.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            dft_direct([1.0, np.nan])

    def test_conjugate_symmetry(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(12)
        bins = dft_direct(x).bins
        for k in range(1, 12):
            assert bins[k] == pytest.approx(np.conj(bins[12 - k]), abs=1e-10)

    def test_parseval(self):
        rng = np.random.default_rng(1)
        for n in (3, 8, 17, 64, 255):
            x = rng.standard_normal(n)
            bins = dft_direct(x).bins
            time_energy = np.sum(x**2)
            freq_energy = np.sum(np.abs(bins) ** 2) / n
            assert abs(time_energy - freq_energy) <= 1e-9 * time_energy

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x, y = rng.standard_normal(16), rng.standard_normal(16)
        a, b = 2.5, -1.25
        lhs = dft_direct(a * x + b * y).bins
        rhs = a * dft_direct(x).bins + b * dft_direct(y).bins
        assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(rhs).max()


class TestFft:
    def test_matches_direct_on_small_examples(self):
        for x in (np.ones(8), np.cos(2 * np.pi * 2 * np.arange(8) / 8)):
            assert np.abs(fft(x).bins - dft_direct(x).bins).max() <= 1e-12

    def test_impulse_has_flat_spectrum(self):
        x = np.zeros(16)
        x[0] = 1.0
        assert np.abs(fft(x).bins - 1.0).max() <= 1e-12

    def test_random_1024_against_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(1024)
        ref = dft_direct(x).bins
        err = np.abs(fft(x).bins - ref).max()
        assert err <= 1e-9 * np.abs(ref).max()

    def test_agreement_over_100_random_signals(self):
        rng = np.random.default_rng(4)
        sizes = [8, 16, 32, 64, 128, 256, 512, 1024]
        for i in range(100):
            n = sizes[i % len(sizes)]
            x = rng.standard_normal(n) * rng.uniform(0.1, 50)
            ref = dft_direct(x).bins
            err = np.abs(fft(x).bins - ref).max()
            assert err <= 1e-9 * np.abs(ref).max()

    def test_rejects_non_power_of_two(self):
        with pytest.raises(ValueError, match="power-of-two"):
            fft(np.ones(12))


def _series(counts: np.ndarray, dt: int = 3600) -> ActivitySeries:
    return ActivitySeries(
        TileId(0, 0, 12), np.asarray(counts, dtype=np.int64),
        TimeWindow(0, dt, len(counts)),
    )


class TestSpectrogram:
    def test_default_shape(self):
        sp = spectrogram(np.zeros(672))
        assert sp.values.shape == (22, 85)

    def test_all_zero_series(self):
        sp = spectrogram(_series(np.zeros(672)))
        assert (sp.values == 0).all()

    def test_daily_tone_dominates_bin_seven(self):
        # Exact period of 24 buckets inside a 168-bucket window -> bin 7.
        t = np.arange(672)
        x = 10.0 + 8.0 * np.cos(2 * np.pi * t / 24)
        sp = spectrogram(x)
        argmax_per_row = sp.values[:, 1:].argmax(axis=1) + 1
        assert (argmax_per_row == 7).all()

    def test_window_count_formula(self):
        for n, expect in ((672, 22), (168, 1), (192, 2)):
            sp = spectrogram(np.random.default_rng(0).poisson(3.0, n).astype(float))
            assert sp.n_windows == (n - 168) // 24 + 1 == expect if n == 672 else True
            assert sp.values.shape == ((n - 168) // 24 + 1, 85)

    def test_window_longer_than_series_rejected(self):
        with pytest.raises(ValueError, match="at least 168"):
            spectrogram(np.zeros(100))

    def test_bad_bin_count_rejected(self):
        with pytest.raises(ValueError):
            spectrogram(np.zeros(672), kept_bins=86)
        with pytest.raises(ValueError):
            spectrogram(np.zeros(672), kept_bins=0)

    def test_time_shift_moves_rows_by_one(self):
        rng = np.random.default_rng(5)
        x = rng.poisson(4.0, 672).astype(float)
        shifted = x[24:]
        a = spectrogram(x)
        b = spectrogram(shifted)
        assert np.allclose(a.values[1:, :], b.values[: a.n_windows - 1, :])

    def test_matches_direct_dft_per_window(self):
        rng = np.random.default_rng(6)
        x = rng.poisson(2.0, 250).astype(float)
        sp = spectrogram(x, window_len=50, hop=25, kept_bins=26,
                         remove_mean=False, log_compress=False)
        for w in range(sp.n_windows):
            window = x[w * 25 : w * 25 + 50]
            ref = np.abs(dft_direct(window).bins[:26])
            assert np.abs(sp.values[w] - ref).max() <= 1e-9 * max(ref.max(), 1.0)

    def test_power_of_two_window_uses_same_values(self):
        rng = np.random.default_rng(7)
        x = rng.poisson(2.0, 160).astype(float)
        sp = spectrogram(x, window_len=64, hop=32, kept_bins=33)
        for w in range(sp.n_windows):
            window = x[w * 32 : w * 32 + 64]
            window = window - window.mean()
            ref = np.log1p(np.abs(dft_direct(window).bins[:33]))
            assert np.abs(sp.values[w] - ref).max() <= 1e-9

    def test_stack_matches_single(self):
        rng = np.random.default_rng(8)
        counts = rng.poisson(3.0, size=(2, 3, 672))
        stack = spectrogram_stack(counts)
        for r in range(2):
            for c in range(3):
                single = spectrogram(counts[r, c].astype(float))
                assert np.array_equal(stack[r, c], single.values)

    def test_mean_removal_kills_dc(self):
        x = np.full(672, 17.0)
        sp = spectrogram(x)  # remove_mean on by default
        assert sp.values.max() <= 1e-9


class TestFlatten:
    def _stats(self, w=2, f=2):
        return NormStats(np.zeros(f), np.ones(f), n_windows=w, window_len=168, hop=24)

    def test_row_major_order_with_identity_stats(self):
        sp = Spectrogram(np.array([[1.0, 2.0], [3.0, 4.0]]), 168, 24)
        assert np.array_equal(flatten(sp, self._stats()), [1.0, 2.0, 3.0, 4.0])

    def test_spectrogram_equal_to_means_gives_zero(self):
        rng = np.random.default_rng(9)
        mean = rng.uniform(1, 5, size=4)
        stats = NormStats(mean, np.ones(4), n_windows=3, window_len=168, hop=24)
        sp = Spectrogram(np.tile(mean, (3, 1)), 168, 24)
        assert np.abs(flatten(sp, stats)).max() == 0.0

    def test_round_trip(self):
        rng = np.random.default_rng(10)
        stack = rng.uniform(0, 3, size=(5, 4, 6))
        stats = compute_norm_stats(stack, window_len=168, hop=24)
        sp = Spectrogram(stack[2], 168, 24)
        back = unflatten(flatten(sp, stats), stats)
        assert np.allclose(back.values, sp.values, atol=1e-12)
        assert (back.window_len, back.hop) == (168, 24)

    def test_shape_mismatch_rejected(self):
        sp = Spectrogram(np.zeros((3, 4)), 168, 24)
        with pytest.raises(ValueError, match="does not match"):
            flatten(sp, self._stats(w=2, f=4))

    def test_flatten_stack_matches_flatten(self):
        rng = np.random.default_rng(11)
        stack = rng.uniform(0, 3, size=(2, 2, 4, 6))
        stats = compute_norm_stats(stack, window_len=168, hop=24)
        flat = flatten_stack(stack, stats)
        assert flat.shape == (2, 2, 24)
        one = flatten(Spectrogram(stack[1, 0], 168, 24), stats)
        assert np.array_equal(flat[1, 0], one)

    def test_std_floor(self):
        stack = np.zeros((10, 3, 4))
        stats = compute_norm_stats(stack, 168, 24)
        assert (stats.std == 1e-8).all()


def test_spectrogram_csv_round_trip(tmp_path):
    from tempo.spectral import spectrogram_to_csv

    sp = spectrogram(np.random.default_rng(12).poisson(3.0, 672).astype(float))
    path = tmp_path / "sp.csv"
    spectrogram_to_csv(sp, path)
    loaded = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.allclose(loaded, sp.values, atol=1e-12)

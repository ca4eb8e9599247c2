"""Resampling, constant-Q features, standardization, and context windows."""

import numpy as np
import pytest

from pianoscribe import features
from pianoscribe.features import (EmptyCorpusError, FeatureSequence,
                                  ShortInputError, Standardizer,
                                  UnsupportedRateError, apply_standardizer,
                                  bin_frequencies, context_window, cqt,
                                  fit_standardizer, invert_standardizer,
                                  resample_to_16k)


class TestResample:
    def test_16k_returned_unchanged(self, rng):
        x = rng.normal(size=1000)
        np.testing.assert_array_equal(resample_to_16k(x, 16000), x)

    def test_length_arithmetic_44k1(self):
        x = np.zeros(44100)
        out = resample_to_16k(x, 44100)
        assert abs(out.size - 16000) <= 1

    def test_tone_survives_resampling(self):
        t = np.arange(44100) / 44100.0
        x = np.sin(2 * np.pi * 1000.0 * t)
        out = resample_to_16k(x, 44100)
        spectrum = np.abs(np.fft.rfft(out))
        freqs = np.fft.rfftfreq(out.size, 1 / 16000.0)
        peak = freqs[np.argmax(spectrum)]
        assert abs(peak - 1000.0) <= freqs[1]

    def test_low_rate_rejected(self):
        with pytest.raises(UnsupportedRateError):
            resample_to_16k(np.zeros(100), 8000)


class TestCqt:
    def test_silence_gives_zero_frames(self):
        fs = cqt(np.zeros(16000))
        assert fs.frames.shape == (32, 252)
        np.testing.assert_allclose(fs.frames, 0.0, atol=1e-12)

    def test_frame_rate(self, rng):
        fs = cqt(rng.normal(size=8000))
        assert fs.frame_rate == 31.25

    def test_bin_center_tone_peaks_at_bin(self):
        freqs = bin_frequencies()
        for target_bin in (120, 180, 240):
            f = freqs[target_bin]
            t = np.arange(4 * 16000) / 16000.0
            fs = cqt(np.sin(2 * np.pi * f * t))
            interior = fs.frames[40:80]
            assert np.all(interior.argmax(axis=1) == target_bin)

    def test_nonnegative(self, rng):
        fs = cqt(rng.normal(size=20000))
        assert np.all(fs.frames >= 0.0)

    def test_hop_shift_covariance(self, rng):
        x = rng.normal(size=3 * 16000)
        a = cqt(x).frames
        b = cqt(np.concatenate([np.zeros(512), x])).frames
        # delaying by one hop shifts frames by one index
        interior = slice(10, a.shape[0] - 10)
        np.testing.assert_allclose(b[1:][interior], a[interior], atol=1e-6)

    def test_short_input_rejected(self):
        with pytest.raises(ShortInputError):
            cqt(np.zeros(100))

    def test_bin_frequencies_span_seven_octaves(self):
        freqs = bin_frequencies()
        assert freqs[0] == 27.5
        np.testing.assert_allclose(freqs[36] / freqs[0], 2.0)
        np.testing.assert_allclose(freqs[-1], 27.5 * 2 ** (251 / 36))


class TestStandardizer:
    def test_constant_features_floored_std(self):
        fs = FeatureSequence(np.full((5, 3), 7.0), 31.25)
        s = fit_standardizer([fs])
        np.testing.assert_allclose(s.mean, 7.0)
        np.testing.assert_allclose(s.std, features.STD_FLOOR)

    def test_two_frames_hand_arithmetic(self):
        fs = FeatureSequence(np.array([[0.0], [2.0]]), 31.25)
        s = fit_standardizer([fs])
        assert s.mean[0] == pytest.approx(1.0)
        assert s.std[0] == pytest.approx(1.0)

    def test_standardized_corpus_zero_mean_unit_std(self, rng):
        corpus = [FeatureSequence(rng.normal(2.0, 3.0, size=(50, 4)), 31.25)
                  for _ in range(3)]
        s = fit_standardizer(corpus)
        stacked = np.concatenate(
            [apply_standardizer(fs, s).frames for fs in corpus], axis=0)
        assert np.all(np.abs(stacked.mean(axis=0)) < 1e-10)
        assert np.all(np.abs(stacked.std(axis=0) - 1.0) < 1e-10)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpusError):
            fit_standardizer([])

    def test_identity_standardizer(self, rng):
        fs = FeatureSequence(rng.normal(size=(4, 3)), 31.25)
        s = Standardizer(np.zeros(3), np.ones(3))
        np.testing.assert_array_equal(apply_standardizer(fs, s).frames, fs.frames)

    def test_mean_input_maps_to_zero(self, rng):
        mean = rng.normal(size=3)
        s = Standardizer(mean, np.full(3, 2.0))
        fs = FeatureSequence(mean[None, :], 31.25)
        np.testing.assert_allclose(apply_standardizer(fs, s).frames, 0.0)

    def test_round_trip(self, rng):
        fs = FeatureSequence(rng.normal(size=(10, 5)), 31.25)
        s = Standardizer(rng.normal(size=5), np.abs(rng.normal(size=5)) + 0.5)
        back = invert_standardizer(apply_standardizer(fs, s), s)
        np.testing.assert_allclose(back.frames, fs.frames, atol=1e-12)

    def test_dim_mismatch(self, rng):
        fs = FeatureSequence(rng.normal(size=(4, 3)), 31.25)
        with pytest.raises(ValueError):
            apply_standardizer(fs, Standardizer(np.zeros(4), np.ones(4)))


class TestContextWindow:
    def test_window_one_is_identity(self, rng):
        fs = FeatureSequence(rng.normal(size=(6, 3)), 31.25)
        blocks = context_window(fs, 1)
        np.testing.assert_array_equal(blocks[:, 0, :], fs.frames)

    def test_boundary_zero_padding(self, rng):
        fs = FeatureSequence(rng.normal(size=(10, 3)), 31.25)
        blocks = context_window(fs, 7)
        np.testing.assert_array_equal(blocks[0, :3], np.zeros((3, 3)))
        np.testing.assert_array_equal(blocks[-1, -3:], np.zeros((3, 3)))

    def test_interior_rows_match_frames(self, rng):
        fs = FeatureSequence(rng.normal(size=(10, 3)), 31.25)
        blocks = context_window(fs, 5)
        np.testing.assert_array_equal(blocks[4], fs.frames[2:7])

    def test_output_count_equals_input(self, rng):
        for T in (1, 2, 9):
            fs = FeatureSequence(rng.normal(size=(T, 3)), 31.25)
            assert context_window(fs, 7).shape == (T, 7, 3)

    def test_even_window_rejected(self, rng):
        fs = FeatureSequence(rng.normal(size=(4, 3)), 31.25)
        with pytest.raises(ValueError):
            context_window(fs, 4)


class TestWavIo:
    def test_round_trip_float32(self, tmp_path, rng):
        x = rng.normal(size=2000).astype(np.float32)
        path = tmp_path / "a.wav"
        features.write_wav(path, x, 16000)
        samples, rate = features.read_wav(path)
        assert rate == 16000
        np.testing.assert_allclose(samples, x, atol=1e-7)

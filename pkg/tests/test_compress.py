import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from coarse2fine.compress import (
    CompressionMethod,
    apply_compression,
    avg_pool_frames,
    avg_pool_time,
    max_pool_frames,
    max_pool_time,
    spectrogram_frames,
)
from coarse2fine.dsp import FramingParams, MelSpectrogram, Waveform, fshift_mel, log_mel


def mel_row(values, C=1):
    values = np.asarray(values, dtype=float)
    f = FramingParams(n_mels=1, target_time_frames=values.size * C, fft_size=512)
    return MelSpectrogram(values[None, :], f, C)


grids = st.integers(1, 4).flatmap(
    lambda F: st.sampled_from([1, 2, 4]).flatmap(
        lambda C: st.integers(1, 6).flatmap(
            lambda k: st.tuples(
                arrays(np.float64, (F, 4 * k), elements=st.floats(-50, 50, allow_nan=False)),
                st.just(C),
            )
        )
    )
)


class TestPooling:
    def test_avg_examples(self):
        assert avg_pool_time(mel_row([1, 3, 5, 7]), 2).bins.tolist() == [[2, 6]]
        assert avg_pool_time(mel_row([1, 3, 5, 7]), 4).bins.tolist() == [[4]]

    def test_max_examples(self):
        assert max_pool_time(mel_row([1, 3, 5, 7]), 2).bins.tolist() == [[3, 7]]
        assert max_pool_time(mel_row([-2, -5]), 2).bins.tolist() == [[-2]]
        assert max_pool_time(mel_row([4.5] * 8), 4).bins.tolist() == [[4.5, 4.5]]

    def test_identity_at_c1(self):
        X = mel_row([1, 3, 5, 7])
        assert avg_pool_time(X, 1) is X
        assert max_pool_time(X, 1) is X

    def test_compression_factor_multiplies(self):
        X = mel_row(np.arange(8.0))
        Y = avg_pool_time(avg_pool_time(X, 2), 2)
        assert Y.compression_factor == 4
        assert Y.shape == (1, 2)

    def test_rejects_non_divisible(self):
        with pytest.raises(ValueError, match="divisible"):
            avg_pool_frames(np.zeros((2, 6)), 4)
        with pytest.raises(ValueError):
            max_pool_frames(np.zeros((2, 6)), 0)

    @given(grids)
    def test_max_dominates_avg(self, gc):
        X, C = gc
        assert np.all(max_pool_frames(X, C) >= avg_pool_frames(X, C) - 1e-12)

    @given(grids)
    def test_avg_preserves_row_mean(self, gc):
        X, C = gc
        assert np.allclose(avg_pool_frames(X, C).mean(axis=1), X.mean(axis=1), atol=1e-9)

    @given(arrays(np.float64, (3, 16), elements=st.floats(-50, 50, allow_nan=False)))
    def test_stride_composition(self, X):
        assert np.array_equal(max_pool_frames(max_pool_frames(X, 2), 2), max_pool_frames(X, 4))
        assert np.allclose(avg_pool_frames(avg_pool_frames(X, 2), 2), avg_pool_frames(X, 4), atol=1e-12)

    def test_batched_last_axis(self, rng):
        X = rng.normal(size=(5, 3, 8))
        assert np.array_equal(avg_pool_frames(X, 2)[2], avg_pool_frames(X[2], 2))


class TestMethod:
    @pytest.mark.parametrize("text, method", [
        ("none", CompressionMethod.NONE), ("FShift", CompressionMethod.FSHIFT),
        (" pool_avg ", CompressionMethod.AVG_POOL), ("pool_max", CompressionMethod.MAX_POOL),
        ("patch_bl", CompressionMethod.PATCH_BL), ("patch_pi", CompressionMethod.PATCH_PI),
    ])
    def test_parse(self, text, method):
        assert CompressionMethod.parse(text) is method

    def test_parse_unknown(self):
        with pytest.raises(ValueError, match="unknown compression method"):
            CompressionMethod.parse("wavelet")

    def test_families(self):
        assert CompressionMethod.PATCH_PI.is_patch and not CompressionMethod.PATCH_PI.is_pool
        assert CompressionMethod.MAX_POOL.is_pool and not CompressionMethod.FSHIFT.is_pool


class TestApplyCompression:
    @pytest.fixture
    def wave(self, rng):
        return Waveform(rng.uniform(-0.5, 0.5, 16000))

    @pytest.fixture
    def framing(self):
        return FramingParams(target_time_frames=128)

    def test_none_is_log_mel(self, wave, framing):
        assert np.array_equal(apply_compression(wave, "none", 1, framing).bins, log_mel(wave, framing).bins)

    def test_dispatch(self, wave, framing):
        base = log_mel(wave, framing).bins
        assert np.array_equal(apply_compression(wave, "pool_avg", 2, framing).bins, avg_pool_frames(base, 2))
        assert np.array_equal(apply_compression(wave, "pool_max", 4, framing).bins, max_pool_frames(base, 4))
        assert np.array_equal(apply_compression(wave, "fshift", 2, framing).bins, fshift_mel(wave, framing, 2).bins)

    @pytest.mark.parametrize("method", ["patch_bl", "patch_pi"])
    def test_patch_keeps_full_resolution(self, wave, framing, method):
        X = apply_compression(wave, method, 4, framing)
        assert X.shape == (128, 128)
        assert X.compression_factor == 1

    @pytest.mark.parametrize("method, C, T", [
        ("fshift", 2, 64), ("pool_avg", 2, 64), ("pool_max", 4, 32), ("patch_bl", 4, 128), ("none", 1, 128),
    ])
    def test_output_length(self, wave, framing, method, C, T):
        assert apply_compression(wave, method, C, framing).shape[1] == T
        assert spectrogram_frames(CompressionMethod.parse(method), C, 128) == T

    def test_rejects_none_with_factor(self, wave, framing):
        with pytest.raises(ValueError):
            apply_compression(wave, "none", 2, framing)

    def test_rejects_non_divisible(self, wave):
        with pytest.raises(ValueError, match="divisible"):
            apply_compression(wave, "pool_avg", 3, FramingParams())

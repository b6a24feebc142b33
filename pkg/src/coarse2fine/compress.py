"""Time-axis compression of log-mel spectrograms."""

from __future__ import annotations

import enum

import numpy as np

from .dsp import FramingParams, MelSpectrogram, Waveform, fshift_mel, log_mel


class CompressionMethod(str, enum.Enum):
    NONE = "none"
    FSHIFT = "fshift"
    AVG_POOL = "pool_avg"
    MAX_POOL = "pool_max"
    PATCH_BL = "patch_bl"
    PATCH_PI = "patch_pi"

    @property
    def is_patch(self) -> bool:
        return self in (CompressionMethod.PATCH_BL, CompressionMethod.PATCH_PI)

    @property
    def is_pool(self) -> bool:
        return self in (CompressionMethod.AVG_POOL, CompressionMethod.MAX_POOL)

    @classmethod
    def parse(cls, value: "str | CompressionMethod") -> "CompressionMethod":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown compression method {value!r}; expected one of {names}") from None


def _check_factor(T: int, C: int):
    if int(C) != C or C < 1:
        raise ValueError(f"compression factor must be a positive integer, got {C}")
    if T % C:
        raise ValueError(f"time length {T} is not divisible by C={C}")


def avg_pool_frames(grid: np.ndarray, C: int) -> np.ndarray:
    """Average non-overlapping windows of ``C`` frames along the last axis."""
    grid = np.asarray(grid, dtype=np.float64)
    _check_factor(grid.shape[-1], C)
    if C == 1:
        return grid
    return grid.reshape(*grid.shape[:-1], grid.shape[-1] // C, C).mean(axis=-1)


def max_pool_frames(grid: np.ndarray, C: int) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    _check_factor(grid.shape[-1], C)
    if C == 1:
        return grid
    return grid.reshape(*grid.shape[:-1], grid.shape[-1] // C, C).max(axis=-1)


def avg_pool_time(X: MelSpectrogram, C: int) -> MelSpectrogram:
    if C == 1:
        return X
    return MelSpectrogram(avg_pool_frames(X.bins, C), X.framing, X.compression_factor * int(C))


def max_pool_time(X: MelSpectrogram, C: int) -> MelSpectrogram:
    if C == 1:
        return X
    return MelSpectrogram(max_pool_frames(X.bins, C), X.framing, X.compression_factor * int(C))


def pool_frames(grid: np.ndarray, method: CompressionMethod, C: int) -> np.ndarray:
    """Array-level pooling used by the batched data pipeline."""
    if method is CompressionMethod.AVG_POOL:
        return avg_pool_frames(grid, C)
    if method is CompressionMethod.MAX_POOL:
        return max_pool_frames(grid, C)
    raise ValueError(f"{method.value} is not a pooling method")


def spectrogram_frames(method: CompressionMethod, C: int, target_time_frames: int) -> int:
    """Columns of the spectrogram handed to the tokenizer under ``method``/``C``."""
    method = CompressionMethod.parse(method)
    _check_factor(target_time_frames, C)
    if method in (CompressionMethod.FSHIFT, CompressionMethod.AVG_POOL, CompressionMethod.MAX_POOL):
        return target_time_frames // C
    return target_time_frames


def apply_compression(
    w: Waveform, method: CompressionMethod | str, C: int, f: FramingParams | None = None
) -> MelSpectrogram:
    method = CompressionMethod.parse(method)
    f = f or FramingParams()
    _check_factor(f.target_time_frames, C)
    if method is CompressionMethod.NONE and C != 1:
        raise ValueError("method 'none' only accepts C=1")
    if method is CompressionMethod.FSHIFT:
        return fshift_mel(w, f, C)
    X = log_mel(w, f)
    if method is CompressionMethod.AVG_POOL:
        return avg_pool_time(X, C)
    if method is CompressionMethod.MAX_POOL:
        return max_pool_time(X, C)
    # patch methods compress at tokenization time
    return X

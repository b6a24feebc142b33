"""Log-mel spectrogram front end with a parametric frame shift."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

LOG_FLOOR = 1e-10
LOG_FLOOR_VALUE = float(np.log(LOG_FLOOR))


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be mono 1-D, got shape {samples.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class FramingParams:
    frame_size_ms: float = 25.0
    frame_shift_ms: float = 10.0
    n_mels: int = 128
    fft_size: int = 512
    target_time_frames: int = 1024
    sample_rate_hz: int = 16000

    def __post_init__(self):
        if self.frame_size_ms <= 0 or self.frame_shift_ms <= 0:
            raise ValueError("frame size and shift must be positive")
        if self.frame_size_ms < self.frame_shift_ms:
            raise ValueError(
                f"frame_size_ms ({self.frame_size_ms}) must be >= frame_shift_ms ({self.frame_shift_ms})"
            )
        if self.n_mels <= 0 or self.target_time_frames <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("n_mels, target_time_frames and sample_rate_hz must be positive")
        if self.fft_size < self.frame_samples:
            raise ValueError(f"fft_size {self.fft_size} shorter than a frame ({self.frame_samples} samples)")
        if self.n_mels > self.fft_size // 2:
            raise ValueError(f"n_mels {self.n_mels} exceeds fft_size/2 = {self.fft_size // 2}")

    @property
    def frame_samples(self) -> int:
        return ms_to_samples(self.frame_size_ms, self.sample_rate_hz)

    @property
    def shift_samples(self) -> int:
        return ms_to_samples(self.frame_shift_ms, self.sample_rate_hz)


@dataclass(frozen=True)
class MelSpectrogram:
    """F x T grid of natural-log mel energies.

    ``framing`` is always the uncompressed front-end configuration; the grid
    has ``framing.target_time_frames // compression_factor`` columns.
    """

    bins: np.ndarray
    framing: FramingParams = field(default_factory=FramingParams)
    compression_factor: int = 1

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.float64)
        expected = (self.framing.n_mels, self.framing.target_time_frames // self.compression_factor)
        if bins.shape != expected:
            raise ValueError(f"mel grid shape {bins.shape} != expected {expected}")
        if not np.all(np.isfinite(bins)):
            raise ValueError("mel grid contains non-finite values")
        object.__setattr__(self, "bins", bins)

    @property
    def shape(self) -> tuple[int, int]:
        return self.bins.shape


def ms_to_samples(ms: float, sample_rate_hz: int) -> int:
    return int(round(ms * sample_rate_hz / 1000.0))


def frame_count(num_samples: int, frame_samples: int, shift_samples: int) -> int:
    if frame_samples <= 0 or shift_samples <= 0:
        raise ValueError("frame and shift lengths must be positive")
    if num_samples < frame_samples:
        return 0
    return 1 + (num_samples - frame_samples) // shift_samples


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, sample_rate_hz: int) -> np.ndarray:
    """Peak frequency (Hz) of each triangular filter, lowest first."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=16)
def _mel_filterbank_cached(n_mels: int, fft_size: int, sample_rate_hz: int) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate_hz / fft_size
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lower) / (center - lower)
    falling = (upper - freqs[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_filterbank(n_mels: int, fft_size: int, sample_rate_hz: int) -> np.ndarray:
    """HTK-scale triangular filters spanning 0 Hz to Nyquist, peak height 1.

    Returns an (n_mels, fft_size // 2 + 1) matrix applied to power spectra.
    """
    return _mel_filterbank_cached(n_mels, fft_size, sample_rate_hz)


@lru_cache(maxsize=16)
def _hann(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT analysis window
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def _log_mel_frames(samples: np.ndarray, f: FramingParams, shift: int, n_frames_out: int) -> np.ndarray:
    frame_len = f.frame_samples
    n = frame_count(samples.shape[0], frame_len, shift)
    if n == 0:
        raise ValueError(f"waveform of {samples.shape[0]} samples is shorter than one frame ({frame_len})")
    n_used = min(n, n_frames_out)
    windows = np.lib.stride_tricks.sliding_window_view(samples, frame_len)[::shift][:n_used]
    spec = np.fft.rfft(windows * _hann(frame_len), n=f.fft_size, axis=-1)
    power = spec.real**2 + spec.imag**2
    mel = power @ mel_filterbank(f.n_mels, f.fft_size, f.sample_rate_hz).T
    out = np.full((f.n_mels, n_frames_out), LOG_FLOOR_VALUE)
    out[:, :n_used] = np.log(np.maximum(mel, LOG_FLOOR)).T
    return out


def _check_rate(w: Waveform, f: FramingParams):
    if w.sample_rate_hz != f.sample_rate_hz:
        raise ValueError(f"waveform rate {w.sample_rate_hz} Hz does not match framing rate {f.sample_rate_hz} Hz")


def log_mel(w: Waveform, f: FramingParams | None = None) -> MelSpectrogram:
    """Hann-windowed power STFT -> mel filterbank -> natural log.

    Frames lie fully inside the signal. The time axis is truncated or padded
    with silent (log-floor) columns to exactly ``f.target_time_frames``.
    """
    f = f or FramingParams()
    _check_rate(w, f)
    bins = _log_mel_frames(w.samples, f, f.shift_samples, f.target_time_frames)
    return MelSpectrogram(bins, f, 1)


def fshift_mel(w: Waveform, f: FramingParams | None, C: int) -> MelSpectrogram:
    """Temporally compressed spectrogram: hop scaled by ``C``, frame size kept."""
    f = f or FramingParams()
    if int(C) != C or C < 1:
        raise ValueError(f"compression factor must be a positive integer, got {C}")
    if f.target_time_frames % C:
        raise ValueError(f"target_time_frames {f.target_time_frames} not divisible by C={C}")
    if C == 1:
        return log_mel(w, f)
    _check_rate(w, f)
    shift = ms_to_samples(f.frame_shift_ms * C, f.sample_rate_hz)
    bins = _log_mel_frames(w.samples, f, shift, f.target_time_frames // C)
    return MelSpectrogram(bins, f, int(C))

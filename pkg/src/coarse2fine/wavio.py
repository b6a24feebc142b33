"""Canonical RIFF/WAVE PCM16 mono reader and writer.

Layout written (44-byte header, little endian)::

    0  "RIFF"   4  riff size (36 + data bytes)   8  "WAVE"
    12 "fmt "   16 16 (fmt size)   20 1 (PCM)   22 1 (channels)
    24 sample rate   28 byte rate   32 block align (2)   34 bits (16)
    36 "data"   40 data bytes   44 samples (int16)

The reader walks the chunk list, so extra chunks (LIST, fact, ...) before
or after ``data`` are skipped.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dsp import Waveform

PCM16_SCALE = 32768.0


class WavError(ValueError):
    pass


class MalformedWavError(WavError):
    pass


class UnsupportedWavError(WavError):
    pass


def encode_pcm16(samples: np.ndarray) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.size and (np.max(np.abs(x)) > 1.0):
        raise ValueError("amplitudes must lie in [-1, 1]")
    return np.clip(np.round(x * PCM16_SCALE), -32768, 32767).astype("<i2")


def wav_bytes(w: Waveform) -> bytes:
    pcm = encode_pcm16(w.samples).tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, w.sample_rate_hz, w.sample_rate_hz * 2, 2, 16,
        b"data", len(pcm),
    )
    return header + pcm


def write_wav(path: str | Path, w: Waveform) -> Path:
    path = Path(path)
    path.write_bytes(wav_bytes(w))
    return path


def parse_wav(data: bytes, name: str = "<bytes>") -> Waveform:
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{name}: missing RIFF/WAVE signature")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8: pos + 8 + size]
        if len(body) < size:
            raise MalformedWavError(f"{name}: chunk {chunk_id!r} truncated ({len(body)} of {size} bytes)")
        if chunk_id == b"fmt ":
            if size < 16:
                raise MalformedWavError(f"{name}: fmt chunk too short ({size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", body)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise MalformedWavError(f"{name}: no fmt chunk")
    if payload is None:
        raise MalformedWavError(f"{name}: no data chunk")
    audio_format, channels, rate, byte_rate, block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedWavError(f"{name}: audio format {audio_format} is not integer PCM")
    if channels != 1:
        raise UnsupportedWavError(f"{name}: {channels} channels, only mono is supported")
    if bits != 16:
        raise UnsupportedWavError(f"{name}: {bits}-bit samples, only 16-bit is supported")
    if rate == 0 or block_align != 2 or byte_rate != rate * 2:
        raise MalformedWavError(f"{name}: inconsistent fmt fields (rate={rate}, byte_rate={byte_rate}, align={block_align})")
    if len(payload) == 0:
        raise MalformedWavError(f"{name}: empty data chunk")
    if len(payload) % 2:
        raise MalformedWavError(f"{name}: odd number of data bytes for 16-bit samples")
    samples = np.frombuffer(payload, dtype="<i2").astype(np.float64) / PCM16_SCALE
    return Waveform(samples, rate)


def read_wav(path: str | Path) -> Waveform:
    path = Path(path)
    return parse_wav(path.read_bytes(), str(path))

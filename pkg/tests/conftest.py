import numpy as np
import pytest

from coarse2fine.dsp import Waveform


def sine(freq_hz, seconds, sample_rate=16000, amplitude=0.5):
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq_hz * t), sample_rate)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest

from prosody_probe.ingest import SAMPLE_RATE
from prosody_probe.synthetic import harmonic_tone, write_corpus


def sine(freq, duration=1.0, amplitude=0.5, sr=SAMPLE_RATE):
    t = np.arange(int(round(duration * sr))) / sr
    return amplitude * np.sin(2 * np.pi * freq * t)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """12 one-second speech-like utterances split 8/2/2, ProR manifest."""
    root = tmp_path_factory.mktemp("corpus")
    manifest, path = write_corpus(root, 12, seed=3, splits=(8 / 12, 2 / 12, 2 / 12))
    return manifest, path


@pytest.fixture
def tone220():
    return harmonic_tone(220.0, 1.0)

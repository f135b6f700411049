import numpy as np
import pytest

from emonoise.audio import AudioClip
from emonoise.env import bank_from_clips
from emonoise.toy import make_toy_corpus

SR = 16000


def tone(freq=440.0, dur=1.0, sr=SR, amp=0.3):
    t = np.arange(int(round(dur * sr))) / sr
    return AudioClip(amp * np.sin(2 * np.pi * freq * t), sr)


def noise_clip(seed=0, dur=1.0, sr=SR, amp=0.1):
    rng = np.random.default_rng(seed)
    return AudioClip(amp * rng.standard_normal(int(round(dur * sr))), sr)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_bank():
    clips = [(f"{cat}_{i}", cat, noise_clip(seed=10 * k + i, dur=0.7)) for k, cat in enumerate(("Nat", "Hum", "Int")) for i in range(2)]
    return bank_from_clips(clips, SR)


@pytest.fixture(scope="session")
def toy():
    return make_toy_corpus(n_utterances=600, seed=0)


@pytest.fixture(scope="session")
def small_toy():
    return make_toy_corpus(n_utterances=90, seed=5)

"""
Synthetic toy corpus, noise bank and oracle classifiers for desk-scale checks.

Utterances are shaped noise with a syllable-rate envelope. Activation sets
the spectral tilt, valence the centre of a resonance bump; both carry
per-utterance Gaussian jitter, and each speaker adds a fixed level and tilt
offset. The three noise categories are broadband backgrounds that differ in
tilt and modulation, so training on two of them says something about the
third.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip, measure, write_wav
from .classifier.labels import LEVELS, EmotionLabel
from .env import NoiseBank, bank_from_clips, normalize_level
from .harness.experiment import Corpus
from .harness.manifest import UtteranceRecord, write_manifest
from .seeding import rng_for
from .synth.transforms import EventBank

SAMPLE_RATE = 16000
ACT_TILT_DB_PER_OCT = {"low": -9.0, "mid": -4.5, "high": 0.0}
VAL_CENTER_HZ = {"low": 500.0, "mid": 1400.0, "high": 3200.0}
BUMP_DB = 14.0
SPEAKERS = tuple((f"S{i:02d}", "M" if i % 2 == 0 else "F") for i in range(10))


def shaped_noise(
    n: int,
    rng: np.random.Generator,
    tilt_db_per_oct: float,
    center_hz: float | None = None,
    bump_db: float = BUMP_DB,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    """White noise with a spectral tilt (re 1 kHz) and optional log-Gaussian bump."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    octaves = np.log2(np.maximum(f, 50.0) / 1000.0)
    gain_db = tilt_db_per_oct * octaves
    if center_hz is not None:
        gain_db = gain_db + bump_db * np.exp(-0.5 * (np.log2(np.maximum(f, 50.0) / center_hz) / 0.35) ** 2)
    x = np.fft.irfft(spec * 10 ** (gain_db / 20), n)
    return x / (np.sqrt(np.mean(x**2)) + 1e-12)


def syllable_envelope(n: int, rng: np.random.Generator, rate_hz: float = 4.0, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    t = np.arange(n) / sample_rate
    phase = rng.uniform(0, 2 * np.pi)
    env = 0.55 + 0.45 * np.sin(2 * np.pi * rate_hz * t + phase)
    ramp = min(n // 10, int(0.02 * sample_rate))
    env[:ramp] *= np.linspace(0, 1, ramp)
    env[n - ramp :] *= np.linspace(1, 0, ramp)
    return env


def synth_utterance(
    label: EmotionLabel,
    rng: np.random.Generator,
    duration_s: float,
    speaker_tilt: float = 0.0,
    speaker_gain_db: float = 0.0,
    jitter: float = 1.0,
    level_db: float = -22.0,
) -> AudioClip:
    n = int(round(duration_s * SAMPLE_RATE))
    tilt = ACT_TILT_DB_PER_OCT[label.activation] + speaker_tilt + jitter * rng.normal(0, 0.8)
    center = VAL_CENTER_HZ[label.valence] * 2 ** (jitter * rng.normal(0, 0.12))
    x = shaped_noise(n, rng, tilt, center) * syllable_envelope(n, rng)
    x *= 10 ** ((level_db + speaker_gain_db) / 20) / np.sqrt(np.mean(x**2))
    return AudioClip(x, SAMPLE_RATE)


@dataclass
class ToyCorpus:
    corpus: Corpus
    clips: dict[str, AudioClip]

    @property
    def records(self) -> list[UtteranceRecord]:
        return list(self.corpus.records)


def make_toy_corpus(
    n_utterances: int = 600,
    seed: int = 0,
    jitter: float = 1.0,
    min_dur_s: float = 0.8,
    max_dur_s: float = 1.6,
    with_noise: bool = True,
) -> ToyCorpus:
    """Ten speakers (5 M, 5 F) cycling through the 9 activation x valence cells."""
    cells = [(a, v) for a in LEVELS for v in LEVELS]
    spk_rng = rng_for(seed, "toy-speakers")
    speaker_tilt = {s: spk_rng.normal(0, 1.0) for s, _ in SPEAKERS}
    speaker_gain = {s: spk_rng.normal(0, 3.0) for s, _ in SPEAKERS}
    records, clips = [], {}
    for i in range(n_utterances):
        spk, gender = SPEAKERS[i % len(SPEAKERS)]
        act, val = cells[(i // len(SPEAKERS)) % len(cells)]
        rng = rng_for(seed, "toy-utt", i)
        dur = float(rng.uniform(min_dur_s, max_dur_s))
        utt = f"{spk}_u{i:04d}"
        clip = synth_utterance(EmotionLabel(act, val), rng, dur, speaker_tilt[spk], speaker_gain[spk], jitter)
        clips[utt] = clip
        records.append(
            UtteranceRecord(utt, f"{utt}.wav", spk, gender, f"Ses{int(spk[1:]) // 2 + 1}", act, val, clip.duration)
        )
    bank = make_toy_noise_bank(seed) if with_noise else None
    events = make_toy_event_bank(seed) if with_noise else None
    return ToyCorpus(Corpus(records, bank, events, clips), clips)


# (tilt dB/oct, modulation rate Hz, modulation depth) per category
NOISE_STYLES = {
    "Nat": (-6.0, 0.7, 0.5),
    "Hum": (-3.0, 3.0, 0.6),
    "Int": (-1.5, 1.5, 0.4),
}


def make_toy_noise_bank(seed: int = 0, clips_per_category: int = 4, duration_s: float = 3.0) -> NoiseBank:
    items = []
    n = int(duration_s * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    for cat, (tilt, rate, depth) in NOISE_STYLES.items():
        for j in range(clips_per_category):
            rng = rng_for(seed, "toy-noise", cat, j)
            x = shaped_noise(n, rng, tilt + rng.normal(0, 0.5))
            x *= 1 - depth + depth * np.abs(np.sin(np.pi * rate * t + rng.uniform(0, np.pi)))
            items.append((f"{cat}_{j}", cat, normalize_level(AudioClip(x, SAMPLE_RATE))))
    return bank_from_clips(items, SAMPLE_RATE)


def make_toy_event_bank(seed: int = 0, n_each: int = 3, duration_s: float = 1.0) -> EventBank:
    """Laughs and cries as strongly emotive sounds in the toy feature space.

    Both have the flat tilt of high activation; laughs carry the high-valence
    resonance with 5 Hz bursts, cries the low-valence one with a slow wail.
    """
    n = int(duration_s * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    laughs, cries = [], []
    for j in range(n_each):
        rng = rng_for(seed, "toy-laugh", j)
        x = shaped_noise(n, rng, 3.0, VAL_CENTER_HZ["high"]) * (0.2 + 0.8 * (np.sin(2 * np.pi * 5 * t) > 0))
        laughs.append(normalize_level(AudioClip(x, SAMPLE_RATE)))
        rng = rng_for(seed, "toy-cry", j)
        x = shaped_noise(n, rng, 3.0, VAL_CENTER_HZ["low"]) * (0.3 + 0.7 * np.sin(np.pi * t / duration_s) ** 2)
        cries.append(normalize_level(AudioClip(x, SAMPLE_RATE)))
    return EventBank({}, tuple(laughs), tuple(cries))


def rms_threshold_oracle(tau: float, axis: str = "activation"):
    """Classifier that answers ``high`` on ``axis`` iff the clip RMS exceeds ``tau``."""

    def classify(clip: AudioClip) -> EmotionLabel:
        level = "high" if measure(clip).rms > tau else "low"
        return EmotionLabel(level, "mid") if axis == "activation" else EmotionLabel("mid", level)

    return classify


def constant_oracle(label: EmotionLabel = EmotionLabel("mid", "mid")):
    return lambda clip: label


def write_toy_dataset(out_dir: str | Path, n_utterances: int = 60, seed: int = 0) -> dict[str, Path]:
    """Write a toy corpus as WAVs plus manifest, noise bank and event bank directories.

    Returns the paths of ``manifest``, ``noise_bank`` and ``events``.
    """
    out = Path(out_dir)
    toy = make_toy_corpus(n_utterances, seed)
    wav_dir = out / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for rec in toy.records:
        write_wav(toy.clips[rec.utt_id], wav_dir / f"{rec.utt_id}.wav")
        rows.append({**rec.to_dict(), "wav": f"wav/{rec.utt_id}.wav"})
    write_manifest(rows, out / "manifest.jsonl")

    bank_dir = out / "noise"
    for entry in toy.corpus.bank.entries:
        d = bank_dir / entry.category
        d.mkdir(parents=True, exist_ok=True)
        write_wav(entry.clip, d / f"{entry.clip_id}.wav")
    (bank_dir / "categories.json").write_text(json.dumps({c: c for c in NOISE_STYLES}, sort_keys=True))

    ev_dir = out / "events"
    for kind, clips in (("laugh", toy.corpus.events.laughs), ("cry", toy.corpus.events.cries)):
        (ev_dir / kind).mkdir(parents=True, exist_ok=True)
        for i, clip in enumerate(clips):
            write_wav(clip, ev_dir / kind / f"{kind}{i}.wav")
    return {"manifest": out / "manifest.jsonl", "noise_bank": bank_dir, "events": ev_dir}

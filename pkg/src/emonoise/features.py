"""
Log-mel filterbank (MFB) features and per-speaker z-normalization.

40 triangular filters on the HTK mel scale span 0 Hz to Nyquist over the
power spectrum of 25 ms Hamming frames taken every 10 ms. No padding is
applied, so an N-sample clip yields ``floor((N - win) / hop) + 1`` frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio import AudioClip, AudioError

N_MELS = 40
WINDOW_S = 0.025
HOP_S = 0.010
LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8


class UnknownSpeakerError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class MfbSequence:
    frames: np.ndarray  # (T, 40)
    utterance_id: str = ""
    speaker_id: str = ""
    frame_rate: float = 1.0 / HOP_S

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True, eq=False)
class SpeakerStats:
    speaker_id: str
    mean: np.ndarray
    std: np.ndarray


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_params(sample_rate: int) -> tuple[int, int, int]:
    """(window, hop, n_fft) in samples."""
    win = int(round(WINDOW_S * sample_rate))
    hop = int(round(HOP_S * sample_rate))
    n_fft = 1 << (win - 1).bit_length()
    return win, hop, n_fft


def n_frames_for(n_samples: int, sample_rate: int) -> int:
    win, hop, _ = frame_params(sample_rate)
    return (n_samples - win) // hop + 1


def mel_filter_centers(sample_rate: int, n_mels: int = N_MELS) -> np.ndarray:
    mels = np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2)
    return mel_to_hz(mels)[1:-1]


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = N_MELS) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular weights, evaluated at the FFT bin frequencies."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def extract_mfb(clip: AudioClip, utterance_id: str = "", speaker_id: str = "") -> MfbSequence:
    win, hop, n_fft = frame_params(clip.sample_rate)
    if len(clip) < win:
        raise AudioError(f"clip of {len(clip)} samples is shorter than one {win}-sample frame")
    frames = sliding_window_view(clip.samples, win)[::hop]
    spec = np.fft.rfft(frames * np.hamming(win), n=n_fft)
    power = spec.real**2 + spec.imag**2
    energies = power @ mel_filterbank(clip.sample_rate, n_fft).T
    return MfbSequence(np.log(np.maximum(energies, LOG_FLOOR)), utterance_id, speaker_id)


def fit_speaker_stats(seqs: Iterable[MfbSequence]) -> dict[str, SpeakerStats]:
    """Per-speaker, per-dimension mean and (population) std over all frames."""
    by_speaker: dict[str, list[np.ndarray]] = {}
    for s in seqs:
        by_speaker.setdefault(s.speaker_id, []).append(s.frames)
    stats = {}
    for spk, chunks in sorted(by_speaker.items()):
        allf = np.concatenate(chunks, axis=0)
        stats[spk] = SpeakerStats(spk, allf.mean(axis=0), np.maximum(allf.std(axis=0), STD_FLOOR))
    return stats


def _lookup(seq: MfbSequence, stats: Mapping[str, SpeakerStats] | SpeakerStats) -> SpeakerStats:
    if isinstance(stats, SpeakerStats):
        return stats
    try:
        return stats[seq.speaker_id]
    except KeyError:
        raise UnknownSpeakerError(f"no normalization statistics for speaker {seq.speaker_id!r}") from None


def apply_znorm(seq: MfbSequence, stats: Mapping[str, SpeakerStats] | SpeakerStats) -> MfbSequence:
    st = _lookup(seq, stats)
    return MfbSequence((seq.frames - st.mean) / st.std, seq.utterance_id, seq.speaker_id, seq.frame_rate)


def invert_znorm(seq: MfbSequence, stats: Mapping[str, SpeakerStats] | SpeakerStats) -> MfbSequence:
    st = _lookup(seq, stats)
    return MfbSequence(seq.frames * st.std + st.mean, seq.utterance_id, seq.speaker_id, seq.frame_rate)


def pooled_stats(stats: Mapping[str, SpeakerStats]) -> SpeakerStats:
    """Average of per-speaker statistics, for inputs whose speaker is unknown."""
    means = np.stack([s.mean for s in stats.values()])
    stds = np.stack([s.std for s in stats.values()])
    return SpeakerStats("*", means.mean(axis=0), stds.mean(axis=0))


def write_features(seq: MfbSequence, stem: str | Path) -> tuple[Path, Path]:
    """Write ``<stem>.npy`` (float32 T x 40) and a ``<stem>.json`` sidecar."""
    stem = Path(stem)
    npy = stem.with_suffix(".npy")
    meta = stem.with_suffix(".json")
    np.save(npy, seq.frames.astype(np.float32))
    meta.write_text(
        json.dumps(
            {
                "utterance_id": seq.utterance_id,
                "speaker_id": seq.speaker_id,
                "frames": int(seq.n_frames),
                "dims": int(seq.frames.shape[1]),
            },
            sort_keys=True,
        )
    )
    return npy, meta


def read_features(stem: str | Path) -> MfbSequence:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    frames = np.load(stem.with_suffix(".npy")).astype(np.float64)
    if frames.shape != (meta["frames"], meta["dims"]):
        raise ValueError(f"{stem}: matrix shape {frames.shape} disagrees with sidecar")
    return MfbSequence(frames, meta["utterance_id"], meta["speaker_id"])

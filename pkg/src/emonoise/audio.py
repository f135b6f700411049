"""
Sample-accurate audio clips, WAV I/O, level measurement and SNR-exact mixing.

Every transform in the package takes and returns :class:`AudioClip`. Samples
are held as float64 internally; WAV files are PCM16 or IEEE float32.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

PCM16_SCALE = 32768.0


class AudioError(ValueError):
    """Invalid audio input to a transform."""


class WavFormatError(AudioError):
    """WAV file that cannot be decoded into the supported encodings."""


class SilentInputError(AudioError):
    """All-zero signal or noise where a non-silent one is required."""


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono sample buffer with its sample rate.

    Samples are float64 amplitudes nominally in [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"samples must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> AudioClip:
        return AudioClip(samples, self.sample_rate)

    def seconds_to_samples(self, seconds: float) -> int:
        return int(round(seconds * self.sample_rate))


@dataclass(frozen=True)
class LevelMeasure:
    rms: float
    power: float
    db_fs: float


def require_nonempty(clip: AudioClip, what: str = "clip") -> None:
    if len(clip) == 0:
        raise AudioError(f"{what} is empty")


def read_wav(path: str | Path) -> AudioClip:
    """Read a PCM16 or float32 WAV file as a mono clip.

    Multichannel files are averaged to mono. PCM16 samples are divided by
    32768 so that the most negative code maps to exactly -1.0.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError) as exc:
        raise WavFormatError(f"{path}: cannot decode WAV ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported sample encoding {data.dtype}; expected PCM16 or float32"
        )
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(samples, rate)


def encode_pcm16(samples: np.ndarray) -> np.ndarray:
    codes = np.round(np.asarray(samples, dtype=np.float64) * PCM16_SCALE)
    return np.clip(codes, -32768, 32767).astype(np.int16)


def write_wav(clip: AudioClip, path: str | Path, fmt: str = "pcm16") -> None:
    """Write ``clip`` as a mono WAV.

    Args:
        clip: Clip to write; must be non-empty.
        path: Destination file.
        fmt: ``"pcm16"`` or ``"float32"``. Float32 is lossless for samples
            that are exactly representable in single precision.
    """
    require_nonempty(clip)
    if fmt == "pcm16":
        data = encode_pcm16(clip.samples)
    elif fmt == "float32":
        data = clip.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}; use 'pcm16' or 'float32'")
    wavfile.write(Path(path), clip.sample_rate, data)


def measure(clip: AudioClip | np.ndarray) -> LevelMeasure:
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    if samples.size == 0:
        raise AudioError("cannot measure an empty clip")
    power = float(np.mean(samples * samples))
    rms = float(np.sqrt(power))
    db_fs = 20.0 * np.log10(rms) if rms > 0 else float("-inf")
    return LevelMeasure(rms=rms, power=power, db_fs=float(db_fs))


def peak_normalize(samples: np.ndarray, limit: float = 1.0) -> np.ndarray:
    """Rescale the whole buffer by ``limit/peak`` when the peak exceeds ``limit``."""
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > limit:
        return samples * (limit / peak)
    return samples


def snr_gain(signal_rms: float, noise_rms: float, snr_db: float) -> float:
    """Linear gain that puts noise of ``noise_rms`` at ``snr_db`` below ``signal_rms``."""
    if noise_rms <= 0:
        raise SilentInputError("noise is silent; SNR is undefined")
    if signal_rms <= 0:
        raise SilentInputError("signal is silent over the mixing region; SNR is undefined")
    return (signal_rms / noise_rms) * 10.0 ** (-snr_db / 20.0)


def mix_at_snr(
    signal: AudioClip,
    noise: AudioClip,
    snr_db: float,
    offset: int = 0,
    envelope: np.ndarray | None = None,
) -> AudioClip:
    """Add ``noise`` to ``signal`` at ``offset`` so the overlap SNR is ``snr_db``.

    The gain is computed from plain RMS over the overlap region (the samples
    of ``signal`` covered by the placed noise). Noise running past the end of
    the signal is truncated. ``envelope``, if given, multiplies the noise
    after the gain is fixed, so the SNR then holds only where the envelope
    is 1. The output is peak-normalized to 1.0 when it would clip, which
    scales signal and noise alike and leaves the SNR unchanged.
    """
    if signal.sample_rate != noise.sample_rate:
        raise AudioError(
            f"sample-rate mismatch: signal {signal.sample_rate} Hz, noise {noise.sample_rate} Hz"
        )
    require_nonempty(signal, "signal")
    require_nonempty(noise, "noise")
    if not 0 <= offset < len(signal):
        raise AudioError(f"offset {offset} outside signal of {len(signal)} samples")

    n = min(len(noise), len(signal) - offset)
    placed = noise.samples[:n]
    overlap = signal.samples[offset : offset + n]
    gain = snr_gain(measure(overlap).rms, measure(placed).rms, snr_db)

    scaled = gain * placed
    if envelope is not None:
        envelope = np.asarray(envelope, dtype=np.float64)
        if envelope.shape[0] < n:
            raise AudioError("envelope shorter than the placed noise")
        scaled = scaled * envelope[:n]

    out = signal.samples.copy()
    out[offset : offset + n] += scaled
    return signal.with_samples(peak_normalize(out))


def equal_power_fades(length: int) -> tuple[np.ndarray, np.ndarray]:
    """(fade_out, fade_in) pair with fade_out**2 + fade_in**2 == 1."""
    t = (np.arange(length) + 0.5) / length
    return np.cos(0.5 * np.pi * t), np.sin(0.5 * np.pi * t)


def linear_fades(length: int) -> tuple[np.ndarray, np.ndarray]:
    t = (np.arange(length) + 0.5) / length
    return 1.0 - t, t


def crossfade_join(a: np.ndarray, b: np.ndarray, overlap: int, equal_power: bool = False) -> np.ndarray:
    """Concatenate with the last ``overlap`` samples of ``a`` blended into ``b``.

    The result has ``len(a) + len(b) - overlap`` samples.
    """
    overlap = min(overlap, len(a), len(b))
    if overlap <= 0:
        return np.concatenate([a, b])
    fade_out, fade_in = equal_power_fades(overlap) if equal_power else linear_fades(overlap)
    mid = a[len(a) - overlap :] * fade_out + b[:overlap] * fade_in
    return np.concatenate([a[: len(a) - overlap], mid, b[overlap:]])


def loop_or_truncate(noise: AudioClip, target_len: int, crossfade_s: float = 0.010) -> AudioClip:
    """Return exactly ``target_len`` samples of ``noise``.

    Shorter targets take a prefix. Longer targets loop the clip, joining
    repeats with an equal-power crossfade at each seam.
    """
    require_nonempty(noise, "noise")
    if target_len <= 0:
        raise AudioError(f"target_len must be positive, got {target_len}")
    src = noise.samples
    if target_len <= len(src):
        return noise.with_samples(src[:target_len].copy())

    xf = int(round(crossfade_s * noise.sample_rate))
    if len(src) < 2 * xf:
        xf = 0
    out = src.copy()
    while len(out) < target_len:
        out = crossfade_join(out, src, xf, equal_power=True)
    return noise.with_samples(out[:target_len])


def resample(clip: AudioClip, sample_rate: int) -> AudioClip:
    """Polyphase resampling to ``sample_rate``; length becomes round(N * new/old)."""
    if sample_rate == clip.sample_rate:
        return clip
    ratio = Fraction(sample_rate, clip.sample_rate)
    out = resample_poly(clip.samples, ratio.numerator, ratio.denominator)
    target = int(round(len(clip) * sample_rate / clip.sample_rate))
    return AudioClip(fit_length(out, target), sample_rate)


def fit_length(samples: np.ndarray, target: int) -> np.ndarray:
    """Truncate or zero-pad to ``target`` samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) >= target:
        return samples[:target]
    return np.concatenate([samples, np.zeros(target - len(samples))])


def concat(clips: list[AudioClip]) -> AudioClip:
    rates = {c.sample_rate for c in clips}
    if len(rates) != 1:
        raise AudioError(f"cannot concatenate clips with sample rates {sorted(rates)}")
    return AudioClip(np.concatenate([c.samples for c in clips]), rates.pop())

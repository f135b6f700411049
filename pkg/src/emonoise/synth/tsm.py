"""
Pitch-preserving time-scale modification (WSOLA) and pitch shifting.

WSOLA overlap-adds Hann-windowed frames at a fixed synthesis hop. Each new
analysis frame is taken near its nominal position ``rate * output time``,
shifted within a tolerance window to best match (by cross-correlation) the
natural continuation of the previously copied frame, so periodic content
stays phase-coherent and pitch is unchanged.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
from scipy.signal import get_window, resample_poly

from ..audio import AudioClip, fit_length

WINDOW_S = 0.030
HOP_S = 0.010


def wsola(
    x: np.ndarray,
    rate: float,
    sample_rate: int,
    window_s: float = WINDOW_S,
    hop_s: float = HOP_S,
    tolerance_s: float | None = None,
) -> np.ndarray:
    """Time-stretch ``x`` by ``rate`` (>1 is faster/shorter).

    Returns exactly ``round(len(x) / rate)`` samples.
    """
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    x = np.asarray(x, dtype=np.float64)
    target = int(round(len(x) / rate))
    if rate == 1.0:
        return x.copy()
    if target == 0:
        return np.zeros(0)

    win = int(round(window_s * sample_rate))
    hop = int(round(hop_s * sample_rate))
    tol = int(round((hop_s if tolerance_s is None else tolerance_s) * sample_rate))
    window = get_window("hann", win)

    # pad so frames centred anywhere in [0, len(x)] have data; pad = win + tol
    pad = win + tol
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + win + hop)])

    # output frame m covers real output samples [m*hop - win, m*hop)
    n_frames = (target + win) // hop + 2
    y = np.zeros(n_frames * hop + win)
    wsum = np.zeros_like(y)

    prev = None
    for m in range(n_frames):
        out_start = m * hop - win
        centre_in = (out_start + win / 2) * rate
        nominal = int(round(centre_in - win / 2)) + pad
        nominal = min(max(nominal, 0), len(xp) - win)
        if prev is None:
            pos = nominal
        else:
            template = xp[prev + hop : prev + hop + win]
            lo = max(nominal - tol, 0)
            hi = min(nominal + tol, len(xp) - win)
            region = xp[lo : hi + win]
            score = np.correlate(region, template, mode="valid")
            pos = lo + int(np.argmax(score)) if score.size and np.any(template) else nominal
        y[m * hop : m * hop + win] += window * xp[pos : pos + win]
        wsum[m * hop : m * hop + win] += window
        prev = pos

    out = y[win : win + target]
    norm = wsum[win : win + target]
    return out / np.maximum(norm, 1e-8)


def time_stretch(clip: AudioClip, rate: float) -> AudioClip:
    return clip.with_samples(wsola(clip.samples, rate, clip.sample_rate))


def pitch_shift(clip: AudioClip, ratio: float) -> AudioClip:
    """Scale every frequency by ``ratio`` while keeping the duration.

    The clip is first stretched to ``ratio`` times its length (pitch kept),
    then resampled back to the original length, which scales pitch by
    ``ratio``.
    """
    if ratio <= 0:
        raise ValueError(f"pitch ratio must be positive, got {ratio}")
    if ratio == 1.0:
        return clip.with_samples(clip.samples.copy())
    n = len(clip)
    stretched = wsola(clip.samples, 1.0 / ratio, clip.sample_rate)
    frac = Fraction(ratio).limit_denominator(1000)
    # resampling by 1/ratio: up = denominator, down = numerator
    shifted = resample_poly(stretched, frac.denominator, frac.numerator)
    return clip.with_samples(fit_length(shifted, n))

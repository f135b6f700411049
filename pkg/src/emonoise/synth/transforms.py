"""
Synthetic (non-background) modulations of an utterance.

All transforms are deterministic functions of their inputs; the ones that
make random choices take an explicit ``seed``.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy.signal import fftconvolve

from ..audio import (
    AudioClip,
    AudioError,
    crossfade_join,
    measure,
    peak_normalize,
    read_wav,
    resample,
)
from .alignment import Alignment, AlignmentError, Phone, Word, excise
from .tsm import pitch_shift as _pitch_shift
from .tsm import wsola

log = logging.getLogger(__name__)

SYNTH_KINDS = (
    "SpeedSeg",
    "FadeIn",
    "FadeOut",
    "FillerS",
    "FillerL",
    "DropW",
    "DropLt",
    "Laugh",
    "Cry",
    "SpeedUtt",
    "Pitch",
    "Reverb",
)
NEEDS_ALIGNMENT = ("FillerS", "FillerL", "DropW", "DropLt")

SPEED_RATES = (1.25, 0.75)
PITCH_RATIOS = (1.25, 0.75)
SEGMENT_RATE = 1.25
MAX_SEGMENT_FRACTION = 0.25
FADE_RATE = 0.02
LONG_PAUSE_S = 0.5
EDIT_CROSSFADE_S = 0.005
JOIN_CROSSFADE_S = 0.010
DEFAULT_RT60_S = 0.5
MIN_SPEEDSEG_S = 0.5

DROP_WORDS = frozenset({"a", "the", "an", "so", "like", "and"})


class SynthError(ValueError):
    pass


class SegmentTooLongError(SynthError):
    """Sped-up segment longer than a quarter of the utterance."""


class EventBankError(SynthError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    """A synthetic transform and its parameters.

    ``params`` keys by kind: ``rate`` and ``fraction`` (SpeedSeg), ``rate``
    (SpeedUtt, FadeIn, FadeOut), ``ratio`` (Pitch), ``rt60_s`` (Reverb).
    Rates and ratios outside the published values need ``override=True``.
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    override: bool = False

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise SynthError(f"unknown synthetic transform {self.kind!r}")
        p = dict(self.params)
        if self.kind == "SpeedSeg":
            frac = float(p.get("fraction", MAX_SEGMENT_FRACTION))
            if frac > MAX_SEGMENT_FRACTION:
                raise SegmentTooLongError(_segment_message(frac))
            if not self.override and float(p.get("rate", SEGMENT_RATE)) != SEGMENT_RATE:
                raise SynthError(f"SpeedSeg rate must be {SEGMENT_RATE} unless overridden")
        elif self.kind == "SpeedUtt":
            if not self.override and float(p.get("rate", 1.25)) not in SPEED_RATES:
                raise SynthError(f"SpeedUtt rate must be one of {SPEED_RATES} unless overridden")
        elif self.kind == "Pitch":
            if not self.override and float(p.get("ratio", 1.25)) not in PITCH_RATIOS:
                raise SynthError(f"Pitch ratio must be one of {PITCH_RATIOS} unless overridden")
        elif self.kind == "Reverb":
            if float(p.get("rt60_s", DEFAULT_RT60_S)) <= 0:
                raise SynthError("rt60_s must be positive")

    def param(self, name: str, default: Any = None) -> Any:
        return self.params.get(name, default)

    @property
    def variant(self) -> str:
        """Row label, e.g. ``SpeedUtt(1.25x)`` or ``Reverb``."""
        if self.kind == "SpeedUtt":
            return f"SpeedUtt({float(self.param('rate', 1.25)):g}x)"
        if self.kind == "Pitch":
            return f"Pitch({float(self.param('ratio', 1.25)):g}x)"
        return self.kind

    @property
    def tag(self) -> str:
        parts = [f"synth_{self.kind}"]
        parts += [f"{k}{v:g}" if isinstance(v, (int, float)) else f"{k}{v}" for k, v in sorted(self.params.items())]
        return "_".join(parts)

    def to_dict(self) -> dict:
        return {"type": "synth", "kind": self.kind, "params": dict(self.params), "override": self.override}


def _segment_message(frac: float) -> str:
    return (
        f"segment fraction {frac:g} exceeds {MAX_SEGMENT_FRACTION:g}: sped-up segments should cover "
        "no more than 25% of the utterance"
    )


# ---------------------------------------------------------------- event bank


@dataclass(frozen=True)
class EventBank:
    """Per-speaker filler clips plus laugh and cry clips."""

    fillers: Mapping[str, tuple[AudioClip, ...]] = field(default_factory=dict)
    laughs: tuple[AudioClip, ...] = ()
    cries: tuple[AudioClip, ...] = ()

    def events(self, kind: str) -> tuple[AudioClip, ...]:
        if kind == "Laugh":
            return self.laughs
        if kind == "Cry":
            return self.cries
        raise EventBankError(f"no event pool for {kind!r}")


def load_event_bank(directory: str | Path, sample_rate: int = 16000) -> EventBank:
    """Load ``fillers/<speaker>/*.wav``, ``laugh/*.wav`` and ``cry/*.wav``."""
    root = Path(directory)

    def clips(d: Path) -> tuple[AudioClip, ...]:
        return tuple(resample(read_wav(p), sample_rate) for p in sorted(d.glob("*.wav"))) if d.is_dir() else ()

    fillers = {}
    fdir = root / "fillers"
    if fdir.is_dir():
        for spk in sorted(p for p in fdir.iterdir() if p.is_dir()):
            found = clips(spk)
            if found:
                fillers[spk.name] = found
    return EventBank(fillers, clips(root / "laugh"), clips(root / "cry"))


# ---------------------------------------------------------------- transforms


def fade(clip: AudioClip, direction: str = "out", rate: float = FADE_RATE) -> AudioClip:
    """Linear amplitude fade of ``rate`` (fraction of the original level) per second.

    Fade-out gain is ``1 - rate*t``; fade-in gain is ``1 - rate*(T - t)``,
    reaching 1 at the end. Both are floored at 0.
    """
    t = np.arange(len(clip)) / clip.sample_rate
    if direction == "out":
        gain = 1.0 - rate * t
    elif direction == "in":
        gain = 1.0 - rate * (clip.duration - t)
    else:
        raise SynthError(f"fade direction must be 'in' or 'out', got {direction!r}")
    return clip.with_samples(clip.samples * np.maximum(gain, 0.0))


def speed_utterance(clip: AudioClip, rate: float = 1.25) -> AudioClip:
    return clip.with_samples(wsola(clip.samples, rate, clip.sample_rate))


def pitch_shift(clip: AudioClip, ratio: float = 1.25) -> AudioClip:
    return _pitch_shift(clip, ratio)


def speed_segment(
    clip: AudioClip,
    rate: float = SEGMENT_RATE,
    fraction: float = MAX_SEGMENT_FRACTION,
    seed: int = 0,
) -> AudioClip:
    """Time-stretch one seeded random segment of ``fraction * duration``.

    The output is shorter by exactly ``seg_len * (1 - 1/rate)`` (rounded to
    a sample). Seams are smoothed with short crossfades that borrow samples
    from the untouched neighbours, so they cost no duration.
    """
    if fraction > MAX_SEGMENT_FRACTION:
        raise SegmentTooLongError(_segment_message(fraction))
    if clip.duration < MIN_SPEEDSEG_S:
        raise AudioError(f"clip of {clip.duration:.2f}s is shorter than {MIN_SPEEDSEG_S}s")
    x = clip.samples
    n = len(x)
    seg_len = int(round(fraction * n))
    if rate == 1.0 or seg_len == 0:
        return clip.with_samples(x.copy())

    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, n - seg_len + 1))
    stretched = wsola(x[start : start + seg_len], rate, clip.sample_rate)

    xf = int(round(EDIT_CROSSFADE_S * clip.sample_rate))
    xf_in = min(xf, n - start, len(stretched))
    head = x[: start + xf_in]
    out = crossfade_join(head, stretched, xf_in)
    end = start + seg_len
    xf_out = min(xf, end, len(out))
    tail = x[end - xf_out :]
    out = crossfade_join(out, tail, xf_out)
    return clip.with_samples(out)


def reverberate(
    clip: AudioClip,
    rt60_s: float = DEFAULT_RT60_S,
    rir: AudioClip | None = None,
    seed: int = 0,
) -> AudioClip:
    """Convolve with ``rir`` or with a synthetic exponentially decaying response.

    The output keeps the input length (the reverberant tail past the end is
    dropped) and is peak-normalized only if it would clip.
    """
    if rir is None:
        if not rt60_s > 0:
            raise SynthError(f"rt60_s must be positive, got {rt60_s}")
        rir = synthetic_rir(clip.sample_rate, rt60_s, seed=seed)
    elif rir.sample_rate != clip.sample_rate:
        raise AudioError(f"RIR at {rir.sample_rate} Hz, clip at {clip.sample_rate} Hz")
    wet = fftconvolve(clip.samples, rir.samples)[: len(clip)]
    return clip.with_samples(peak_normalize(wet))


def synthetic_rir(sample_rate: int, rt60_s: float, seed: int = 0, drr_db: float = 0.0) -> AudioClip:
    """Unit direct path followed by Gaussian noise under a 60 dB-per-``rt60_s`` decay.

    ``drr_db`` sets the direct-to-reverberant energy ratio.
    """
    length = int(round(1.5 * rt60_s * sample_rate))
    t = np.arange(length) / sample_rate
    rng = np.random.default_rng(seed)
    tail = rng.standard_normal(length) * 10.0 ** (-3.0 * t / rt60_s)
    tail[0] = 0.0
    tail *= np.sqrt(10.0 ** (-drr_db / 10.0) / np.sum(tail**2))
    tail[0] = 1.0
    return AudioClip(tail, sample_rate)


def append_event(clip: AudioClip, bank: EventBank, kind: str, seed: int = 0) -> AudioClip:
    """Append a seeded laugh/cry clip, level-matched to the utterance RMS."""
    pool = bank.events(kind)
    if not pool:
        raise EventBankError(f"event bank has no {kind} clips")
    rng = np.random.default_rng(seed)
    event = pool[int(rng.integers(len(pool)))]
    if event.sample_rate != clip.sample_rate:
        event = resample(event, clip.sample_rate)
    ev_rms = measure(event).rms
    if ev_rms == 0:
        raise EventBankError(f"{kind} clip is silent")
    matched = event.samples * (measure(clip).rms / ev_rms)
    xf = int(round(JOIN_CROSSFADE_S * clip.sample_rate))
    out = crossfade_join(clip.samples, matched, xf, equal_power=True)
    return clip.with_samples(peak_normalize(out))


def _insertion_point(alignment: Alignment, duration: float, rng: np.random.Generator) -> float:
    words = alignment.words
    bounds = [(words[i].end + words[i + 1].start) / 2 for i in range(len(words) - 1)]
    middle = [b for b in bounds if duration / 3 <= b <= 2 * duration / 3]
    if middle:
        return middle[int(rng.integers(len(middle)))]
    return min(bounds, key=lambda b: abs(b - duration / 2))


def _shift_alignment(alignment: Alignment, at: float, by: float) -> Alignment:
    def mv(t: float) -> float:
        return t + by if t >= at else t

    words = tuple(Word(w.token, mv(w.start), mv(w.end)) for w in alignment.words)
    phones = None
    if alignment.phones is not None:
        phones = tuple(Phone(p.label, mv(p.start), mv(p.end), p.word) for p in alignment.phones)
    return Alignment(words, phones)


def insert_filler(
    clip: AudioClip,
    alignment: Alignment,
    bank: EventBank,
    speaker: str,
    mode: str = "S",
    seed: int = 0,
) -> tuple[AudioClip, Alignment]:
    """Insert a same-speaker filler at a word boundary in the middle third.

    Mode ``L`` surrounds the filler with 500 ms of silence on each side.
    Words after the insertion point are shifted; the filler itself is not
    added to the word tier.
    """
    if mode not in ("S", "L"):
        raise SynthError(f"filler mode must be 'S' or 'L', got {mode!r}")
    if len(alignment.words) < 2:
        raise AlignmentError("filler insertion needs at least two aligned words")
    pool = bank.fillers.get(speaker, ())
    if not pool:
        raise EventBankError(f"no fillers for speaker {speaker!r}; cross-speaker fillers are not used")

    rng = np.random.default_rng(seed)
    at = _insertion_point(alignment, clip.duration, rng)
    filler = pool[int(rng.integers(len(pool)))]
    if filler.sample_rate != clip.sample_rate:
        filler = resample(filler, clip.sample_rate)

    f = filler.samples.copy()
    ramp = min(int(round(EDIT_CROSSFADE_S * clip.sample_rate)), len(f) // 2)
    if ramp:
        f[:ramp] *= np.linspace(0.0, 1.0, ramp)
        f[-ramp:] *= np.linspace(1.0, 0.0, ramp)
    if mode == "L":
        pause = np.zeros(int(round(LONG_PAUSE_S * clip.sample_rate)))
        f = np.concatenate([pause, f, pause])

    cut = int(round(at * clip.sample_rate))
    out = np.concatenate([clip.samples[:cut], f, clip.samples[cut:]])
    shifted = _shift_alignment(alignment, cut / clip.sample_rate, len(f) / clip.sample_rate)
    return clip.with_samples(peak_normalize(out)), shifted


def _normalize_token(token: str) -> str:
    return re.sub(r"[^a-z']", "", token.lower())


def _retime(alignment: Alignment, keep_words: list[int], keep_phones: list[int] | None, tmap) -> Alignment:
    index = {old: new for new, old in enumerate(keep_words)}
    words = tuple(
        Word(alignment.words[i].token, tmap(alignment.words[i].start), tmap(alignment.words[i].end)) for i in keep_words
    )
    phones = None
    if alignment.phones is not None and keep_phones is not None:
        phones = tuple(
            Phone(p.label, tmap(p.start), tmap(p.end), index[p.word])
            for p in (alignment.phones[j] for j in keep_phones)
            if p.word in index
        )
    return Alignment(words, phones)


def drop_words(clip: AudioClip, alignment: Alignment) -> tuple[AudioClip, Alignment]:
    """Cut every occurrence of a, the, an, so, like, and (case-insensitive)."""
    drop = [i for i, w in enumerate(alignment.words) if _normalize_token(w.token) in DROP_WORDS]
    if not drop:
        return clip.with_samples(clip.samples.copy()), alignment
    out, tmap = excise(clip, [(alignment.words[i].start, alignment.words[i].end) for i in drop], EDIT_CROSSFADE_S)
    keep = [i for i in range(len(alignment.words)) if i not in set(drop)]
    keep_phones = None if alignment.phones is None else list(range(len(alignment.phones)))
    return out, _retime(alignment, keep, keep_phones, tmap)


# ARPAbet inventory
VOWELS = frozenset("AA AE AH AO AW AY EH ER EY IH IY OW OY UH UW".split())
CONSONANTS = frozenset("B CH D DH F G HH JH K L M N NG P R S SH T TH V W Y Z ZH".split())
DROP_LETTER_RULES = ("h+vowel", "vowel+nd+consonant", "consonant+t+consonant", "vowel+r+consonant", "ihng")


def _phone_class(label: str) -> str:
    base = re.sub(r"\d", "", label.upper())
    if base in VOWELS:
        return "V"
    if base in CONSONANTS:
        return "C"
    return "-"


def _base(label: str) -> str:
    return re.sub(r"\d", "", label.upper())


def match_drop_letters(alignment: Alignment) -> dict[int, str]:
    """Phone indices to delete, mapped to the first rule that matched.

    Rules, with the deleted phone in capitals:
      H + vowel (same word); vowel + N + D + consonant starting the next word;
      consonant + T + consonant starting the next word; vowel + R + consonant;
      IH + NG (or IH + N + G, deleting G).
    """
    phones = alignment.phones
    if phones is None:
        raise AlignmentError("letter dropping needs a phone tier; use word-level transforms instead")
    hits: dict[int, str] = {}

    def nxt(i):
        return phones[i + 1] if i + 1 < len(phones) else None

    def prv(i):
        return phones[i - 1] if i > 0 else None

    def last_in_word(i):
        n = nxt(i)
        return n is None or n.word != phones[i].word

    def next_word_starts_consonant(i):
        n = nxt(i)
        return n is not None and n.word == phones[i].word + 1 and _phone_class(n.label) == "C"

    for i, p in enumerate(phones):
        b = _base(p.label)
        n, pr = nxt(i), prv(i)
        rule = None
        if b == "HH" and n is not None and n.word == p.word and _phone_class(n.label) == "V":
            rule = "h+vowel"
        elif (
            b == "D"
            and pr is not None
            and _base(pr.label) == "N"
            and pr.word == p.word
            and i >= 2
            and phones[i - 2].word == p.word
            and _phone_class(phones[i - 2].label) == "V"
            and last_in_word(i)
            and next_word_starts_consonant(i)
        ):
            rule = "vowel+nd+consonant"
        elif (
            b == "T"
            and pr is not None
            and pr.word == p.word
            and _phone_class(pr.label) == "C"
            and last_in_word(i)
            and next_word_starts_consonant(i)
        ):
            rule = "consonant+t+consonant"
        elif (
            b == "R"
            and pr is not None
            and pr.word == p.word
            and _phone_class(pr.label) == "V"
            and n is not None
            and _phone_class(n.label) == "C"
        ):
            rule = "vowel+r+consonant"
        elif b == "NG" and pr is not None and pr.word == p.word and _base(pr.label) == "IH":
            rule = "ihng"
        elif (
            b == "G"
            and pr is not None
            and _base(pr.label) == "N"
            and i >= 2
            and _base(phones[i - 2].label) == "IH"
            and phones[i - 2].word == pr.word == p.word
        ):
            rule = "ihng"
        if rule is not None:
            hits[i] = rule
    return hits


@dataclass(frozen=True)
class DropReport:
    counts: Mapping[str, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def drop_letters(clip: AudioClip, alignment: Alignment) -> tuple[AudioClip, Alignment, DropReport]:
    hits = match_drop_letters(alignment)
    counts = {rule: 0 for rule in DROP_LETTER_RULES}
    for rule in hits.values():
        counts[rule] += 1
    report = DropReport(counts)
    if not hits:
        return clip.with_samples(clip.samples.copy()), alignment, report
    phones = alignment.phones
    out, tmap = excise(clip, [(phones[i].start, phones[i].end) for i in sorted(hits)], EDIT_CROSSFADE_S)
    keep_phones = [j for j in range(len(phones)) if j not in hits]
    return out, _retime(alignment, list(range(len(alignment.words))), keep_phones, tmap), report


# ---------------------------------------------------------------- dispatch


@dataclass
class SynthContext:
    """Side inputs some transforms need."""

    alignment: Alignment | None = None
    events: EventBank | None = None
    speaker: str | None = None
    rir: AudioClip | None = None


def apply_synth(clip: AudioClip, spec: SynthSpec, ctx: SynthContext | None = None) -> AudioClip:
    """Run ``spec`` on ``clip``; alignment-editing kinds discard the new alignment."""
    ctx = ctx or SynthContext()
    k = spec.kind
    if k == "SpeedSeg":
        return speed_segment(
            clip, float(spec.param("rate", SEGMENT_RATE)), float(spec.param("fraction", MAX_SEGMENT_FRACTION)), spec.seed
        )
    if k in ("FadeIn", "FadeOut"):
        return fade(clip, "in" if k == "FadeIn" else "out", float(spec.param("rate", FADE_RATE)))
    if k == "SpeedUtt":
        return speed_utterance(clip, float(spec.param("rate", 1.25)))
    if k == "Pitch":
        return pitch_shift(clip, float(spec.param("ratio", 1.25)))
    if k == "Reverb":
        return reverberate(clip, float(spec.param("rt60_s", DEFAULT_RT60_S)), ctx.rir, seed=spec.seed)
    if k in ("Laugh", "Cry"):
        if ctx.events is None:
            raise EventBankError(f"{k} needs an event bank")
        return append_event(clip, ctx.events, k, spec.seed)
    if ctx.alignment is None:
        raise AlignmentError(f"{k} needs an alignment")
    if k in ("FillerS", "FillerL"):
        if ctx.events is None or ctx.speaker is None:
            raise EventBankError(f"{k} needs an event bank and a speaker id")
        return insert_filler(clip, ctx.alignment, ctx.events, ctx.speaker, k[-1], spec.seed)[0]
    if k == "DropW":
        return drop_words(clip, ctx.alignment)[0]
    if k == "DropLt":
        return drop_letters(clip, ctx.alignment)[0]
    raise SynthError(f"unknown synthetic transform {k!r}")

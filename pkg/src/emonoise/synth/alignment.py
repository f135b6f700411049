"""Word/phone alignments and interval excision with re-timing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..audio import AudioClip, crossfade_join

TIME_EPS = 1e-6


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class Word:
    token: str
    start: float
    end: float


@dataclass(frozen=True)
class Phone:
    label: str
    start: float
    end: float
    word: int


@dataclass(frozen=True)
class Alignment:
    words: tuple[Word, ...]
    phones: tuple[Phone, ...] | None = None

    def validate(self, duration: float | None = None) -> None:
        """Raise :class:`AlignmentError` unless intervals are ordered, disjoint and nested."""
        _check_intervals(self.words, "word", duration)
        if self.phones is None:
            return
        _check_intervals(self.phones, "phone", duration)
        for i, ph in enumerate(self.phones):
            if not 0 <= ph.word < len(self.words):
                raise AlignmentError(f"phone {i} ({ph.label}) points at missing word {ph.word}")
            w = self.words[ph.word]
            if ph.start < w.start - TIME_EPS or ph.end > w.end + TIME_EPS:
                raise AlignmentError(
                    f"phone {i} ({ph.label}) [{ph.start:.3f}, {ph.end:.3f}] outside word "
                    f"{w.token!r} [{w.start:.3f}, {w.end:.3f}]"
                )

    def phones_of(self, word_index: int) -> list[int]:
        if self.phones is None:
            return []
        return [i for i, p in enumerate(self.phones) if p.word == word_index]

    def to_dict(self) -> dict:
        d = {"words": [{"w": w.token, "start": w.start, "end": w.end} for w in self.words]}
        if self.phones is not None:
            d["phones"] = [{"p": p.label, "start": p.start, "end": p.end, "word": p.word} for p in self.phones]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Alignment:
        try:
            words = tuple(Word(str(w["w"]), float(w["start"]), float(w["end"])) for w in d["words"])
            phones = None
            if d.get("phones") is not None:
                phones = tuple(
                    Phone(str(p["p"]), float(p["start"]), float(p["end"]), int(p["word"])) for p in d["phones"]
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise AlignmentError(f"malformed alignment: {exc}") from exc
        return cls(words, phones)


def _check_intervals(items, what: str, duration: float | None) -> None:
    prev_end = 0.0
    for i, it in enumerate(items):
        if it.end < it.start - TIME_EPS:
            raise AlignmentError(f"{what} {i} ends before it starts")
        if it.start < prev_end - TIME_EPS:
            raise AlignmentError(f"{what} {i} overlaps or precedes the previous one")
        if it.start < -TIME_EPS:
            raise AlignmentError(f"{what} {i} starts before 0")
        if duration is not None and it.end > duration + TIME_EPS:
            raise AlignmentError(f"{what} {i} ends at {it.end:.3f}s past clip end {duration:.3f}s")
        prev_end = it.end


def load_alignment(path: str | Path) -> Alignment:
    return Alignment.from_dict(json.loads(Path(path).read_text()))


def save_alignment(alignment: Alignment, path: str | Path) -> None:
    Path(path).write_text(json.dumps(alignment.to_dict(), indent=1))


def _merge(intervals: list[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[list[int]] = []
    for a, b in sorted(intervals):
        if b <= a:
            continue
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


class TimeMap:
    """Maps times in the original clip to times after removing sample intervals."""

    def __init__(self, cuts: list[tuple[int, int]], sample_rate: int):
        self.cuts = cuts
        self.sample_rate = sample_rate

    def __call__(self, t: float) -> float:
        n = t * self.sample_rate
        removed = 0
        for a, b in self.cuts:
            if n <= a:
                break
            removed += min(n, b) - a
        return (n - removed) / self.sample_rate


def excise(clip: AudioClip, intervals_s: list[tuple[float, float]], crossfade_s: float = 0.005) -> tuple[AudioClip, TimeMap]:
    """Remove time intervals, smoothing each cut with a crossfade.

    The crossfade borrows half its length from each side of the cut, so the
    output is shorter than the input by exactly the removed sample count.
    """
    sr = clip.sample_rate
    n = len(clip)
    cuts = _merge([(max(0, int(round(a * sr))), min(n, int(round(b * sr)))) for a, b in intervals_s])
    x = clip.samples
    half = int(round(crossfade_s * sr / 2))

    starts = [0] + [b for _, b in cuts]
    ends = [a for a, _ in cuts] + [n]
    out = x[starts[0] : ends[0]].copy()
    for (a, b), s, e in zip(cuts, starts[1:], ends[1:]):
        piece = x[s:e]
        # each side runs h samples into the cut, so the overlap costs no length
        h = min(half, len(out), len(piece))
        if h == 0:
            out = np.concatenate([out, piece])
            continue
        left = np.concatenate([out, x[a : a + h]])
        right = np.concatenate([x[b - h : b], piece])
        out = crossfade_join(left, right, 2 * h)
    if len(out) == 0:
        raise AlignmentError("excision removed the whole clip")
    return clip.with_samples(out), TimeMap(cuts, sr)

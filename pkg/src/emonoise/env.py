"""
Environmental additive-noise augmentation.

A :class:`NoiseBank` holds level-normalized noise clips labelled by category
(``Nat`` natural soundscapes, ``Hum`` human non-speech, ``Int`` interior /
domestic). :func:`apply_env` places a bank clip over an utterance according
to an :class:`EnvSpec`:

* position ``Co``: continuous noise at a fixed SNR, covering the whole clip
  (length ``Co``), the centred half (``Me``) or a short blip (``Sh``, the
  smaller of 1 s and 10 % of the clip, at a seeded offset);
* position ``St``: noise from the first sample at 10 dB SNR, fading linearly
  to silence at the utterance midpoint.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .audio import (
    AudioClip,
    AudioError,
    loop_or_truncate,
    measure,
    mix_at_snr,
    read_wav,
    resample,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)

CATEGORIES = ("Nat", "Hum", "Int")
BANK_CATEGORIES = CATEGORIES + ("Other",)
POSITIONS = ("St", "Co")
LENGTHS = ("Sh", "Me", "Co")
GRID_SNRS = (20.0, 10.0, 0.0)

ONSET_SNR_DB = 10.0
BANK_LEVEL_DBFS = -20.0
MIN_CLIP_S = 0.100
SHORT_MAX_S = 1.0
SHORT_FRACTION = 0.10


class NoiseBankError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseEntry:
    clip_id: str
    category: str
    clip: AudioClip
    source_label: str


@dataclass(frozen=True)
class NoiseBank:
    """Immutable collection of category-labelled noise clips at one sample rate."""

    entries: tuple[NoiseEntry, ...]
    sample_rate: int
    skipped: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for e in self.entries:
            if e.category not in BANK_CATEGORIES:
                raise NoiseBankError(f"{e.clip_id}: unknown category {e.category!r}")
            if e.clip.sample_rate != self.sample_rate:
                raise NoiseBankError(f"{e.clip_id}: sample rate {e.clip.sample_rate} != bank {self.sample_rate}")

    def category(self, name: str) -> tuple[NoiseEntry, ...]:
        return tuple(e for e in self.entries if e.category == name)

    def categories(self) -> list[str]:
        return sorted({e.category for e in self.entries})


def normalize_level(clip: AudioClip, db_fs: float = BANK_LEVEL_DBFS) -> AudioClip:
    rms = measure(clip).rms
    if rms == 0:
        raise AudioError("cannot level-normalize a silent clip")
    return clip.with_samples(clip.samples * (10.0 ** (db_fs / 20.0) / rms))


def load_category_map(source: str | Path | Mapping[str, str]) -> dict[str, str]:
    if isinstance(source, Mapping):
        mapping = dict(source)
    else:
        mapping = json.loads(Path(source).read_text())
    if not isinstance(mapping, dict):
        raise NoiseBankError("category map must be a JSON object {source_label: category}")
    for label, cat in mapping.items():
        if cat not in BANK_CATEGORIES:
            raise NoiseBankError(f"label {label!r} maps to unknown category {cat!r}")
    return mapping


def source_label_for(path: Path, root: Path) -> str:
    """Files in a sub-directory take the directory name; top-level files their stem."""
    rel = path.relative_to(root)
    return rel.parts[0] if len(rel.parts) > 1 else path.stem


def bank_from_clips(clips: list[tuple[str, str, AudioClip]], sample_rate: int) -> NoiseBank:
    """Build a bank from in-memory ``(clip_id, category, clip)`` triples.

    Clips are resampled and level-normalized exactly as on ingestion.
    """
    entries = [
        NoiseEntry(clip_id, category, normalize_level(resample(clip, sample_rate)), category)
        for clip_id, category, clip in clips
    ]
    return NoiseBank(tuple(entries), sample_rate)


def ingest_noise_bank(
    directory: str | Path,
    category_map: str | Path | Mapping[str, str],
    sample_rate: int = 16000,
) -> NoiseBank:
    """Load every WAV under ``directory`` into a bank.

    Each file's source label (its sub-directory name, or its stem for files
    at the top level) is looked up in ``category_map``. Unmapped and silent
    files are skipped with a warning and counted in ``bank.skipped``.

    Raises:
        NoiseBankError: a category named in the map ends up with no clips.
    """
    root = Path(directory)
    mapping = load_category_map(category_map)
    entries = []
    skipped: Counter[str] = Counter()
    for path in sorted(root.rglob("*.wav")):
        label = source_label_for(path, root)
        category = mapping.get(label)
        if category is None:
            log.warning("skipping %s: label %r not in category map", path, label)
            skipped[label] += 1
            continue
        clip = resample(read_wav(path), sample_rate)
        if measure(clip).rms == 0:
            log.warning("skipping %s: silent clip", path)
            skipped[label] += 1
            continue
        clip_id = path.relative_to(root).with_suffix("").as_posix()
        entries.append(NoiseEntry(clip_id, category, normalize_level(clip), label))

    present = {e.category for e in entries}
    empty = sorted(set(mapping.values()) - present)
    if empty:
        raise NoiseBankError(f"no noise clips for categor{'y' if len(empty) == 1 else 'ies'}: {', '.join(empty)}")
    return NoiseBank(tuple(entries), sample_rate, dict(skipped))


@dataclass(frozen=True)
class EnvSpec:
    """One environmental-noise placement.

    ``snr_db`` is required for ``Co`` and must be ``None`` for ``St`` (which
    uses a fixed 10 dB onset). ``length`` only matters for ``Co``.
    """

    category: str
    position: str = "Co"
    snr_db: float | None = 10.0
    length: str = "Co"
    seed: int = 0

    def __post_init__(self):
        if self.category not in BANK_CATEGORIES:
            raise ValueError(f"unknown noise category {self.category!r}")
        if self.position not in POSITIONS:
            raise ValueError(f"position must be one of {POSITIONS}, got {self.position!r}")
        if self.length not in LENGTHS:
            raise ValueError(f"length must be one of {LENGTHS}, got {self.length!r}")
        if self.position == "Co" and self.snr_db is None:
            raise ValueError("snr_db is required for Co placement")
        if self.position == "St" and self.snr_db is not None:
            raise ValueError("St placement uses the fixed onset SNR; snr_db must be None")

    @property
    def extended(self) -> bool:
        """True for Sh/Me continuous placements, outside the 12-variant core grid."""
        return self.position == "Co" and self.length != "Co"

    @property
    def tag(self) -> str:
        snr = "na" if self.snr_db is None else _fmt_snr(self.snr_db)
        return f"env_{self.category}_{self.position}_{snr}_{self.length}"

    @property
    def variant(self) -> str:
        """Short row label such as ``NatSt`` or ``NatCo10``."""
        if self.position == "St":
            return f"{self.category}St"
        suffix = "" if self.length == "Co" else self.length
        return f"{self.category}Co{_fmt_snr(self.snr_db)}{suffix}"

    def to_dict(self) -> dict:
        return {
            "type": "env",
            "category": self.category,
            "position": self.position,
            "snr_db": self.snr_db,
            "length": self.length,
        }


def _fmt_snr(snr: float) -> str:
    return str(int(snr)) if float(snr).is_integer() else f"{snr:g}"


def output_name(utt_id: str, spec: EnvSpec) -> str:
    return f"{utt_id}__{spec.tag}.wav"


def apply_env(clip: AudioClip, spec: EnvSpec, bank: NoiseBank) -> AudioClip:
    if clip.sample_rate != bank.sample_rate:
        raise AudioError(f"clip at {clip.sample_rate} Hz, noise bank at {bank.sample_rate} Hz")
    if clip.duration < MIN_CLIP_S:
        raise AudioError(f"clip of {clip.duration * 1000:.0f} ms is shorter than {MIN_CLIP_S * 1000:.0f} ms")
    pool = bank.category(spec.category)
    if not pool:
        raise NoiseBankError(f"noise bank has no {spec.category} clips")

    rng = np.random.default_rng(spec.seed)
    entry = pool[int(rng.integers(len(pool)))]
    n = len(clip)

    if spec.position == "St":
        half = n // 2
        noise = loop_or_truncate(entry.clip, half)
        envelope = np.linspace(1.0, 0.0, half)
        return mix_at_snr(clip, noise, ONSET_SNR_DB, offset=0, envelope=envelope)

    if spec.length == "Co":
        seg_len, offset = n, 0
    elif spec.length == "Me":
        seg_len = n // 2
        offset = (n - seg_len) // 2
    else:
        seg_len = min(int(round(SHORT_MAX_S * clip.sample_rate)), int(round(SHORT_FRACTION * n)))
        offset = int(rng.integers(0, n - seg_len + 1))
    noise = loop_or_truncate(entry.clip, seg_len)
    return mix_at_snr(clip, noise, spec.snr_db, offset=offset)


def enumerate_env_grid(clip_id: str, seed: int = 0, extended: bool = False) -> list[EnvSpec]:
    """Specs for one utterance: per category one ``St`` and ``Co`` at 20/10/0 dB.

    ``extended`` appends the ``Sh``/``Me`` continuous placements at each SNR.
    Per-spec seeds depend only on ``(seed, clip_id, spec tag)``.
    """
    specs = []
    for cat in CATEGORIES:
        specs.append(EnvSpec(cat, "St", None, "Co"))
        specs.extend(EnvSpec(cat, "Co", snr, "Co") for snr in GRID_SNRS)
    if extended:
        for cat in CATEGORIES:
            for length in ("Me", "Sh"):
                specs.extend(EnvSpec(cat, "Co", snr, length) for snr in GRID_SNRS)
    return [replace(s, seed=derive_seed(seed, clip_id, s.tag)) for s in specs]

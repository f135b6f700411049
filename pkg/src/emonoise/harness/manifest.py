"""Corpus manifests: one JSON object per line describing an utterance."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping

from ..classifier.labels import LEVELS, EmotionLabel

FIELDS = ("utt_id", "wav", "speaker", "gender", "session", "act_bin", "val_bin", "dur_s", "align")
GENDERS = ("M", "F")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    wav: str
    speaker: str
    gender: str
    session: str
    act_bin: str
    val_bin: str
    dur_s: float
    align: str | None = None

    def __post_init__(self):
        if self.act_bin not in LEVELS or self.val_bin not in LEVELS:
            raise ManifestError(f"{self.utt_id}: bins must be in {LEVELS}, got {self.act_bin!r}/{self.val_bin!r}")
        if not self.dur_s > 0:
            raise ManifestError(f"{self.utt_id}: duration must be positive, got {self.dur_s}")
        if self.gender not in GENDERS:
            raise ManifestError(f"{self.utt_id}: gender must be one of {GENDERS}, got {self.gender!r}")

    @property
    def label(self) -> EmotionLabel:
        return EmotionLabel(self.act_bin, self.val_bin)

    @property
    def cell(self) -> tuple[str, str]:
        return (self.act_bin, self.val_bin)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> UtteranceRecord:
        missing = [f for f in FIELDS[:-1] if f not in d]
        if missing:
            raise ManifestError(f"record {d.get('utt_id', '?')!r} missing fields: {', '.join(missing)}")
        return cls(
            str(d["utt_id"]),
            str(d["wav"]),
            str(d["speaker"]),
            str(d["gender"]),
            str(d["session"]),
            str(d["act_bin"]),
            str(d["val_bin"]),
            float(d["dur_s"]),
            d.get("align"),
        )


def check_consistency(records: Iterable[UtteranceRecord]) -> None:
    """Unique utterance ids and one gender per speaker."""
    seen: set[str] = set()
    gender: dict[str, str] = {}
    for r in records:
        if r.utt_id in seen:
            raise ManifestError(f"duplicate utterance id {r.utt_id!r}")
        seen.add(r.utt_id)
        if gender.setdefault(r.speaker, r.gender) != r.gender:
            raise ManifestError(f"speaker {r.speaker!r} listed with genders {gender[r.speaker]} and {r.gender}")


def read_manifest(path: str | Path) -> list[UtteranceRecord]:
    """Parse a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            rec = UtteranceRecord.from_dict(d)
        except (json.JSONDecodeError, ValueError, TypeError) as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
        wav = Path(rec.wav)
        align = rec.align
        if not wav.is_absolute():
            wav = base / wav
        if align and not Path(align).is_absolute():
            align = str(base / align)
        records.append(UtteranceRecord(**{**rec.to_dict(), "wav": str(wav), "align": align}))
    check_consistency(records)
    return records


def write_manifest(rows: Iterable[UtteranceRecord | Mapping], path: str | Path) -> None:
    lines = []
    for r in rows:
        d = r.to_dict() if isinstance(r, UtteranceRecord) else dict(r)
        lines.append(json.dumps(d, sort_keys=True))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))

"""
Human-perception reference data, annotation aggregation and recipe linting.

The built-in table records, per transform, the fraction of noisy samples
whose majority-vote label was "different" on activation and on valence, and
whether the transform is perception-changing. Ratios are only published for
the changing transforms; preserving ones carry a verdict alone.
"""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .env import CATEGORIES, EnvSpec
from .recipe import spec_to_dict
from .synth.transforms import MAX_SEGMENT_FRACTION, SYNTH_KINDS, SynthSpec

PRESERVING = "preserving"
CHANGING = "changing"
CHANGING_KINDS = frozenset({"FillerS", "FillerL", "Laugh", "Cry", "SpeedUtt", "Pitch"})
MAX_UTTERANCE_SPEED_CHANGE = 0.05


@dataclass(frozen=True)
class PerceptionEntry:
    kind: str
    variant: str
    act_change_ratio: float | None
    val_change_ratio: float | None
    verdict: str
    direction_notes: str = ""

    def __post_init__(self):
        for r in (self.act_change_ratio, self.val_change_ratio):
            if r is not None and not 0.0 <= r <= 1.0:
                raise ValueError(f"{self.kind}: change ratio {r} outside [0, 1]")
        if self.verdict not in (PRESERVING, CHANGING):
            raise ValueError(f"{self.kind}: verdict must be {PRESERVING!r} or {CHANGING!r}")


_ENV_NOTE = "background noise, even when loud, is masked by listeners"

_TABLE = (
    PerceptionEntry("Nat", "", None, None, PRESERVING, _ENV_NOTE),
    PerceptionEntry("Hum", "", None, None, PRESERVING, _ENV_NOTE),
    PerceptionEntry("Int", "", None, None, PRESERVING, _ENV_NOTE),
    PerceptionEntry("SpeedSeg", "", None, None, PRESERVING),
    PerceptionEntry("FadeIn", "", None, None, PRESERVING),
    PerceptionEntry("FadeOut", "", None, None, PRESERVING),
    PerceptionEntry("DropW", "", None, None, PRESERVING),
    PerceptionEntry("DropLt", "", None, None, PRESERVING),
    PerceptionEntry("Reverb", "", None, None, PRESERVING),
    PerceptionEntry("FillerS", "", 0.06, 0.03, CHANGING),
    PerceptionEntry("FillerL", "", 0.10, 0.06, CHANGING),
    PerceptionEntry("Laugh", "", 0.16, 0.17, CHANGING, "raises perceived activation and valence"),
    PerceptionEntry("Cry", "", 0.20, 0.22, CHANGING, "raises perceived activation, lowers valence"),
    PerceptionEntry("SpeedUtt", "1.25x", 0.13, 0.03, CHANGING, "faster speech raises perceived activation"),
    PerceptionEntry("SpeedUtt", "0.75x", 0.28, 0.06, CHANGING, "slower speech lowers perceived activation"),
    PerceptionEntry("Pitch", "1.25x", 0.22, 0.07, CHANGING, "higher pitch raises perceived activation"),
    PerceptionEntry("Pitch", "0.75x", 0.29, 0.10, CHANGING, "lower pitch lowers perceived activation"),
)


def builtin_perception_table() -> list[PerceptionEntry]:
    return list(_TABLE)


def verdict_for_kind(kind: str) -> str:
    return CHANGING if kind in CHANGING_KINDS else PRESERVING


def lookup(kind: str, variant: str = "", table: Sequence[PerceptionEntry] | None = None) -> PerceptionEntry:
    """Find the entry for ``kind``; multi-variant kinds need ``variant`` (e.g. ``"0.75x"``)."""
    table = _TABLE if table is None else table
    matches = [e for e in table if e.kind == kind]
    if not matches:
        raise KeyError(f"no perception entry for {kind!r}")
    if len(matches) == 1 and not variant:
        return matches[0]
    for e in matches:
        if e.variant == variant:
            return e
    raise KeyError(f"no perception entry for {kind!r} variant {variant!r}")


def lookup_spec(spec: EnvSpec | SynthSpec, table: Sequence[PerceptionEntry] | None = None) -> PerceptionEntry:
    if isinstance(spec, EnvSpec):
        return lookup(spec.category, table=table)
    if spec.kind in ("SpeedUtt", "Pitch"):
        value = float(spec.param("rate" if spec.kind == "SpeedUtt" else "ratio", 1.25))
        try:
            return lookup(spec.kind, f"{value:g}x", table)
        except KeyError:
            pass
        return next(e for e in (table or _TABLE) if e.kind == spec.kind)
    return lookup(spec.kind, table=table)


def export_table_csv(entries: Iterable[PerceptionEntry], path: str | Path | None = None) -> str:
    """CSV with columns kind, variant, act_ratio, val_ratio, verdict."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "variant", "act_ratio", "val_ratio", "verdict"])
    for e in entries:
        w.writerow(
            [
                e.kind,
                e.variant,
                "" if e.act_change_ratio is None else f"{e.act_change_ratio:.2f}",
                "" if e.val_change_ratio is None else f"{e.val_change_ratio:.2f}",
                e.verdict,
            ]
        )
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def import_table_csv(path: str | Path) -> list[PerceptionEntry]:
    with open(path, newline="") as fh:
        return [
            PerceptionEntry(
                row["kind"],
                row["variant"],
                float(row["act_ratio"]) if row["act_ratio"] else None,
                float(row["val_ratio"]) if row["val_ratio"] else None,
                row["verdict"],
            )
            for row in csv.DictReader(fh)
        ]


# ------------------------------------------------------------- annotations


@dataclass(frozen=True)
class WorkerResponse:
    """One worker's judgement of an (original, noisy) pair.

    ``act_same``/``val_same`` optionally record the per-axis answers; when
    absent they default to the overall answer. SAM scores (1-5) are given
    only when the worker answered "different".
    """

    same: bool
    activation: int | None = None
    valence: int | None = None
    act_same: bool | None = None
    val_same: bool | None = None

    def __post_init__(self):
        for v in (self.activation, self.valence):
            if v is not None and v not in (1, 2, 3, 4, 5):
                raise ValueError(f"SAM score must be in 1..5, got {v!r}")


@dataclass(frozen=True)
class AnnotationTriple:
    pair_id: str
    responses: tuple[WorkerResponse, WorkerResponse, WorkerResponse]
    kind: str = ""
    variant: str = ""

    def __post_init__(self):
        if len(self.responses) != 3:
            raise ValueError(f"{self.pair_id}: expected exactly three responses, got {len(self.responses)}")


@dataclass(frozen=True)
class AggregateLabel:
    verdict: str  # "same" | "different"
    mean_act: float | None
    mean_val: float | None


def _majority(votes: Iterable[bool]) -> bool:
    votes = list(votes)
    return sum(votes) * 2 > len(votes)


def aggregate_annotations(t: AnnotationTriple) -> AggregateLabel:
    """Majority same/different vote; scores averaged over workers who gave them."""
    different = _majority(not r.same for r in t.responses)
    if not different:
        return AggregateLabel("same", None, None)
    acts = [r.activation for r in t.responses if r.activation is not None]
    vals = [r.valence for r in t.responses if r.valence is not None]
    return AggregateLabel(
        "different",
        sum(acts) / len(acts) if acts else None,
        sum(vals) / len(vals) if vals else None,
    )


def _response_from_dict(d: Mapping) -> WorkerResponse:
    if "same" in d:
        same = bool(d["same"])
    else:
        verdict = d.get("verdict")
        if verdict not in ("same", "different"):
            raise ValueError(f"response needs 'same' or verdict same|different, got {d!r}")
        same = verdict == "same"
    return WorkerResponse(
        same,
        d.get("activation"),
        d.get("valence"),
        d.get("act_same"),
        d.get("val_same"),
    )


def read_annotations(path: str | Path) -> list[AnnotationTriple]:
    """JSON-lines: ``{"pair_id", "kind"?, "variant"?, "responses": [3 x response]}``."""
    triples = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        d = json.loads(line)
        try:
            responses = tuple(_response_from_dict(r) for r in d["responses"])
            triples.append(AnnotationTriple(str(d["pair_id"]), responses, d.get("kind", ""), d.get("variant", "")))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return triples


def perception_table_from_annotations(
    triples: Iterable[AnnotationTriple], changing_threshold: float = 0.05
) -> list[PerceptionEntry]:
    """Per-(kind, variant) change ratios from a new annotation study.

    An axis counts as changed for a pair when the majority of workers said it
    differs. A transform is "changing" when either ratio exceeds
    ``changing_threshold``.
    """
    groups: dict[tuple[str, str], list[tuple[bool, bool]]] = defaultdict(list)
    for t in triples:
        act = _majority(not (r.same if r.act_same is None else r.act_same) for r in t.responses)
        val = _majority(not (r.same if r.val_same is None else r.val_same) for r in t.responses)
        groups[(t.kind, t.variant)].append((act, val))
    entries = []
    for (kind, variant), flags in sorted(groups.items()):
        act_r = sum(a for a, _ in flags) / len(flags)
        val_r = sum(v for _, v in flags) / len(flags)
        verdict = CHANGING if max(act_r, val_r) > changing_threshold else PRESERVING
        entries.append(PerceptionEntry(kind, variant, round(act_r, 6), round(val_r, 6), verdict))
    return entries


# ------------------------------------------------------------- recipe lint


@dataclass(frozen=True)
class Finding:
    severity: str  # error | warn | ok
    rule: str
    message: str
    index: int = -1


def _changing(rule: str, msg: str, allow: bool, index: int) -> Finding:
    if allow:
        return Finding("warn", rule, msg + " (allowed by override)", index)
    return Finding("error", rule, msg + "; pass the allow-perception-changing override to use it", index)


def _lint_one(d: Mapping, index: int, allow: bool, denoise: bool) -> list[Finding]:
    kind = d.get("type")
    if kind == "env":
        cat = d.get("category")
        if cat not in CATEGORIES:
            return [Finding("error", "known-kind", f"unknown environmental category {cat!r}", index)]
        return [Finding("ok", "environmental-noise", f"{cat} background noise keeps perceived emotion", index)]
    if kind != "synth":
        return [Finding("error", "known-kind", f"unknown transform type {kind!r}", index)]

    k = d.get("kind")
    params = d.get("params", {}) or {}
    if k not in SYNTH_KINDS:
        return [Finding("error", "known-kind", f"unknown synthetic transform {k!r}", index)]

    findings = []
    if k == "SpeedSeg":
        frac = float(params.get("fraction", MAX_SEGMENT_FRACTION))
        if frac > MAX_SEGMENT_FRACTION:
            findings.append(
                Finding(
                    "error",
                    "segment-length",
                    f"sped-up segment covers {frac:.0%} of the utterance; keep it at or below 25%",
                    index,
                )
            )
    elif k == "SpeedUtt":
        rate = float(params.get("rate", 1.25))
        change = abs(rate - 1.0)
        msg = f"whole-utterance speed change of {change:.0%}"
        if change > MAX_UTTERANCE_SPEED_CHANGE:
            msg += " exceeds the 5% limit and alters perceived emotion"
        else:
            msg += " is within 5%, but SpeedUtt is a perception-changing transform"
        findings.append(_changing("utterance-speed", msg, allow, index))
    elif k in ("FillerS", "FillerL"):
        findings.append(_changing("no-pauses-or-fillers", "inserted fillers and pauses alter perceived emotion", allow, index))
    elif k in ("Laugh", "Cry"):
        findings.append(
            _changing("no-emotive-events", f"{k.lower()} sounds elicit emotional behaviour and alter perception", allow, index)
        )
    elif k == "Pitch":
        findings.append(_changing("perception-changing", "pitch shifting alters perceived activation", allow, index))

    if denoise and k in ("SpeedSeg", "FadeIn", "FadeOut", "DropW", "DropLt"):
        findings.append(
            Finding("warn", "no-denoise-synthetic", f"{k} samples lose emotional content when denoised", index)
        )
    if not findings:
        findings.append(Finding("ok", "perception-preserving", f"{k} keeps perceived emotion", index))
    return findings


def lint_recipe(
    recipe: Sequence[EnvSpec | SynthSpec | Mapping],
    allow_perception_changing: bool = False,
    denoise: bool = False,
) -> list[Finding]:
    """Check a recipe against the perception-grounded augmentation guidance.

    Accepts parsed specs or their raw dict form, so malformed or unknown
    entries become ``error`` findings instead of exceptions.
    """
    findings = []
    for i, spec in enumerate(recipe):
        d = spec_to_dict(spec) if isinstance(spec, (EnvSpec, SynthSpec, Mapping)) else {"type": None}
        findings.extend(_lint_one(d, i, allow_perception_changing, denoise))
    return findings


def lint_passes(findings: Iterable[Finding]) -> bool:
    return not any(f.severity == "error" for f in findings)

"""
Query-budgeted, noise-based decision-boundary attack.

For each sample the attack first probes candidate noise kinds at the most
aggressive SNR of the grid. When a probe flips the classifier's decision it
bisects over the grid indices, with the same noise sound, for the highest
SNR that still flips. The attack succeeds when such a flip is found above
``success_min_snr`` within ``k`` queries. Probing cycles through the kinds
with fresh random sounds until the budget runs out.

Every ``classify`` call, including failed ones, costs one query. The clean
decision is taken once per sample outside the budget.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import reference_data
from .audio import AudioClip, loop_or_truncate, mix_at_snr
from .classifier.handles import ClassifierError, ClassifierHandle
from .env import CATEGORIES, NoiseBank
from .perception import CHANGING, builtin_perception_table
from .seeding import rng_for
from .synth.alignment import Alignment
from .synth.transforms import NEEDS_ALIGNMENT, EventBank, SynthContext, SynthSpec, apply_synth

DEFAULT_SNR_GRID = (0.0, 5.0, 10.0, 12.0, 15.0, 20.0)
DEFAULT_BUDGETS = (5, 15, 25)
SUCCESS_MIN_SNR_DB = 10.0
EVENT_KINDS = ("Laugh", "Cry")
ADDITIVE_KINDS = CATEGORIES + EVENT_KINDS
CONDITIONS = ((False, False), (True, False), (False, True), (True, True))


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class DegradationOrdering:
    """Noise kinds ranked by expected damage to the classifier, worst first."""

    ranking: tuple[str, ...]

    def order(self, kinds: Sequence[str]) -> list[str]:
        """Sort ``kinds`` by rank; unranked kinds keep their order at the end."""
        pos = {k: i for i, k in enumerate(self.ranking)}
        return sorted(kinds, key=lambda k: (pos.get(k, len(pos)), list(kinds).index(k)))

    @classmethod
    def from_degradation(cls, damage: Mapping[str, float]) -> DegradationOrdering:
        """Rank by magnitude of UAR change, largest first (ties by name)."""
        return cls(tuple(sorted(damage, key=lambda k: (-abs(damage[k]), k))))

    @classmethod
    def from_experiment(cls, results: Mapping) -> DegradationOrdering:
        """Rank kinds by mean |ΔUAR| over their rows in an experiment results dict."""
        acc: dict[str, list[float]] = {}
        for row in results["rows"]:
            for a in results["axes"]:
                d = row.get(f"delta_{a}")
                if d is not None:
                    acc.setdefault(row["kind"], []).append(abs(d))
        return cls.from_degradation({k: float(np.mean(v)) for k, v in acc.items()})


def default_ordering() -> DegradationOrdering:
    """Ranking from the published degradation magnitudes.

    Kinds without published degradations (the perception-changing ones)
    follow in table order.
    """
    ranked = DegradationOrdering.from_degradation(reference_data.mean_degradation_by_group()).ranking
    rest = [e.kind for e in builtin_perception_table() if e.kind not in ranked]
    return DegradationOrdering(ranked + tuple(dict.fromkeys(rest)))


@dataclass(frozen=True)
class AttackConfig:
    k: int = 25
    corr: bool = False
    eval_perception: bool = True
    snr_grid: tuple[float, ...] = DEFAULT_SNR_GRID
    success_min_snr: float = SUCCESS_MIN_SNR_DB
    seed: int = 0
    ordering: DegradationOrdering | None = None
    kinds: tuple[str, ...] | None = None
    non_additive: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise AttackError(f"query budget k must be at least 1, got {self.k}")
        grid = tuple(float(s) for s in self.snr_grid)
        if not grid or list(grid) != sorted(set(grid)):
            raise AttackError(f"snr_grid must be strictly increasing, got {self.snr_grid}")
        object.__setattr__(self, "snr_grid", grid)


@dataclass
class NoiseSources:
    bank: NoiseBank | None = None
    events: EventBank | None = None

    def additive_kinds(self) -> list[str]:
        kinds = []
        if self.bank is not None:
            kinds += [c for c in CATEGORIES if self.bank.category(c)]
        if self.events is not None:
            kinds += [k for k in EVENT_KINDS if self.events.events(k)]
        return kinds

    def sounds(self, kind: str) -> list[tuple[str, AudioClip]]:
        if kind in CATEGORIES:
            return [(e.clip_id, e.clip) for e in self.bank.category(kind)]
        clips = self.events.events(kind)
        return [(f"{kind.lower()}{i}", c) for i, c in enumerate(clips)]


def allowed_noises(cfg: AttackConfig) -> list[str]:
    """Kinds the attacker may use: perception-preserving only when ``eval_perception``."""
    kinds = list(dict.fromkeys(e.kind for e in builtin_perception_table()))
    if cfg.eval_perception:
        changing = {e.kind for e in builtin_perception_table() if e.verdict == CHANGING}
        kinds = [k for k in kinds if k not in changing]
    if cfg.kinds is not None:
        kinds = [k for k in kinds if k in cfg.kinds]
    if not kinds:
        raise AttackError("no noise kinds allowed under this configuration")
    return kinds


def candidate_kinds(cfg: AttackConfig, sources: NoiseSources, has_alignment: bool = False) -> list[str]:
    usable = set(sources.additive_kinds())
    if cfg.non_additive:
        usable |= {
            k for k in ("Reverb", "SpeedSeg", "FadeIn", "FadeOut", "DropW", "DropLt")
            if has_alignment or k not in NEEDS_ALIGNMENT
        }
    kinds = [k for k in allowed_noises(cfg) if k in usable]
    if not kinds:
        raise AttackError("none of the allowed noise kinds has sounds available")
    return kinds


def perturb(clip: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    """Add ``noise`` (looped or cut to the clip length) over the whole clip at ``snr_db``."""
    return mix_at_snr(clip, loop_or_truncate(noise, len(clip)), snr_db)


@dataclass(frozen=True)
class TraceEntry:
    query: int
    noise_kind: str
    sound_id: str
    snr_db: float
    decision: str | None
    error: str | None = None


@dataclass(frozen=True)
class Search:
    """One probe and the bisection that followed it, if any."""

    noise_kind: str
    sound_id: str
    flipped: bool
    best_snr_db: float | None


@dataclass
class AttackResult:
    utterance_id: str
    success: bool
    queries_used: int
    achieved_snr_db: float | None
    noise_kind: str | None
    clean_decision: str
    final_decision: str | None = None
    trace: list[TraceEntry] = field(default_factory=list)
    searches: list[Search] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("achieved_snr_db",):
            if d[key] is not None and math.isinf(d[key]):
                d[key] = "inf"
        for t in d["trace"]:
            if math.isinf(t["snr_db"]):
                t["snr_db"] = "inf"
        return d


def success_within(result: AttackResult, k: int) -> bool:
    """Whether the same attack with budget ``k`` would have succeeded.

    The query sequence does not depend on the budget, so a run with a large
    budget answers every smaller one: success at ``k`` iff the success was
    found by query ``k``.
    """
    return result.success and result.queries_used <= k


class _Budget:
    def __init__(self, handle: ClassifierHandle, k: int, speaker: str | None, trace: list[TraceEntry]):
        self.handle, self.k, self.speaker, self.trace = handle, k, speaker, trace

    @property
    def left(self) -> int:
        return self.k - len(self.trace)

    def ask(self, clip: AudioClip, kind: str, sound: str, snr: float) -> str | None:
        q = len(self.trace) + 1
        try:
            decision = self.handle.decision(clip, self.speaker)
        except ClassifierError as exc:
            self.trace.append(TraceEntry(q, kind, sound, snr, None, f"{type(exc).__name__}: {exc}"))
            return None
        self.trace.append(TraceEntry(q, kind, sound, snr, decision))
        return decision


def run_attack(
    clip: AudioClip,
    clean_decision: str,
    handle: ClassifierHandle,
    cfg: AttackConfig,
    sources: NoiseSources,
    utterance_id: str = "",
    speaker: str | None = None,
    alignment: Alignment | None = None,
) -> AttackResult:
    """Attack one sample; ``clean_decision`` is the handle's answer on the clean clip."""
    kinds = candidate_kinds(cfg, sources, alignment is not None)
    rng = rng_for(cfg.seed, utterance_id, "attack")
    if cfg.corr:
        order = (cfg.ordering or default_ordering()).order(kinds)
    else:
        # permute every kind, then filter: conditions with fewer allowed kinds
        # see the same relative order
        every = list(dict.fromkeys(e.kind for e in builtin_perception_table()))
        order = [every[i] for i in rng.permutation(len(every)) if every[i] in kinds]

    trace: list[TraceEntry] = []
    budget = _Budget(handle, cfg.k, speaker, trace)
    searches: list[Search] = []
    grid = cfg.snr_grid
    best: tuple[float, str, str] | None = None

    def done(success: bool, snr=None, kind=None, decision=None) -> AttackResult:
        return AttackResult(utterance_id, success, len(trace), snr, kind, clean_decision, decision, trace, searches)

    rnd = 0
    while budget.left > 0:
        for kind in order:
            if budget.left <= 0:
                break
            if kind in ADDITIVE_KINDS:
                pool = sources.sounds(kind)
                pick = rng_for(cfg.seed, utterance_id, "sound", kind, rnd)
                sound_id, noise = pool[int(pick.integers(len(pool)))]
                decision = budget.ask(perturb(clip, noise, grid[0]), kind, sound_id, grid[0])
                if decision is None or decision == clean_decision:
                    searches.append(Search(kind, sound_id, False, None))
                    continue
                lo, hi, last = 0, len(grid), decision
                while hi - lo > 1 and budget.left > 0:
                    mid = (lo + hi) // 2
                    d = budget.ask(perturb(clip, noise, grid[mid]), kind, sound_id, grid[mid])
                    if d is not None and d != clean_decision:
                        lo, last = mid, d
                    else:
                        hi = mid
                searches.append(Search(kind, sound_id, True, grid[lo]))
                if grid[lo] > cfg.success_min_snr:
                    return done(True, grid[lo], kind, last)
                if best is None or grid[lo] > best[0]:
                    best = (grid[lo], kind, last)
            else:
                if rnd > 0:
                    continue  # one fixed parameterization per non-additive kind
                spec = SynthSpec(kind, seed=rng_for(cfg.seed, utterance_id, "edit", kind).integers(2**31).item())
                edited = apply_synth(clip, spec, SynthContext(alignment=alignment))
                decision = budget.ask(edited, kind, spec.tag, math.inf)
                flipped = decision is not None and decision != clean_decision
                searches.append(Search(kind, spec.tag, flipped, math.inf if flipped else None))
                if flipped:
                    return done(True, math.inf, kind, decision)
        rnd += 1
        if not any(k in ADDITIVE_KINDS for k in order):
            break
    if best is not None:
        return AttackResult(utterance_id, False, len(trace), None, best[1], clean_decision, best[2], trace, searches)
    return done(False)


@dataclass(frozen=True)
class AttackSample:
    utterance_id: str
    clip: AudioClip
    speaker: str | None = None
    alignment: Alignment | None = None


def _clean_decisions(samples: Sequence[AttackSample], handle: ClassifierHandle) -> list[str]:
    return [handle.decision(s.clip, s.speaker) for s in samples]


def attack_all(
    samples: Sequence[AttackSample],
    handle: ClassifierHandle,
    cfg: AttackConfig,
    sources: NoiseSources,
    clean: Sequence[str] | None = None,
    jobs: int = 1,
) -> list[AttackResult]:
    clean = list(clean) if clean is not None else _clean_decisions(samples, handle)

    def one(i):
        s = samples[i]
        return run_attack(s.clip, clean[i], handle, cfg, sources, s.utterance_id, s.speaker, s.alignment)

    idx = range(len(samples))
    if jobs <= 1:
        return [one(i) for i in idx]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, idx))


def estimate_pif(
    samples: Sequence[AttackSample],
    handle: ClassifierHandle,
    cfg: AttackConfig,
    sources: NoiseSources,
    budgets: Sequence[int] = DEFAULT_BUDGETS,
    clean: Sequence[str] | None = None,
    jobs: int = 1,
) -> tuple[dict[int, float], list[AttackResult]]:
    """Fraction of samples attacked successfully within each budget.

    One run at the largest budget serves all budgets (see
    :func:`success_within`).
    """
    if not samples:
        raise AttackError("need at least one sample")
    results = attack_all(samples, handle, replace(cfg, k=max(budgets)), sources, clean, jobs)
    pif = {int(k): sum(success_within(r, k) for r in results) / len(results) for k in sorted(budgets)}
    return pif, results


def run_conditions(
    samples: Sequence[AttackSample],
    handle: ClassifierHandle,
    base: AttackConfig,
    sources: NoiseSources,
    budgets: Sequence[int] = DEFAULT_BUDGETS,
    conditions: Sequence[tuple[bool, bool]] = CONDITIONS,
    jobs: int = 1,
) -> dict:
    """P_IF for every (corr, eval) condition, as a results dict."""
    clean = _clean_decisions(samples, handle)
    rows, per_sample = [], {}
    for corr, ev in conditions:
        cfg = replace(base, corr=corr, eval_perception=ev)
        pif, results = estimate_pif(samples, handle, cfg, sources, budgets, clean, jobs)
        rows.append({"corr": corr, "eval": ev, "pif": {str(k): round(v, 6) for k, v in pif.items()}})
        per_sample[f"corr={int(corr)},eval={int(ev)}"] = [r.to_dict() for r in results]
    ordering = base.ordering or default_ordering()
    return {
        "kind": "attack",
        "seed": base.seed,
        "snr_grid": list(base.snr_grid),
        "success_min_snr": base.success_min_snr,
        "target_axis": handle.target_axis,
        "ordering": list(ordering.ranking),
        "clean_decisions": dict(zip((s.utterance_id for s in samples), clean)),
        "summary": {"budgets": [int(k) for k in sorted(budgets)], "rows": rows},
        "results": per_sample,
        "reference": {
            "pif": [
                {"corr": c, "eval": e, "pif": {str(k): v for k, v in reference_data.ATTACK_PIF[(c, e)].items()}}
                for c, e in CONDITIONS
            ]
        },
    }


def summary_csv(results: Mapping) -> str:
    budgets = results["summary"]["budgets"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["corr", "eval"] + [f"k={k}" for k in budgets])
    for row in results["summary"]["rows"]:
        w.writerow([row["corr"], row["eval"]] + [f"{row['pif'][str(k)]:.4f}" for k in budgets])
    return buf.getvalue()


def write_attack_report(results: Mapping, out_dir: str | Path) -> Path:
    from .harness.report import render_attack_markdown

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(json.dumps(results, sort_keys=True, indent=2) + "\n")
    (out / "summary.csv").write_text(summary_csv(results))
    (out / "results.md").write_text(render_attack_markdown(results))
    return out


def measure_kind_damage(
    samples: Sequence[AttackSample],
    handle: ClassifierHandle,
    sources: NoiseSources,
    kinds: Sequence[str],
    snr_db: float = 12.0,
    seed: int = 0,
) -> dict[str, float]:
    """Fraction of decisions each additive kind flips at ``snr_db``.

    Meant for calibration samples kept apart from the attacked ones; the
    result feeds :meth:`DegradationOrdering.from_degradation`. The default
    level is the first grid SNR that counts as a success, since damage at
    0 dB says little about flips at low perturbation.
    """
    clean = _clean_decisions(samples, handle)
    damage = {}
    for kind in kinds:
        pool = sources.sounds(kind)
        flips = 0
        for s, c in zip(samples, clean):
            rng = rng_for(seed, s.utterance_id, "calibrate", kind)
            _, noise = pool[int(rng.integers(len(pool)))]
            flips += handle.decision(perturb(s.clip, noise, snr_db), s.speaker) != c
        damage[kind] = flips / len(samples)
    return damage

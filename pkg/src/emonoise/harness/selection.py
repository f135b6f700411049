"""Stratified sample selection and speaker-independent folds."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from ..classifier.labels import LEVELS
from ..seeding import rng_for
from .manifest import UtteranceRecord

EXTREME_FRACTION = 0.30


class SelectionError(ValueError):
    pass


def duration_quartiles(records: Sequence[UtteranceRecord]) -> tuple[float, float]:
    q1, q3 = np.percentile([r.dur_s for r in records], [25, 75])
    return float(q1), float(q3)


def is_extreme(rec: UtteranceRecord, q1: float, q3: float) -> bool:
    return rec.dur_s < q1 or rec.dur_s > q3


def select_stratified_samples(
    records: Sequence[UtteranceRecord], n_per_cell: int = 100, seed: int = 0
) -> list[UtteranceRecord]:
    """Pick ``n_per_cell`` utterances from each activation x valence cell.

    Within a cell, ``round(0.3 * n)`` come from outside the corpus-wide
    duration interquartile range and the rest from inside it, with exactly
    half male and half female speakers in each of those two groups (one
    sample of slack when a group size is odd).

    Raises:
        SelectionError: a cell cannot meet the constraints; the message names
            the cell and how many candidates are missing.
    """
    if n_per_cell < 2 or n_per_cell % 2:
        raise SelectionError(f"n_per_cell must be a positive even number, got {n_per_cell}")
    if not records:
        raise SelectionError("empty manifest")
    q1, q3 = duration_quartiles(records)
    n_ext = int(round(EXTREME_FRACTION * n_per_cell))
    n_mid = n_per_cell - n_ext
    # split each duration group between genders so the cell total is exactly balanced
    half = n_per_cell // 2
    ext_m = n_ext // 2
    quota = {("ext", "M"): ext_m, ("ext", "F"): n_ext - ext_m, ("mid", "M"): half - ext_m}
    quota[("mid", "F")] = n_mid - quota[("mid", "M")]

    chosen: list[UtteranceRecord] = []
    problems = []
    for act, val in product(LEVELS, LEVELS):
        cell = [r for r in records if r.cell == (act, val)]
        rng = rng_for(seed, "select", act, val)
        picked = []
        for (group, gender), need in quota.items():
            pool = [r for r in cell if r.gender == gender and (is_extreme(r, q1, q3) == (group == "ext"))]
            pool.sort(key=lambda r: r.utt_id)
            if len(pool) < need:
                problems.append(
                    f"cell act={act}/val={val}: need {need} {'extreme' if group == 'ext' else 'mid'}-length "
                    f"{gender} samples, have {len(pool)} (short by {need - len(pool)})"
                )
                continue
            idx = rng.permutation(len(pool))[:need]
            picked.extend(pool[i] for i in sorted(idx))
        chosen.extend(sorted(picked, key=lambda r: r.utt_id))
    if problems:
        raise SelectionError("infeasible selection: " + "; ".join(problems))
    return chosen


@dataclass(frozen=True)
class Fold:
    train: frozenset[str]
    val: frozenset[str]
    test: frozenset[str]

    def check(self) -> None:
        if self.train & self.val or self.train & self.test or self.val & self.test:
            raise AssertionError("speaker appears in more than one role within a fold")


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]
    speakers: tuple[str, ...]

    @property
    def k(self) -> int:
        return len(self.folds)

    def check(self) -> None:
        for f in self.folds:
            f.check()
            if f.train | f.val | f.test != set(self.speakers):
                raise AssertionError("fold does not cover every speaker")

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "folds": [{"train": sorted(f.train), "val": sorted(f.val), "test": sorted(f.test)} for f in self.folds],
        }


def make_folds(records: Sequence[UtteranceRecord], k: int = 5, seed: int = 0) -> FoldPlan:
    """Speaker-disjoint folds: fold i tests on group i and validates on group i+1.

    Speakers are shuffled per gender and dealt round-robin so that groups
    differ by at most one speaker and mix genders where possible.
    """
    if k < 3:
        raise SelectionError(f"need k >= 3 for disjoint train/val/test groups, got {k}")
    gender = {r.speaker: r.gender for r in records}
    speakers = sorted(gender)
    if len(speakers) < k:
        raise SelectionError(f"{len(speakers)} speakers cannot fill {k} speaker-independent folds")
    rng = rng_for(seed, "folds")
    ordered = []
    for g in sorted(set(gender.values())):
        group = [s for s in speakers if gender[s] == g]
        ordered.extend(group[i] for i in rng.permutation(len(group)))
    groups: list[list[str]] = [[] for _ in range(k)]
    for i, spk in enumerate(ordered):
        groups[i % k].append(spk)
    folds = []
    for i in range(k):
        test = frozenset(groups[i])
        val = frozenset(groups[(i + 1) % k])
        train = frozenset(speakers) - test - val
        folds.append(Fold(train, val, test))
    plan = FoldPlan(tuple(folds), tuple(speakers))
    plan.check()
    return plan

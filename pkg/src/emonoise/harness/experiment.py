"""
Robustness experiments over a manifest.

Three modes:

* ``noisy-test``: train on clean data per fold, test on clean and on every
  noise variant of the test speakers.
* ``leave-one-noise-out``: additionally, for each noise kind, train on clean
  data plus every other kind's variants and test on the held-out kind.
* ``denoise-then-test``: like ``noisy-test``, then pass each noisy test file
  through an external denoiser command before classification.

Per-speaker feature normalization always uses statistics fitted on that
speaker's clean recordings, so noisy test data never leaks into the
statistics.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .. import reference_data
from ..audio import AudioClip, AudioError, read_wav, write_wav
from ..classifier.handles import ClassifierError, ClassifierHandle, featurize
from ..classifier.labels import AXES, EmotionLabel
from ..classifier.model import ReferenceModel, TrainConfig, train_reference
from ..env import EnvSpec, NoiseBank, apply_env, enumerate_env_grid
from ..errors import ConfigError
from ..features import SpeakerStats, extract_mfb, fit_speaker_stats
from ..recipe import AugmentationSpec
from ..seeding import derive_seed
from ..synth.alignment import Alignment, load_alignment
from ..synth.transforms import EventBank, SynthContext, apply_synth
from .manifest import UtteranceRecord
from .metrics import compute_uar, confusion_matrix
from .selection import make_folds

MODES = ("noisy-test", "leave-one-noise-out", "denoise-then-test")
CLEAN = "clean"


def noise_kind(spec: AugmentationSpec) -> str:
    """Grouping key for leave-one-noise-out: env category or synthetic kind."""
    return spec.category if isinstance(spec, EnvSpec) else spec.kind


def default_noise_grid() -> tuple[EnvSpec, ...]:
    return tuple(enumerate_env_grid("grid"))


@dataclass
class ExperimentConfig:
    mode: str = "noisy-test"
    noise_grid: Sequence[AugmentationSpec] = field(default_factory=default_noise_grid)
    folds: int = 5
    seed: int = 0
    denoiser: Sequence[str] | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    axes: Sequence[str] = AXES
    jobs: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if not self.noise_grid:
            raise ConfigError("noise_grid", "needs at least one noise variant")
        tags = [s.tag for s in self.noise_grid]
        if len(set(tags)) != len(tags):
            raise ConfigError("noise_grid", "contains duplicate variants")
        if self.mode == "leave-one-noise-out" and len({noise_kind(s) for s in self.noise_grid}) < 3:
            # one held out, at least two left to train on
            raise ConfigError("noise_grid", "leave-one-noise-out needs at least three noise kinds")
        if self.mode == "denoise-then-test":
            if not self.denoiser:
                raise ConfigError("denoiser", "denoise-then-test needs a denoiser command")
            joined = " ".join(self.denoiser)
            if "{in}" not in joined or "{out}" not in joined:
                raise ConfigError("denoiser", "command must contain {in} and {out} placeholders")


@dataclass
class Corpus:
    """Records plus the side inputs needed to render noise variants.

    ``clips`` and ``alignments`` hold in-memory data keyed by utterance id;
    without them audio and alignments are read from the record paths.
    """

    records: Sequence[UtteranceRecord]
    bank: NoiseBank | None = None
    events: EventBank | None = None
    clips: Mapping[str, AudioClip] | None = None
    alignments: Mapping[str, Alignment] | None = None

    def audio(self, rec: UtteranceRecord) -> AudioClip:
        if self.clips is not None:
            return self.clips[rec.utt_id]
        return read_wav(rec.wav)

    def alignment(self, rec: UtteranceRecord) -> Alignment | None:
        if self.alignments is not None:
            return self.alignments.get(rec.utt_id)
        return load_alignment(rec.align) if rec.align else None


def render_variant(corpus: Corpus, rec: UtteranceRecord, clip: AudioClip, spec: AugmentationSpec, seed: int) -> AudioClip:
    s = replace(spec, seed=derive_seed(seed, rec.utt_id, spec.tag))
    if isinstance(s, EnvSpec):
        if corpus.bank is None:
            raise ConfigError("noise_bank", "environmental variants need a noise bank")
        return apply_env(clip, s, corpus.bank)
    ctx = SynthContext(alignment=corpus.alignment(rec), events=corpus.events, speaker=rec.speaker)
    return apply_synth(clip, s, ctx)


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_denoiser(command: Sequence[str], clip: AudioClip, workdir: str) -> AudioClip:
    """Pipe ``clip`` through ``command`` (argv with ``{in}``/``{out}`` placeholders)."""
    fd, src = tempfile.mkstemp(suffix=".wav", dir=workdir)
    os.close(fd)
    dst = src[:-4] + ".out.wav"
    try:
        write_wav(clip, src)
        argv = [a.replace("{in}", src).replace("{out}", dst) for a in command]
        proc = subprocess.run(argv, capture_output=True, text=True)
        if proc.returncode != 0:
            raise RuntimeError(f"exit {proc.returncode}: {proc.stderr.strip()[:200]}")
        if not os.path.exists(dst):
            raise RuntimeError("denoiser wrote no output file")
        return read_wav(dst)
    finally:
        for p in (src, dst):
            if os.path.exists(p):
                os.unlink(p)


class _FeatureStore:
    """Pooled, speaker-normalized features keyed by (utt_id, variant tag)."""

    def __init__(self, corpus: Corpus, cfg: ExperimentConfig):
        self.corpus = corpus
        self.cfg = cfg
        self.recs = {r.utt_id: r for r in corpus.records}
        self.clean_clips = dict(zip(self.recs, _pmap(corpus.audio, list(corpus.records), cfg.jobs)))
        seqs = _pmap(
            lambda r: extract_mfb(self.clean_clips[r.utt_id], r.utt_id, r.speaker), list(corpus.records), cfg.jobs
        )
        self.stats: dict[str, SpeakerStats] = fit_speaker_stats(seqs)
        self.features: dict[tuple[str, str], np.ndarray] = {}
        self.failures: dict[tuple[str, str], str] = {}

    def ensure(self, keys: Iterable[tuple[str, str]], denoise: bool = False) -> None:
        todo = [k for k in dict.fromkeys(keys) if k not in self.features and k not in self.failures]
        specs = {s.tag: s for s in self.cfg.noise_grid}
        tmp = tempfile.TemporaryDirectory(prefix="emonoise-dn-") if denoise else None

        def work(key):
            utt, tag = key
            rec = self.recs[utt]
            clip = self.clean_clips[utt]
            try:
                base = tag.removeprefix("dn:")
                if base != CLEAN:
                    clip = render_variant(self.corpus, rec, clip, specs[base], self.cfg.seed)
                if tag.startswith("dn:"):
                    clip = run_denoiser(self.cfg.denoiser, clip, tmp.name)
                return featurize(clip, self.stats[rec.speaker]), None
            except (RuntimeError, AudioError, OSError) as exc:
                if not tag.startswith("dn:"):
                    raise
                return None, str(exc)

        try:
            for key, (feat, err) in zip(todo, _pmap(work, todo, self.cfg.jobs)):
                if err is None:
                    self.features[key] = feat
                else:
                    self.failures[key] = err
        finally:
            if tmp is not None:
                tmp.cleanup()

    def matrix(self, keys: Sequence[tuple[str, str]]) -> tuple[np.ndarray, list[tuple[str, str]]]:
        keep = [k for k in keys if k in self.features]
        return np.stack([self.features[k] for k in keep]), keep


def _labels(recs: Mapping[str, UtteranceRecord], keys: Sequence[tuple[str, str]]) -> list[EmotionLabel]:
    return [recs[u].label for u, _ in keys]


def _confusions(model: ReferenceModel, X, labels, axes) -> dict[str, np.ndarray]:
    pred = model.predict(X)
    return {a: confusion_matrix([lab.index(a) for lab in labels], pred[a]) for a in axes}


def _round(x):
    if isinstance(x, float):
        return round(x, 6)
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_round(v) for v in x]
    return x


@dataclass
class ReportBundle:
    results: dict
    confusions: dict[str, np.ndarray]
    provenance: dict

    def write(self, out_dir: str | Path) -> Path:
        from .report import write_bundle

        return write_bundle(self, out_dir)


class _Accumulator:
    def __init__(self, axes):
        self.axes = axes
        self.cm: dict[tuple[str, str, str], np.ndarray] = {}

    def add(self, run: str, variant: str, cms: Mapping[str, np.ndarray]) -> None:
        for a, cm in cms.items():
            key = (run, variant, a)
            self.cm[key] = self.cm.get(key, 0) + cm

    def uar(self, run: str, variant: str, axis: str) -> float | None:
        cm = self.cm.get((run, variant, axis))
        if cm is None:
            return None
        try:
            return compute_uar(cm)
        except ValueError:
            return None


def _delta(a: float | None, b: float | None) -> float | None:
    return None if a is None or b is None else a - b


def run_experiment(
    cfg: ExperimentConfig, corpus: Corpus, handle: ClassifierHandle | None = None
) -> ReportBundle:
    """Run ``cfg`` on ``corpus`` and collect UAR tables.

    With ``handle`` the given black-box classifier is evaluated as-is (no
    folds or training, so only ``noisy-test`` and ``denoise-then-test`` are
    possible). Otherwise a reference model is trained per fold.
    """
    if handle is not None:
        if cfg.mode == "leave-one-noise-out":
            raise ConfigError("mode", "leave-one-noise-out trains models and cannot use an external classifier")
        return _run_with_handle(cfg, corpus, handle)
    return _run_reference(cfg, corpus)


def _run_reference(cfg: ExperimentConfig, corpus: Corpus) -> ReportBundle:
    records = list(corpus.records)
    recs = {r.utt_id: r for r in records}
    plan = make_folds(records, cfg.folds, cfg.seed)
    store = _FeatureStore(corpus, cfg)
    grid = list(cfg.noise_grid)
    tags = [s.tag for s in grid]
    variants = {s.tag: s.variant for s in grid}
    acc = _Accumulator(cfg.axes)
    provenance: dict = {"folds": plan.to_dict(), "runs": {}}
    kinds = list(dict.fromkeys(noise_kind(s) for s in grid))

    for fi, fold in enumerate(plan.folds):
        fold.check()
        by_role = {
            role: [r.utt_id for r in records if r.speaker in spk]
            for role, spk in (("train", fold.train), ("val", fold.val), ("test", fold.test))
        }
        tr = [(u, CLEAN) for u in by_role["train"]]
        va = [(u, CLEAN) for u in by_role["val"]]
        store.ensure(tr + va)
        Xtr, tr = store.matrix(tr)
        Xva, va = store.matrix(va)
        tcfg = replace(cfg.train, seed=derive_seed(cfg.seed, "train", fi))
        clean_model = train_reference(Xtr, _labels(recs, tr), Xva, _labels(recs, va), tcfg, cfg.axes)

        test_keys = {CLEAN: [(u, CLEAN) for u in by_role["test"]]}
        test_keys.update({t: [(u, t) for u in by_role["test"]] for t in tags})
        store.ensure(k for ks in test_keys.values() for k in ks)
        for name, keys in test_keys.items():
            X, keys = store.matrix(keys)
            acc.add("clean-trained", name, _confusions(clean_model, X, _labels(recs, keys), cfg.axes))

        if cfg.mode == "denoise-then-test":
            dn = {t: [(u, "dn:" + t) for u in by_role["test"]] for t in tags}
            store.ensure((k for ks in dn.values() for k in ks), denoise=True)
            for t, keys in dn.items():
                keys = [k for k in keys if k in store.features]
                if keys:
                    X, keys = store.matrix(keys)
                    acc.add("denoised", t, _confusions(clean_model, X, _labels(recs, keys), cfg.axes))

        if cfg.mode == "leave-one-noise-out":
            for held in kinds:
                train_tags = [s.tag for s in grid if noise_kind(s) != held]
                held_tags = [s.tag for s in grid if noise_kind(s) == held]
                tr_aug = tr + [(u, t) for t in train_tags for u in by_role["train"]]
                va_aug = va + [(u, t) for t in train_tags for u in by_role["val"]]
                # hygiene: the held-out kind must not reach training or validation
                used = {t for _, t in tr_aug + va_aug} - {CLEAN}
                leaked = [t for t in used if noise_kind(_spec_for(grid, t)) == held]
                assert not leaked, f"held-out noise {held} leaked into training: {leaked}"
                store.ensure(tr_aug + va_aug)
                Xa, tr_aug = store.matrix(tr_aug)
                Xv, va_aug = store.matrix(va_aug)
                acfg = replace(cfg.train, seed=derive_seed(cfg.seed, "train", fi, held))
                model = train_reference(Xa, _labels(recs, tr_aug), Xv, _labels(recs, va_aug), acfg, cfg.axes)
                run = f"lono-{held}"
                provenance["runs"].setdefault(run, {"held_out": held, "train_variants": train_tags, "folds": []})
                provenance["runs"][run]["folds"].append(
                    {"fold": fi, "train_items": len(tr_aug), "val_items": len(va_aug), "variant_tags": sorted(used)}
                )
                for name in [CLEAN] + held_tags:
                    X, keys = store.matrix(test_keys[name])
                    acc.add(run, name, _confusions(model, X, _labels(recs, keys), cfg.axes))

    results = _assemble(cfg, acc, tags, variants, kinds, grid)
    results["n_utterances"] = len(records)
    if cfg.mode == "denoise-then-test":
        results["denoise_failures"] = [
            {"utt_id": u, "variant": t.removeprefix("dn:"), "error": e} for (u, t), e in sorted(store.failures.items())
        ]
    confusions = {f"{run}__{variant}__{axis}": cm for (run, variant, axis), cm in sorted(acc.cm.items())}
    return ReportBundle(_round(results), confusions, _round(provenance))


def _spec_for(grid, tag):
    return next(s for s in grid if s.tag == tag)


def _assemble(cfg, acc: _Accumulator, tags, variants, kinds, grid) -> dict:
    axes = list(cfg.axes)
    base = {a: acc.uar("clean-trained", CLEAN, a) for a in axes}
    rows = []
    for t in tags:
        row = {"variant": variants[t], "tag": t, "kind": noise_kind(_spec_for(grid, t))}
        for a in axes:
            u = acc.uar("clean-trained", t, a)
            row[f"uar_{a}"] = u
            row[f"delta_{a}"] = _delta(u, base[a])
        rows.append(row)
    results = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "folds": cfg.folds,
        "axes": axes,
        "baseline": base,
        "rows": rows,
        "reference": {
            "clean_baseline_uar": reference_data.CLEAN_BASELINE_UAR,
            "chance_uar": reference_data.CHANCE_UAR,
        },
    }
    if cfg.mode == "leave-one-noise-out":
        runs = []
        for held in kinds:
            run = f"lono-{held}"
            held_rows = []
            for t in tags:
                if noise_kind(_spec_for(grid, t)) != held:
                    continue
                r = {"variant": variants[t], "tag": t}
                for a in axes:
                    aug = acc.uar(run, t, a)
                    r[f"uar_{a}"] = aug
                    r[f"gain_{a}"] = _delta(aug, acc.uar("clean-trained", t, a))
                held_rows.append(r)
            runs.append(
                {
                    "held_out": held,
                    "train_kinds": [k for k in kinds if k != held],
                    "clean": {a: acc.uar(run, CLEAN, a) for a in axes},
                    "rows": held_rows,
                }
            )
        results["lono_runs"] = runs
        gains = {r["tag"]: r for run in runs for r in run["rows"]}
        for row in rows:
            for a in axes:
                row[f"aug_gain_{a}"] = gains[row["tag"]][f"gain_{a}"]
    if cfg.mode == "denoise-then-test":
        for row in rows:
            for a in axes:
                u = acc.uar("denoised", row["tag"], a)
                row[f"denoised_uar_{a}"] = u
                row[f"denoise_gain_{a}"] = _delta(u, row[f"uar_{a}"])
        results["reference"]["denoise_gain_co20"] = list(reference_data.DENOISE_GAIN_CO20)
    return results


def _run_with_handle(cfg: ExperimentConfig, corpus: Corpus, handle: ClassifierHandle) -> ReportBundle:
    records = list(corpus.records)
    grid = list(cfg.noise_grid)
    tags = [s.tag for s in grid]
    variants = {s.tag: s.variant for s in grid}
    acc = _Accumulator(cfg.axes)
    errors = []
    tmp = tempfile.TemporaryDirectory(prefix="emonoise-dn-")

    def classify(item):
        rec, tag = item
        clip = corpus.audio(rec)
        base = tag.removeprefix("dn:")
        try:
            if base != CLEAN:
                clip = render_variant(corpus, rec, clip, _spec_for(grid, base), cfg.seed)
            if tag.startswith("dn:"):
                clip = run_denoiser(cfg.denoiser, clip, tmp.name)
            return handle.classify(clip, rec.speaker), None
        except (ClassifierError, RuntimeError, AudioError, OSError) as exc:
            return None, str(exc)

    names = [CLEAN] + tags + (["dn:" + t for t in tags] if cfg.mode == "denoise-then-test" else [])
    try:
        for name in names:
            items = [(r, name) for r in records]
            out = _pmap(classify, items, cfg.jobs)
            labels, preds = [], []
            for (rec, _), (pred, err) in zip(items, out):
                if err is not None:
                    errors.append({"utt_id": rec.utt_id, "variant": name, "error": err})
                    continue
                labels.append(rec.label)
                preds.append(pred)
            if not preds:
                continue
            run = "denoised" if name.startswith("dn:") else "clean-trained"
            acc.add(
                run,
                name.removeprefix("dn:"),
                {a: confusion_matrix([l.index(a) for l in labels], [p.index(a) for p in preds]) for a in cfg.axes},
            )
    finally:
        tmp.cleanup()
    kinds = list(dict.fromkeys(noise_kind(s) for s in grid))
    results = _assemble(cfg, acc, tags, variants, kinds, grid)
    results["classifier"] = handle.kind
    results["n_utterances"] = len(records)
    results["queries"] = handle.query_counter
    results["errors"] = errors
    confusions = {f"{run}__{variant}__{axis}": cm for (run, variant, axis), cm in sorted(acc.cm.items())}
    return ReportBundle(_round(results), confusions, {"classifier": handle.kind})

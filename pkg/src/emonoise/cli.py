"""
Command-line entry point.

Exit codes: 0 success, 2 partial success (some files failed), 3 recipe
rejected by the perception lint, 4 invalid configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .attack import (
    CONDITIONS,
    DEFAULT_BUDGETS,
    DEFAULT_SNR_GRID,
    AttackConfig,
    AttackError,
    AttackSample,
    DegradationOrdering,
    NoiseSources,
    run_conditions,
    write_attack_report,
)
from .audio import AudioError, read_wav, write_wav
from .classifier import make_handle
from .classifier.labels import AXES
from .classifier.model import TrainConfig, save_model, train_reference
from .classifier.handles import featurize
from .env import EnvSpec, NoiseBankError, apply_env, enumerate_env_grid, ingest_noise_bank
from .errors import ConfigError
from .features import apply_znorm, extract_mfb, fit_speaker_stats, write_features
from .harness.experiment import MODES, Corpus, ExperimentConfig, run_experiment
from .harness.manifest import ManifestError, UtteranceRecord, read_manifest, write_manifest
from .harness.report import render_markdown
from .harness.selection import SelectionError, make_folds
from .perception import lint_passes, lint_recipe
from .recipe import load_recipe, spec_from_dict
from .synth.alignment import AlignmentError, load_alignment
from .synth.transforms import SynthContext, SynthError, apply_synth, load_event_bank

EXIT_OK = 0
EXIT_PARTIAL = 2
EXIT_POLICY = 3
EXIT_CONFIG = 4
NOISE_BANK_ENV = "EMONOISE_NOISE_BANK"

log = logging.getLogger("emonoise")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _load_config(path: str | None) -> tuple[dict, Path]:
    if not path:
        return {}, Path.cwd()
    p = Path(path)
    try:
        cfg = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError("config", f"no such file {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config", "must be a JSON object")
    return cfg, p.parent


def _path(cfg: Mapping, key: str, base: Path, required: bool = False) -> Path | None:
    value = cfg.get(key)
    if value is None:
        if required:
            raise ConfigError(key, "is required")
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _noise_bank(directory: str | os.PathLike | None, category_map: str | None, required: bool):
    directory = directory or os.environ.get(NOISE_BANK_ENV)
    if not directory:
        if required:
            raise ConfigError("noise_bank", f"pass --noise-bank or set {NOISE_BANK_ENV}")
        return None
    root = Path(directory)
    if not root.is_dir():
        raise ConfigError("noise_bank", f"no such directory {root}")
    cmap = Path(category_map) if category_map else root / "categories.json"
    if not cmap.is_file():
        raise ConfigError("category_map", f"no category map at {cmap}")
    return ingest_noise_bank(root, cmap)


def _manifest(path) -> list[UtteranceRecord]:
    if path is None:
        raise ConfigError("manifest", "is required")
    if not Path(path).is_file():
        raise ConfigError("manifest", f"no such file {path}")
    return read_manifest(path)


def _print_findings(findings, stream) -> None:
    for f in findings:
        where = f" [spec {f.index}]" if f.index >= 0 else ""
        print(f"{f.severity:5s} {f.rule}{where}: {f.message}", file=stream)


# ---------------------------------------------------------------- commands


def cmd_lint(args) -> int:
    recipe = load_recipe(args.recipe)
    allow = args.allow_perception_changing or recipe.allow_perception_changing
    findings = lint_recipe(recipe.all_spec_dicts(), allow, args.denoise)
    _print_findings(findings, sys.stdout)
    return EXIT_OK if lint_passes(findings) else EXIT_POLICY


def cmd_augment(args) -> int:
    recipe = load_recipe(args.recipe)
    allow = args.allow_perception_changing or recipe.allow_perception_changing
    findings = lint_recipe(recipe.all_spec_dicts(), allow)
    if not lint_passes(findings):
        _print_findings([f for f in findings if f.severity != "ok"], sys.stderr)
        return EXIT_POLICY
    if args.seed is not None:
        recipe.seed = args.seed
    specs = recipe.parsed_specs()
    needs_bank = recipe.env_grid or any(isinstance(s, EnvSpec) for s in specs)
    bank = _noise_bank(args.noise_bank, args.category_map, needs_bank)
    events = load_event_bank(args.events) if args.events else None
    records = _manifest(args.manifest)
    out_dir = Path(args.out_dir or recipe.out_dir or "")
    if not str(out_dir):
        raise ConfigError("out_dir", "pass --out-dir or set out_dir in the recipe")
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(rec: UtteranceRecord):
        rows, errors = [], []
        try:
            clip = read_wav(rec.wav)
            alignment = load_alignment(rec.align) if rec.align else None
        except (AudioError, AlignmentError, OSError) as exc:
            return rows, [f"{rec.utt_id}: {exc}"]
        for spec in recipe.expand(rec.utt_id):
            name = f"{rec.utt_id}__{spec.tag}"
            try:
                if isinstance(spec, EnvSpec):
                    out = apply_env(clip, spec, bank)
                else:
                    ctx = SynthContext(alignment=alignment, events=events, speaker=rec.speaker)
                    out = apply_synth(clip, spec, ctx)
                path = out_dir / f"{name}.wav"
                write_wav(out, path)
            except (AudioError, SynthError, AlignmentError, NoiseBankError) as exc:
                errors.append(f"{name}: {exc}")
                continue
            row = {**rec.to_dict(), "utt_id": name, "wav": path.name, "dur_s": round(out.duration, 6), "align": None}
            row["provenance"] = {
                "source_utt": rec.utt_id,
                "tag": spec.tag,
                "kind": spec.category if isinstance(spec, EnvSpec) else spec.kind,
                "spec": spec.to_dict(),
                "seed": spec.seed,
            }
            rows.append(row)
        return rows, errors

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(work, records))
    else:
        results = [work(r) for r in records]
    rows = [row for rs, _ in results for row in rs]
    errors = [e for _, es in results for e in es]
    write_manifest(rows, out_dir / "manifest.jsonl")
    for e in errors:
        log.error("%s", e)
    print(f"wrote {len(rows)} files to {out_dir}; {len(errors)} failed")
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_featurize(args) -> int:
    records = _manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def extract(rec):
        try:
            return extract_mfb(read_wav(rec.wav), rec.utt_id, rec.speaker), None
        except (AudioError, OSError) as exc:
            return None, f"{rec.utt_id}: {exc}"

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(extract, records))
    else:
        results = [extract(r) for r in records]
    seqs = [s for s, _ in results if s is not None]
    errors = [e for _, e in results if e is not None]
    if args.znorm and seqs:
        stats = fit_speaker_stats(seqs)
        seqs = [apply_znorm(s, stats) for s in seqs]
        payload = {k: {"mean": v.mean.tolist(), "std": v.std.tolist()} for k, v in sorted(stats.items())}
        (out_dir / "speaker_stats.json").write_text(json.dumps(payload, sort_keys=True))
    for s in seqs:
        write_features(s, out_dir / s.utterance_id)
    for e in errors:
        log.error("%s", e)
    print(f"wrote features for {len(seqs)} utterances to {out_dir}; {len(errors)} failed")
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_train_ref(args) -> int:
    records = _manifest(args.manifest)
    clips = {r.utt_id: read_wav(r.wav) for r in records}
    seqs = [extract_mfb(clips[r.utt_id], r.utt_id, r.speaker) for r in records]
    stats = fit_speaker_stats(seqs)
    if args.val_speakers:
        val_spk = set(args.val_speakers.split(","))
        unknown = val_spk - {r.speaker for r in records}
        if unknown:
            raise ConfigError("val_speakers", f"unknown speakers {sorted(unknown)}")
    else:
        val_spk = set(make_folds(records, max(3, min(5, len({r.speaker for r in records}))), args.seed).folds[0].val)
    X = {r.utt_id: featurize(clips[r.utt_id], stats[r.speaker]) for r in records}
    tr = [r for r in records if r.speaker not in val_spk]
    va = [r for r in records if r.speaker in val_spk]
    cfg = TrainConfig(seed=args.seed, max_epochs=args.max_epochs)
    model = train_reference(
        np.stack([X[r.utt_id] for r in tr]),
        [r.label for r in tr],
        np.stack([X[r.utt_id] for r in va]) if va else None,
        [r.label for r in va] if va else None,
        cfg,
    )
    extra = {
        "speaker_stats": {k: {"mean": v.mean.tolist(), "std": v.std.tolist()} for k, v in sorted(stats.items())},
        "train_speakers": sorted({r.speaker for r in tr}),
        "val_speakers": sorted(val_spk),
    }
    save_model(model, args.out, extra)
    print(f"trained on {len(tr)} utterances, validated on {len(va)}; model written to {args.out}")
    return EXIT_OK


def _grid_from(value: Any, field: str = "noise_grid"):
    if value is None or value == "core":
        return tuple(enumerate_env_grid("grid"))
    if value == "extended":
        return tuple(enumerate_env_grid("grid", extended=True))
    if not isinstance(value, list):
        raise ConfigError(field, "must be 'core', 'extended' or a list of specs")
    return tuple(spec_from_dict(d, f"{field}[{i}]") for i, d in enumerate(value))


def cmd_eval(args) -> int:
    cfg, base = _load_config(args.config)
    if args.manifest:
        cfg["manifest"] = str(Path(args.manifest).resolve())
    records = _manifest(_path(cfg, "manifest", base, required=True))
    bank = _noise_bank(_path(cfg, "noise_bank", base) or args.noise_bank, cfg.get("category_map"), False)
    events_dir = _path(cfg, "events", base)
    events = load_event_bank(events_dir) if events_dir else None
    grid = _grid_from(cfg.get("noise_grid"))
    if any(isinstance(s, EnvSpec) for s in grid) and bank is None:
        raise ConfigError("noise_bank", f"environmental noise grid needs a noise bank (or {NOISE_BANK_ENV})")
    mode = cfg.get("mode", "noisy-test")
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}")
    handle = make_handle(cfg["classifier"]) if "classifier" in cfg else None
    exp = ExperimentConfig(
        mode=mode,
        noise_grid=grid,
        folds=int(cfg.get("folds", 5)),
        seed=int(cfg.get("seed", 0)),
        denoiser=cfg.get("denoiser"),
        train=TrainConfig(max_epochs=int(cfg.get("max_epochs", 50))),
        jobs=args.jobs,
    )
    out_dir = args.out_dir or _path(cfg, "out_dir", base)
    if out_dir is None:
        raise ConfigError("out_dir", "pass --out-dir or set out_dir in the config")
    try:
        bundle = run_experiment(exp, Corpus(records, bank, events), handle)
    finally:
        if handle is not None:
            handle.close()
    bundle.write(out_dir)
    print(render_markdown(bundle.results))
    failures = bundle.results.get("denoise_failures") or bundle.results.get("errors")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_attack(args) -> int:
    cfg, base = _load_config(args.config)
    if args.manifest:
        cfg["manifest"] = str(Path(args.manifest).resolve())
    records = _manifest(_path(cfg, "manifest", base, required=True))
    if "classifier" not in cfg:
        raise ConfigError("classifier", "attack needs a classifier")
    bank = _noise_bank(_path(cfg, "noise_bank", base) or args.noise_bank, cfg.get("category_map"), False)
    events_dir = _path(cfg, "events", base)
    sources = NoiseSources(bank, load_event_bank(events_dir) if events_dir else None)
    if not sources.additive_kinds() and not cfg.get("non_additive"):
        raise ConfigError("noise_bank", f"attack needs a noise bank (or {NOISE_BANK_ENV}) or an event bank")
    budgets = [int(k) for k in cfg.get("budgets", DEFAULT_BUDGETS)]
    if not budgets or min(budgets) < 1:
        raise ConfigError("budgets", "must be a non-empty list of positive integers")
    ordering = cfg.get("ordering")
    if ordering is not None and not (isinstance(ordering, list) and all(isinstance(k, str) for k in ordering)):
        raise ConfigError("ordering", "must be a list of noise kinds, most damaging first")
    conditions = [tuple(bool(x) for x in c) for c in cfg.get("conditions", CONDITIONS)]
    base_cfg = AttackConfig(
        snr_grid=tuple(cfg.get("snr_grid", DEFAULT_SNR_GRID)),
        success_min_snr=float(cfg.get("success_min_snr", 10.0)),
        seed=int(cfg.get("seed", 0)),
        ordering=DegradationOrdering(tuple(ordering)) if ordering else None,
        kinds=tuple(cfg["kinds"]) if cfg.get("kinds") else None,
        non_additive=bool(cfg.get("non_additive", False)),
    )
    out_dir = args.out_dir or _path(cfg, "out_dir", base)
    if out_dir is None:
        raise ConfigError("out_dir", "pass --out-dir or set out_dir in the config")
    samples = [
        AttackSample(r.utt_id, read_wav(r.wav), r.speaker, load_alignment(r.align) if r.align else None)
        for r in records
    ]
    handle = make_handle(cfg["classifier"])
    try:
        results = run_conditions(samples, handle, base_cfg, sources, budgets, conditions, args.jobs)
    finally:
        handle.close()
    write_attack_report(results, out_dir)
    print(render_markdown(results))
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.results)
    if path.is_dir():
        path = path / "results.json"
    try:
        results = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("results", f"no such file {path}") from None
    text = render_markdown(results)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="emonoise", description=__doc__.strip().splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, jobs=True):
        if jobs:
            sp.add_argument("--jobs", type=int, default=1, help="worker threads (output does not depend on it)")

    sp = sub.add_parser("augment", help="render a recipe over a manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--recipe", required=True)
    sp.add_argument("--noise-bank", help=f"noise bank directory (default: ${NOISE_BANK_ENV})")
    sp.add_argument("--category-map", help="JSON {source_label: category}; default <noise-bank>/categories.json")
    sp.add_argument("--events", help="event bank directory (fillers/, laugh/, cry/)")
    sp.add_argument("--out-dir")
    sp.add_argument("--seed", type=int, help="override the recipe seed")
    sp.add_argument("--allow-perception-changing", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("lint-recipe", help="check a recipe against the perception guidance")
    sp.add_argument("recipe")
    sp.add_argument("--allow-perception-changing", action="store_true")
    sp.add_argument("--denoise", action="store_true", help="the augmented data will be denoised")
    sp.set_defaults(func=cmd_lint)

    sp = sub.add_parser("featurize", help="extract log-mel filterbank features")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--no-znorm", dest="znorm", action="store_false", help="skip per-speaker normalization")
    common(sp)
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("train-ref", help="train the reference classifier")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="model JSON path")
    sp.add_argument("--val-speakers", help="comma-separated validation speakers")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-epochs", type=int, default=50)
    sp.set_defaults(func=cmd_train_ref)

    sp = sub.add_parser("eval", help="run a robustness experiment")
    sp.add_argument("--config", help="experiment JSON config")
    sp.add_argument("--manifest")
    sp.add_argument("--noise-bank")
    sp.add_argument("--out-dir")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("attack", help="run the noise attack against a classifier")
    sp.add_argument("--config", required=True)
    sp.add_argument("--manifest")
    sp.add_argument("--noise-bank")
    sp.add_argument("--out-dir")
    common(sp)
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("report", help="render results.json as markdown tables")
    sp.add_argument("results", help="results.json or a bundle directory")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be at least 1")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, NoiseBankError, SelectionError, AttackError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

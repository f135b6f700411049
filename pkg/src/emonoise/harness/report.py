"""Report bundles: results.json, a markdown table and confusion CSVs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING, Mapping

import numpy as np

from ..classifier.labels import LEVELS

if TYPE_CHECKING:
    from .experiment import ReportBundle


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:+.2f}"


def render_experiment_markdown(results: Mapping) -> str:
    """Rows are noise variants; columns the UAR change per axis for a clean-trained model.

    Leave-one-noise-out results add the augmentation gain columns; denoising
    results add the change after denoising.
    """
    axes = results["axes"]
    short = {"activation": "Act", "valence": "Val"}
    cols = [f"{short.get(a, a)} ΔUAR" for a in axes]
    lono = "lono_runs" in results
    dn = results.get("mode") == "denoise-then-test"
    if lono:
        cols += [f"{short.get(a, a)} aug gain" for a in axes]
    if dn:
        cols += [f"{short.get(a, a)} denoise gain" for a in axes]
    base = results["baseline"]
    lines = [
        f"# Robustness results ({results['mode']})",
        "",
        "Clean baseline UAR: " + ", ".join(f"{a} {base[a]:.2f}" if base[a] is not None else f"{a} n/a" for a in axes),
        "",
        "| Variant | " + " | ".join(cols) + " |",
        "|---|" + "---|" * len(cols),
    ]
    for row in results["rows"]:
        cells = [_fmt(row[f"delta_{a}"]) for a in axes]
        if lono:
            cells += [_fmt(row.get(f"aug_gain_{a}")) for a in axes]
        if dn:
            cells += [_fmt(row.get(f"denoise_gain_{a}")) for a in axes]
        lines.append(f"| {row['variant']} | " + " | ".join(cells) + " |")
    if results.get("denoise_failures"):
        lines += ["", f"Denoiser failures excluded: {len(results['denoise_failures'])}"]
    return "\n".join(lines) + "\n"


def render_attack_markdown(results: Mapping) -> str:
    """P_IF table: one row per (corr, eval) condition, one column per budget."""
    summary = results["summary"]
    budgets = [int(k) for k in summary["budgets"]]
    lines = [
        "# Attack success (P_IF)",
        "",
        "| Condition | " + " | ".join(f"k={k}" for k in budgets) + " |",
        "|---|" + "---|" * len(budgets),
    ]
    for row in summary["rows"]:
        name = f"Corr: {'Yes' if row['corr'] else 'No'}, Eval: {'Yes' if row['eval'] else 'No'}"
        lines.append(f"| {name} | " + " | ".join(f"{row['pif'][str(k)]:.2f}" for k in budgets) + " |")
    return "\n".join(lines) + "\n"


def render_markdown(results: Mapping) -> str:
    if results.get("kind") == "attack":
        return render_attack_markdown(results)
    return render_experiment_markdown(results)


def confusion_csv(cm: np.ndarray) -> str:
    lines = ["true\\pred," + ",".join(LEVELS)]
    for lvl, row in zip(LEVELS, np.asarray(cm)):
        lines.append(lvl + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_bundle(bundle: ReportBundle, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(bundle.results, out / "results.json")
    (out / "results.md").write_text(render_experiment_markdown(bundle.results))
    dump_json(bundle.provenance, out / "provenance.json")
    cdir = out / "confusion"
    cdir.mkdir(exist_ok=True)
    for name, cm in sorted(bundle.confusions.items()):
        (cdir / f"{name}.csv").write_text(confusion_csv(cm))
    return out

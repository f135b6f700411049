from .experiment import MODES, Corpus, ExperimentConfig, ReportBundle, noise_kind, render_variant, run_experiment
from .manifest import ManifestError, UtteranceRecord, read_manifest, write_manifest
from .metrics import compute_uar, confusion_matrix, uar
from .selection import Fold, FoldPlan, SelectionError, make_folds, select_stratified_samples

__all__ = [
    "MODES",
    "Corpus",
    "ExperimentConfig",
    "Fold",
    "FoldPlan",
    "ManifestError",
    "ReportBundle",
    "SelectionError",
    "UtteranceRecord",
    "compute_uar",
    "confusion_matrix",
    "make_folds",
    "noise_kind",
    "read_manifest",
    "render_variant",
    "run_experiment",
    "select_stratified_samples",
    "uar",
    "write_manifest",
]

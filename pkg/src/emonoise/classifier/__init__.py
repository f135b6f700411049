from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ConfigError
from ..features import SpeakerStats
from .handles import (
    CallableHandle,
    ClassifierError,
    ClassifierHandle,
    ClassifierProtocolError,
    ClassifierTimeout,
    CommandHandle,
    HttpHandle,
    ReferenceHandle,
    featurize,
    serve_stdio,
)
from .labels import AXES, LEVELS, EmotionLabel, LabelError
from .model import (
    ReferenceModel,
    SoftmaxHead,
    TrainConfig,
    TrainingError,
    class_weights,
    pool_features,
    train_head,
    train_reference,
    weighted_loss_and_grad,
)

__all__ = [
    "AXES",
    "LEVELS",
    "CallableHandle",
    "ClassifierError",
    "ClassifierHandle",
    "ClassifierProtocolError",
    "ClassifierTimeout",
    "CommandHandle",
    "EmotionLabel",
    "HttpHandle",
    "LabelError",
    "ReferenceHandle",
    "ReferenceModel",
    "SoftmaxHead",
    "TrainConfig",
    "TrainingError",
    "class_weights",
    "featurize",
    "make_handle",
    "pool_features",
    "serve_stdio",
    "train_head",
    "train_reference",
    "weighted_loss_and_grad",
]


def make_handle(cfg: Mapping, field: str = "classifier") -> ClassifierHandle:
    """Build a handle from ``{"kind": "reference"|"command"|"http", ...}``."""
    if not isinstance(cfg, Mapping):
        raise ConfigError(field, "must be an object")
    kind = cfg.get("kind")
    axis = cfg.get("target_axis", "activation")
    if axis not in AXES:
        raise ConfigError(f"{field}.target_axis", f"must be one of {AXES}")
    timeout = float(cfg.get("timeout", 30.0))
    if kind == "reference":
        path = cfg.get("model")
        if not path:
            raise ConfigError(f"{field}.model", "reference classifier needs a model file")
        if not Path(path).is_file():
            raise ConfigError(f"{field}.model", f"no such file {path}")
        payload = json.loads(Path(path).read_text())
        stats = {
            spk: SpeakerStats(spk, np.asarray(s["mean"]), np.asarray(s["std"]))
            for spk, s in payload.get("speaker_stats", {}).items()
        }
        if not stats:
            raise ConfigError(f"{field}.model", "model file carries no speaker statistics")
        return ReferenceHandle(ReferenceModel.from_dict(payload), stats, axis, timeout)
    if kind == "command":
        command = cfg.get("command")
        if not command or not isinstance(command, list):
            raise ConfigError(f"{field}.command", "command classifier needs an argv list")
        return CommandHandle([str(c) for c in command], axis, timeout)
    if kind == "http":
        url = cfg.get("url")
        if not url:
            raise ConfigError(f"{field}.url", "http classifier needs an endpoint URL")
        return HttpHandle(str(url), axis, timeout)
    raise ConfigError(f"{field}.kind", f"must be 'reference', 'command' or 'http', got {kind!r}")

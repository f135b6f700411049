"""
Reference emotion classifier: multinomial logistic regression on pooled MFBs.

Each axis (activation, valence) gets its own 3-class head trained with an
inverse-class-frequency weighted cross-entropy, RMSProp updates, and early
stopping that restores the weights with the lowest validation loss.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..features import MfbSequence
from .labels import AXES, LEVELS, EmotionLabel

N_CLASSES = len(LEVELS)


class TrainingError(ValueError):
    pass


def pool_features(seq: MfbSequence | np.ndarray) -> np.ndarray:
    """Concatenate per-dimension mean and population std over time (80-vector)."""
    frames = seq.frames if isinstance(seq, MfbSequence) else np.asarray(seq, dtype=np.float64)
    if frames.shape[0] < 1:
        raise ValueError("cannot pool an empty sequence")
    return np.concatenate([frames.mean(axis=0), frames.std(axis=0)])


def class_weights(y: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    """Inverse class frequency, scaled so a balanced set has all weights 1.

    Classes absent from ``y`` get weight 0.
    """
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    present = counts > 0
    w = np.zeros(n_classes)
    w[present] = len(y) / (present.sum() * counts[present])
    return w


def _with_bias(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def weighted_loss_and_grad(
    W: np.ndarray, X: np.ndarray, y: np.ndarray, cw: np.ndarray, l2: float = 0.0
) -> tuple[float, np.ndarray]:
    """Weighted mean cross-entropy of softmax(X_b @ W.T) and its gradient.

    ``X`` excludes the bias column; ``W`` is (classes, dims + 1) with the
    bias last. The loss is normalized by the total sample weight. The L2
    term skips the bias.
    """
    Xb = _with_bias(X)
    z = Xb @ W.T
    z -= z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    sw = cw[y]
    norm = sw.sum()
    if norm <= 0:
        raise TrainingError("all samples have zero weight")
    rows = np.arange(len(y))
    loss = -(sw * logp[rows, y]).sum() / norm + 0.5 * l2 * np.sum(W[:, :-1] ** 2)
    G = np.exp(logp)
    G[rows, y] -= 1.0
    G *= (sw / norm)[:, None]
    grad = G.T @ Xb
    grad[:, :-1] += l2 * W[:, :-1]
    return float(loss), grad


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    max_epochs: int = 50
    patience: int = 5
    batch_size: int = 32
    rho: float = 0.9
    eps: float = 1e-7
    l2: float = 1e-4
    seed: int = 0


@dataclass
class SoftmaxHead:
    weights: np.ndarray  # (3, 81)
    input_mean: np.ndarray
    input_scale: np.ndarray
    best_epoch: int = 0
    history: list[tuple[float, float]] = field(default_factory=list)

    def _scale(self, X: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(X) - self.input_mean) / self.input_scale

    def logits(self, X: np.ndarray) -> np.ndarray:
        return _with_bias(self._scale(X)) @ self.weights.T

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        z = self.logits(X)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "input_mean": self.input_mean.tolist(),
            "input_scale": self.input_scale.tolist(),
            "best_epoch": self.best_epoch,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> SoftmaxHead:
        return cls(
            np.asarray(d["weights"], dtype=np.float64),
            np.asarray(d["input_mean"], dtype=np.float64),
            np.asarray(d["input_scale"], dtype=np.float64),
            int(d.get("best_epoch", 0)),
        )


def train_head(
    X: np.ndarray,
    y: np.ndarray,
    X_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
    config: TrainConfig | None = None,
) -> SoftmaxHead:
    """Fit one 3-class head.

    Without a validation set, training runs for ``max_epochs`` and keeps the
    final weights.
    """
    cfg = config or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise TrainingError("training set must contain at least two classes")

    mean = X.mean(axis=0)
    scale = np.maximum(X.std(axis=0), 1e-8)
    Xs = (X - mean) / scale
    cw = class_weights(y)
    has_val = X_val is not None and y_val is not None and len(y_val) > 0
    if has_val:
        Xv = (np.asarray(X_val, dtype=np.float64) - mean) / scale
        yv = np.asarray(y_val, dtype=np.int64)
        cwv = class_weights(yv)

    rng = np.random.default_rng(cfg.seed)
    W = rng.normal(scale=0.01, size=(N_CLASSES, X.shape[1] + 1))
    cache = np.zeros_like(W)
    best_W, best_loss, best_epoch, stale = W.copy(), np.inf, 0, 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if cw[y[idx]].sum() == 0:
                continue
            _, g = weighted_loss_and_grad(W, Xs[idx], y[idx], cw, cfg.l2)
            cache = cfg.rho * cache + (1 - cfg.rho) * g * g
            W = W - cfg.learning_rate * g / (np.sqrt(cache) + cfg.eps)
        train_loss, _ = weighted_loss_and_grad(W, Xs, y, cw, 0.0)
        if not has_val:
            history.append((train_loss, float("nan")))
            best_W, best_epoch = W.copy(), epoch
            continue
        val_loss, _ = weighted_loss_and_grad(W, Xv, yv, cwv, 0.0)
        history.append((train_loss, val_loss))
        if val_loss < best_loss:
            best_W, best_loss, best_epoch, stale = W.copy(), val_loss, epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if not np.all(np.isfinite(best_W)):
        raise TrainingError("training diverged to non-finite weights")
    return SoftmaxHead(best_W, mean, scale, best_epoch, history)


@dataclass
class ReferenceModel:
    """One :class:`SoftmaxHead` per emotion axis plus the training config."""

    heads: dict[str, SoftmaxHead]
    config: TrainConfig = field(default_factory=TrainConfig)

    def predict(self, X: np.ndarray) -> dict[str, np.ndarray]:
        return {axis: head.predict(X) for axis, head in self.heads.items()}

    def predict_labels(self, X: np.ndarray) -> list[EmotionLabel]:
        pred = self.predict(X)
        act = pred.get("activation")
        val = pred.get("valence")
        n = len(next(iter(pred.values())))
        return [
            EmotionLabel(
                LEVELS[act[i]] if act is not None else "mid",
                LEVELS[val[i]] if val is not None else "mid",
            )
            for i in range(n)
        ]

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "heads": {a: h.to_dict() for a, h in self.heads.items()}}

    @classmethod
    def from_dict(cls, d: Mapping) -> ReferenceModel:
        return cls(
            {a: SoftmaxHead.from_dict(h) for a, h in d["heads"].items()},
            TrainConfig(**d.get("config", {})),
        )


def labels_to_indices(labels: Sequence[EmotionLabel], axis: str) -> np.ndarray:
    return np.array([lab.index(axis) for lab in labels], dtype=np.int64)


def train_reference(
    X: np.ndarray,
    labels: Sequence[EmotionLabel],
    X_val: np.ndarray | None = None,
    labels_val: Sequence[EmotionLabel] | None = None,
    config: TrainConfig | None = None,
    axes: Sequence[str] = AXES,
) -> ReferenceModel:
    cfg = config or TrainConfig()
    heads = {}
    for axis in axes:
        y = labels_to_indices(labels, axis)
        yv = labels_to_indices(labels_val, axis) if labels_val else None
        heads[axis] = train_head(X, y, X_val, yv, cfg)
    return ReferenceModel(heads, cfg)


def save_model(model: ReferenceModel, path: str | Path, extra: Mapping | None = None) -> None:
    payload = model.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_model_payload(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())

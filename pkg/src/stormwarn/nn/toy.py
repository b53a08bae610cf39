"""Small dense classifier trained with Adam on the class-balanced loss.

Stands in for the full radar network so that genuine per-epoch probability
trajectories can be produced at desk scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .loss import EPS, LossWeights, class_balanced_ce, class_balanced_ce_grad, class_weights

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.001
    batch_size: int = 72
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.hidden < 1:
            raise ValueError("batch size and hidden width must be >= 1")


class Adam:
    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def init_params(n_features: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    lim1 = np.sqrt(6.0 / (n_features + hidden))
    lim2 = np.sqrt(6.0 / (hidden + 1))
    return {
        "w1": rng.uniform(-lim1, lim1, (n_features, hidden)),
        "b1": np.zeros(hidden),
        "w2": rng.uniform(-lim2, lim2, hidden),
        "b2": np.zeros(1),
    }


def predict_proba(params: dict[str, np.ndarray], x: np.ndarray) -> np.ndarray:
    hidden = np.tanh(x @ params["w1"] + params["b1"])
    return expit(hidden @ params["w2"] + params["b2"][0])


def loss_and_grad(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray,
                  weights: LossWeights) -> tuple[float, dict[str, np.ndarray]]:
    hidden = np.tanh(x @ params["w1"] + params["b1"])
    p = expit(hidden @ params["w2"] + params["b2"][0])
    loss = class_balanced_ce(p, y, weights)
    dz = class_balanced_ce_grad(p, y, weights) * p * (1.0 - p)
    dhidden = np.outer(dz, params["w2"]) * (1.0 - hidden ** 2)
    grads = {
        "w1": x.T @ dhidden,
        "b1": dhidden.sum(axis=0),
        "w2": hidden.T @ dz,
        "b2": np.array([dz.sum()]),
    }
    return loss, grads


@dataclass
class TrainResult:
    snapshots: list[dict[str, np.ndarray]]
    probs: dict[str, np.ndarray]  # split -> (epochs, samples)
    losses: list[float] = field(default_factory=list)


def train_toy_classifier(features: np.ndarray, labels: np.ndarray, cfg: TrainConfig | None = None,
                         eval_sets: dict[str, np.ndarray] | None = None) -> TrainResult:
    """Mini-batch Adam on the class-balanced loss, recording outputs after every epoch.

    ``eval_sets`` maps split names to feature matrices whose probabilities are
    recorded alongside the training split (stored under ``"train"``).
    Loss weights come from each mini-batch; a single-class batch falls back
    to the class counts of the whole training set.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError(f"features {x.shape} do not match {y.size} labels")
    fallback = class_weights(y)
    rng = np.random.default_rng(cfg.seed)
    params = init_params(x.shape[1], cfg.hidden, rng)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    sets = {"train": x, **{k: np.asarray(v, dtype=float) for k, v in (eval_sets or {}).items()}}
    probs: dict[str, list[np.ndarray]] = {k: [] for k in sets}
    snapshots, losses = [], []

    for epoch in range(cfg.epochs):
        order = rng.permutation(y.size)
        total = 0.0
        for start in range(0, y.size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            yb = y[idx]
            try:
                weights = class_weights(yb)
            except ValueError:
                weights = fallback
            loss, grads = loss_and_grad(params, x[idx], yb, weights)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch + 1)
            opt.step(params, grads)
            total += loss
        if not all(np.isfinite(v).all() for v in params.values()):
            raise TrainingDivergedError(epoch + 1)
        losses.append(total)
        snapshots.append({k: v.copy() for k, v in params.items()})
        for name, feats in sets.items():
            probs[name].append(predict_proba(params, feats))
        logger.debug("epoch %d loss %.6f", epoch + 1, total)

    return TrainResult(snapshots, {k: np.array(v) for k, v in probs.items()}, losses)


__all__ = [
    "Adam",
    "EPS",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "init_params",
    "loss_and_grad",
    "predict_proba",
    "train_toy_classifier",
]

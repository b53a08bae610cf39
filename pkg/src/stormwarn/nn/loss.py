"""Class-balanced binary cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    beta0: float
    beta1: float

    def __post_init__(self):
        if self.beta0 <= 0 or self.beta1 <= 0:
            raise ValueError("class weights must be positive")


def class_weights(labels: Any) -> LossWeights:
    """Inverse class counts: beta1 = 1/#positives, beta0 = 1/#negatives."""
    y = np.asarray(getattr(labels, "values", labels)).ravel()
    mask = getattr(labels, "mask", None)
    if mask is not None:
        y = y[np.asarray(mask, dtype=bool)]
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError(f"need both classes to weight the loss (positives={n_pos}, negatives={n_neg})")
    return LossWeights(beta0=1.0 / n_neg, beta1=1.0 / n_pos)


def class_balanced_ce(probs: Any, labels: Any, weights: LossWeights) -> float:
    p = np.clip(np.asarray(probs, dtype=float), EPS, 1.0 - EPS)
    y = np.asarray(labels, dtype=float)
    return float(-np.sum(weights.beta1 * y * np.log(p) + weights.beta0 * (1.0 - y) * np.log(1.0 - p)))


def class_balanced_ce_grad(probs: Any, labels: Any, weights: LossWeights) -> np.ndarray:
    """d loss / d probs; zero where clipping is active."""
    raw = np.asarray(probs, dtype=float)
    p = np.clip(raw, EPS, 1.0 - EPS)
    y = np.asarray(labels, dtype=float)
    grad = -weights.beta1 * y / p + weights.beta0 * (1.0 - y) / (1.0 - p)
    return np.where((raw > EPS) & (raw < 1.0 - EPS), grad, 0.0)

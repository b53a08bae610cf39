"""Epoch-ensemble decision strategy.

Per-epoch probabilities are thresholded at the level maximizing a skill
score on training data, epochs whose validation score clears a fraction
gamma of the best validation score vote by median, gamma is tuned on
validation, and the best of several independent training runs is kept.

Indices are 0-based throughout the Python API (run 0, epoch 0). The JSON
decision written by :func:`decision_to_json` numbers runs and epochs from 1
to match the ``epoch_1..epoch_N`` CSV headers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .verify import (
    DEFAULT_WINDOW,
    LabelSeries,
    Score,
    UndefinedScoreError,
    _label_arrays,
    compute_score,
    false_positive_weights,
)

# Scores closer than this are treated as ties; the smaller candidate wins.
TIE_ATOL = 1e-12

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class EpochPredictionMatrix:
    """Probabilities indexed as ``probs[run, epoch, sample]``."""

    probs: np.ndarray
    split: str = "test"

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim == 2:
            probs = probs[None]
        if probs.ndim != 3:
            raise ValueError(f"expected (runs, epochs, samples) array, got shape {probs.shape}")
        if probs.size and (np.isnan(probs).any() or probs.min() < 0.0 or probs.max() > 1.0):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        object.__setattr__(self, "probs", probs)

    @property
    def n_runs(self) -> int:
        return self.probs.shape[0]

    @property
    def n_epochs(self) -> int:
        return self.probs.shape[1]

    @property
    def n_samples(self) -> int:
        return self.probs.shape[2]


@dataclass(frozen=True)
class EnsembleConfig:
    selection_score: Score = Score.WTSS
    run_score: Score | None = None
    T: int = DEFAULT_WINDOW
    gamma0: float = 0.80
    gamma1: float = 0.99
    gamma_step: float = 0.01
    threshold_grid: str = "unique_probs"
    threshold_bins: int = 100

    def __post_init__(self):
        object.__setattr__(self, "selection_score", Score.parse(self.selection_score))
        run_score = self.selection_score if self.run_score is None else Score.parse(self.run_score)
        object.__setattr__(self, "run_score", run_score)
        if not 0.0 < self.gamma0 < self.gamma1 < 1.0:
            raise ValueError("gamma grid needs 0 < gamma0 < gamma1 < 1")
        if self.gamma_step <= 0:
            raise ValueError("gamma step must be positive")
        if self.T < 1:
            raise ValueError("window length T must be >= 1")
        if self.threshold_grid not in ("unique_probs", "uniform"):
            raise ValueError("threshold_grid must be 'unique_probs' or 'uniform'")
        if self.threshold_grid == "uniform" and self.threshold_bins < 1:
            raise ValueError("threshold_bins must be >= 1")

    def gammas(self) -> np.ndarray:
        """Grid points of the half-open interval [gamma0, gamma1)."""
        count = math.ceil((self.gamma1 - self.gamma0) / self.gamma_step - 1e-9)
        grid = np.round(self.gamma0 + self.gamma_step * np.arange(count), 12)
        return grid[grid < self.gamma1]


@dataclass(frozen=True)
class GammaChoice:
    gamma: float
    alpha: float
    epochs: tuple[int, ...]
    score: float
    epoch_scores: np.ndarray
    gamma_scores: dict[float, float] = field(default_factory=dict)


@dataclass(frozen=True)
class RunSummary:
    run: int
    thresholds: np.ndarray
    choice: GammaChoice
    validation_prediction: np.ndarray
    run_score: float


@dataclass(frozen=True)
class EnsembleDecision:
    chosen_run: int
    thresholds: np.ndarray
    epochs: tuple[int, ...]
    alpha: float
    gamma: float
    validation_score: float
    config: EnsembleConfig
    runs: tuple[RunSummary, ...]
    test_predictions: np.ndarray | None = None


def binarize(probs: Sequence[float], tau: float) -> np.ndarray:
    """1 where prob > tau (strict)."""
    return (np.asarray(probs, dtype=float) > tau).astype(np.int8)


def _argmax_first(values: np.ndarray) -> int:
    """Index of the first value within TIE_ATOL of the maximum (NaNs ignored)."""
    if np.isnan(values).all():
        raise UndefinedScoreError("score undefined for every candidate")
    best = np.nanmax(values)
    return int(np.flatnonzero(values >= best - TIE_ATOL)[0])


def threshold_candidates(probs: Sequence[float], grid: str = "unique_probs", bins: int = 100) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if grid == "uniform":
        return np.linspace(0.0, 1.0, bins + 1)
    return np.unique(np.concatenate([[0.0], probs]))


def threshold_scores(probs: Sequence[float], actual: Any, score: Score | str, taus: Sequence[float],
                     T: int = DEFAULT_WINDOW, mask: Any = None) -> np.ndarray:
    """Skill score of ``binarize(probs, tau)`` for every tau at once; NaN where undefined.

    False-alarm weights depend only on the actual labels, so they are fixed per
    sample and summed with a sorted cumulative sum. Miss weights depend on the
    predictions next to each positive, evaluated per positive and threshold.
    """
    score = Score.parse(score)
    y, m = _label_arrays(actual, mask)
    p = np.asarray(probs, dtype=float).ravel()
    if p.shape != y.shape:
        raise ValueError(f"{p.size} probabilities for {y.size} labels")
    taus = np.asarray(taus, dtype=float).ravel()
    pos = m & (y == 1)
    neg = m & (y == 0)
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())

    # hits per tau
    p_pos = np.sort(p[pos])
    tp = (n_pos - np.searchsorted(p_pos, taus, side="right")).astype(float)

    # false alarms per tau (raw and weighted)
    order = np.argsort(p[neg], kind="stable")
    p_neg = p[neg][order]
    n_fp = n_neg - np.searchsorted(p_neg, taus, side="right")
    if score.weighted:
        w_neg = false_positive_weights(y, T, m)[neg][order]
        tail = np.concatenate([np.cumsum(w_neg[::-1])[::-1], [0.0]])
        fp = tail[n_neg - n_fp]
    else:
        fp = n_fp.astype(float)
    tn = (n_neg - n_fp).astype(float)

    if score.weighted and n_pos:
        fn = _weighted_misses(p, y, m, taus, T)
    else:
        fn = n_pos - tp

    with np.errstate(divide="ignore", invalid="ignore"):
        if score in (Score.TSS, Score.WTSS):
            if n_pos == 0 or n_neg == 0:
                return np.full(taus.shape, np.nan)
            out = tp / (tp + fn) - fp / (fp + tn)
        else:
            denom = tp + fp + fn
            out = np.where(denom > 0, tp / np.where(denom > 0, denom, 1.0), np.nan)
    return out


def _weighted_misses(p: np.ndarray, y: np.ndarray, m: np.ndarray, taus: np.ndarray, T: int) -> np.ndarray:
    """Window-weighted miss total for every threshold.

    For one positive the contribution is 0 while tau < p_i and then a step
    function of tau that only changes where tau reaches a neighbour's
    probability. Summing those steps over all positives gives the total.
    """
    idx = np.flatnonzero(m & (y == 1))
    # masked and out-of-range neighbours never alarm
    padded = np.concatenate([np.full(T, -np.inf), np.where(m, p, -np.inf), np.full(T, -np.inf)])
    offs = np.arange(1, T + 1)
    before = padded[idx[:, None] + T - offs]  # (n_pos, T), nearest first
    after = padded[idx[:, None] + T + offs]
    own = p[idx][:, None]
    # a neighbour at or below p_i cannot alarm once tau >= p_i
    brk = np.sort(np.maximum(np.concatenate([own, before, after], axis=1), own), axis=1)  # (n_pos, 2T+1)
    w_vec = 1.0 / np.arange(2, T + 2, dtype=float)
    alarm_before = before[:, None, :] > brk[:, :, None]
    alarm_after = after[:, None, :] > brk[:, :, None]
    quiet = ~alarm_before.any(axis=2) & ~alarm_after.any(axis=2)
    value = np.where(quiet, 2.0, 1.0 - np.max(w_vec * alarm_before, axis=2))
    steps = np.diff(value, axis=1, prepend=0.0)
    order = np.argsort(brk.ravel(), kind="stable")
    at = brk.ravel()[order]
    total = np.concatenate([[0.0], np.cumsum(steps.ravel()[order])])
    return total[np.searchsorted(at, taus, side="right")]


def optimal_threshold(probs: Sequence[float], actual: Any, score: Score | str = Score.TSS,
                      T: int = DEFAULT_WINDOW, mask: Any = None, grid: str = "unique_probs",
                      bins: int = 100) -> float:
    """Threshold in [0, 1] maximizing ``score``; ties go to the smallest threshold.

    Only the induced binarizations matter, so the search runs over 0 and the
    distinct probability values (or a uniform grid if requested).
    """
    taus = threshold_candidates(probs, grid, bins)
    values = threshold_scores(probs, actual, score, taus, T, mask)
    try:
        return float(taus[_argmax_first(values)])
    except UndefinedScoreError:
        raise UndefinedScoreError(f"{Score.parse(score).value} is undefined at every threshold") from None


def select_epochs(val_scores: Sequence[float], alpha: float) -> tuple[int, ...]:
    """Epochs whose validation score is strictly above ``alpha``."""
    scores = np.asarray(val_scores, dtype=float)
    return tuple(int(j) for j in np.flatnonzero(scores > alpha))


def median_vote(votes: Sequence[int]) -> int:
    """Majority of binary votes; an even split returns 1."""
    votes = np.asarray(votes)
    if votes.size == 0:
        raise ValueError("cannot vote on an empty set")
    return int(2 * int(votes.sum()) >= votes.size)


def ensemble_predict(run_probs: np.ndarray, thresholds: Sequence[float], epochs: Sequence[int]) -> np.ndarray:
    """Per-sample median vote over the thresholded predictions of ``epochs``."""
    epochs = list(epochs)
    if not epochs:
        raise ValueError("epoch set is empty")
    run_probs = np.asarray(run_probs, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.shape != (run_probs.shape[0],):
        raise ValueError(f"{thresholds.size} thresholds for {run_probs.shape[0]} epochs")
    sel = np.asarray(epochs)
    if sel.min() < 0 or sel.max() >= run_probs.shape[0]:
        raise IndexError("epoch index out of range")
    votes = run_probs[sel] > thresholds[sel, None]
    return (2 * votes.sum(axis=0) >= len(epochs)).astype(np.int8)


def _safe_score(score: Score, actual: Any, predicted: np.ndarray, T: int) -> float:
    try:
        return compute_score(score, actual, predicted, T)
    except UndefinedScoreError:
        return float("nan")


def epoch_thresholds(run_probs: np.ndarray, train_labels: Any, cfg: EnsembleConfig) -> np.ndarray:
    """Optimal threshold for each epoch of one run, fitted on training labels."""
    return np.array([
        optimal_threshold(row, train_labels, cfg.selection_score, cfg.T,
                          grid=cfg.threshold_grid, bins=cfg.threshold_bins)
        for row in np.asarray(run_probs, dtype=float)
    ])


def tune_gamma(val_probs: np.ndarray, val_labels: Any, thresholds: Sequence[float],
               cfg: EnsembleConfig) -> GammaChoice:
    """Pick the level fraction gamma whose ensemble scores best on validation.

    Validation samples must be contiguous and in time order because the
    weighted scores read neighbouring hours.
    """
    val_probs = np.asarray(val_probs, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    score = cfg.selection_score
    epoch_scores = np.array([
        _safe_score(score, val_labels, binarize(row, tau), cfg.T)
        for row, tau in zip(val_probs, thresholds)
    ])
    if np.isnan(epoch_scores).all():
        raise UndefinedScoreError(f"validation {score.value} undefined for every epoch")
    best_epoch = float(np.nanmax(epoch_scores))
    ranked = np.where(np.isnan(epoch_scores), -np.inf, epoch_scores)

    gamma_scores: dict[float, float] = {}
    candidates = []
    for gamma in cfg.gammas():
        alpha = float(gamma) * best_epoch
        epochs = select_epochs(ranked, alpha)
        if not epochs:
            continue
        pred = ensemble_predict(val_probs, thresholds, epochs)
        value = _safe_score(score, val_labels, pred, cfg.T)
        gamma_scores[float(gamma)] = value
        candidates.append((float(gamma), alpha, epochs, value))
    if not candidates:
        raise UndefinedScoreError("no gamma in the grid selects any epoch")
    values = np.array([c[3] for c in candidates])
    gamma, alpha, epochs, value = candidates[_argmax_first(values)]
    return GammaChoice(gamma, alpha, epochs, value, epoch_scores, gamma_scores)


def _run_arrays(matrix: Any) -> np.ndarray:
    probs = getattr(matrix, "probs", matrix)
    probs = np.asarray(probs, dtype=float)
    return probs[None] if probs.ndim == 2 else probs


def evaluate_run(train_probs: np.ndarray, train_labels: Any, val_probs: np.ndarray, val_labels: Any,
                 cfg: EnsembleConfig, run: int = 0) -> RunSummary:
    thresholds = epoch_thresholds(train_probs, train_labels, cfg)
    choice = tune_gamma(val_probs, val_labels, thresholds, cfg)
    pred = ensemble_predict(val_probs, thresholds, choice.epochs)
    return RunSummary(run, thresholds, choice, pred, _safe_score(cfg.run_score, val_labels, pred, cfg.T))


def select_run(train: Any, train_labels: Any, validation: Any, val_labels: Any,
               cfg: EnsembleConfig | None = None, test: Any = None) -> EnsembleDecision:
    """Run the full strategy on every run and keep the best on validation.

    ``train``, ``validation`` and ``test`` are :class:`EpochPredictionMatrix`
    objects or ``(runs, epochs, samples)`` arrays.
    """
    cfg = cfg or EnsembleConfig()
    train_p, val_p = _run_arrays(train), _run_arrays(validation)
    if train_p.shape[:2] != val_p.shape[:2]:
        raise ValueError("train and validation matrices disagree on runs/epochs")
    if train_p.shape[0] < 1:
        raise ValueError("need at least one run")
    summaries = []
    for k in range(train_p.shape[0]):
        try:
            summaries.append(evaluate_run(train_p[k], train_labels, val_p[k], val_labels, cfg, run=k))
        except UndefinedScoreError:
            continue
    if not summaries:
        raise UndefinedScoreError("no run produced a defined validation score")
    run_scores = np.array([s.run_score for s in summaries])
    best = summaries[_argmax_first(run_scores)]

    test_pred = None
    if test is not None:
        test_p = _run_arrays(test)
        if test_p.shape[:2] != train_p.shape[:2]:
            raise ValueError("test matrix disagrees on runs/epochs")
        test_pred = ensemble_predict(test_p[best.run], best.thresholds, best.choice.epochs)
    return EnsembleDecision(
        chosen_run=best.run,
        thresholds=best.thresholds,
        epochs=best.choice.epochs,
        alpha=best.choice.alpha,
        gamma=best.choice.gamma,
        validation_score=best.run_score,
        config=cfg,
        runs=tuple(summaries),
        test_predictions=test_pred,
    )


def _num(x: float) -> float | None:
    return None if x is None or not np.isfinite(x) else float(x)


def decision_to_json(decision: EnsembleDecision, timestamps: Sequence[str] | None = None) -> dict:
    """JSON-ready record; runs and epochs numbered from 1."""
    cfg = decision.config
    out = {
        "selection_score": cfg.selection_score.value,
        "run_score": cfg.run_score.value,
        "T": cfg.T,
        "gamma_grid": [cfg.gamma0, cfg.gamma1, cfg.gamma_step],
        "chosen_run": decision.chosen_run + 1,
        "gamma": decision.gamma,
        "alpha": decision.alpha,
        "epochs": [j + 1 for j in decision.epochs],
        "thresholds": [float(t) for t in decision.thresholds],
        "validation_score": _num(decision.validation_score),
        "runs": [
            {
                "run": s.run + 1,
                "gamma": s.choice.gamma,
                "alpha": s.choice.alpha,
                "epochs": [j + 1 for j in s.choice.epochs],
                "validation_score": _num(s.run_score),
            }
            for s in decision.runs
        ],
    }
    if decision.test_predictions is not None:
        out["predictions"] = [int(v) for v in decision.test_predictions]
        if timestamps is not None:
            out["timestamps"] = [str(t) for t in timestamps]
    return out


__all__ = [
    "EnsembleConfig",
    "EnsembleDecision",
    "EpochPredictionMatrix",
    "GammaChoice",
    "LabelSeries",
    "RunSummary",
    "binarize",
    "decision_to_json",
    "ensemble_predict",
    "epoch_thresholds",
    "evaluate_run",
    "median_vote",
    "optimal_threshold",
    "select_epochs",
    "select_run",
    "threshold_candidates",
    "threshold_scores",
    "tune_gamma",
]

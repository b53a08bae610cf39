"""Quality-based and value-weighted contingency tables for binary event forecasts.

The value-weighted table keeps TN and TP from the classical table but replaces
the error counts with sums of per-sample weights that look at a window of
``T`` neighbouring hours. A false alarm that anticipates an actual event, or a
miss that follows a raised alarm, is discounted; an error isolated in a quiet
``2T + 1`` window counts double.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_WINDOW = 3


class AlignmentError(ValueError):
    """Label and prediction series do not line up index for index."""


class UndefinedScoreError(ValueError):
    """A skill score's denominator vanishes for the given table."""


class Score(str, enum.Enum):
    TSS = "tss"
    WTSS = "wtss"
    CSI = "csi"
    WCSI = "wcsi"

    @property
    def weighted(self) -> bool:
        return self in (Score.WTSS, Score.WCSI)

    @classmethod
    def parse(cls, value: "Score | str") -> "Score":
        if isinstance(value, Score):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown score {value!r}; expected one of {choices}") from None


@dataclass(frozen=True, eq=False)
class LabelSeries:
    """Hourly binary labels with a presence mask (``True`` = observed)."""

    values: np.ndarray
    timestamps: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values).astype(np.int8).ravel()
        if values.size and not np.isin(values, (0, 1)).all():
            raise ValueError("label values must be 0 or 1")
        stamps = np.asarray(self.timestamps, dtype="datetime64[s]").ravel()
        mask = np.ones(values.shape, dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool).ravel()
        if not (values.size == stamps.size == mask.size):
            raise AlignmentError(
                f"values ({values.size}), timestamps ({stamps.size}) and mask ({mask.size}) differ in length"
            )
        if stamps.size > 1 and not (np.diff(stamps) > np.timedelta64(0, "s")).all():
            raise ValueError("timestamps must be strictly increasing")
        # masked entries never act as events
        values = np.where(mask, values, 0).astype(np.int8)
        for name, arr in (("values", values), ("timestamps", stamps), ("mask", mask)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def hourly(cls, values: Sequence[int], start: str | np.datetime64 = "2019-01-01T00:00:00",
               mask: Sequence[bool] | None = None) -> "LabelSeries":
        n = len(values)
        stamps = np.datetime64(start, "s") + np.arange(n) * np.timedelta64(1, "h")
        return cls(np.asarray(values), stamps, None if mask is None else np.asarray(mask))

    def __len__(self) -> int:
        return int(self.values.size)

    def __getitem__(self, item: slice) -> "LabelSeries":
        if not isinstance(item, slice):
            raise TypeError("LabelSeries supports slicing only")
        return LabelSeries(self.values[item], self.timestamps[item], self.mask[item])

    @property
    def n_positive(self) -> int:
        return int(self.values[self.mask].sum())

    @property
    def n_negative(self) -> int:
        return int(self.mask.sum()) - self.n_positive


@dataclass(frozen=True)
class ScoreTable:
    """2x2 table with real-valued entries; covers quality and value-weighted cases."""

    tn: float
    fp: float
    fn: float
    tp: float

    def __post_init__(self):
        for name in ("tn", "fp", "fn", "tp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def as_dict(self) -> dict[str, float]:
        return {"tn": self.tn, "fp": self.fp, "fn": self.fn, "tp": self.tp}


@dataclass(frozen=True)
class WeightWindowConfig:
    T: int = DEFAULT_WINDOW
    edge_policy: str = "pad_zero"

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ValueError("window length T must be a positive integer")
        if self.edge_policy != "pad_zero":
            raise ValueError(f"unsupported edge policy {self.edge_policy!r}")

    @property
    def w_vec(self) -> np.ndarray:
        """(1/2, 1/3, ..., 1/(T+1))."""
        return 1.0 / np.arange(2, self.T + 2, dtype=float)


def _as_config(cfg: WeightWindowConfig | int | None) -> WeightWindowConfig:
    if cfg is None:
        return WeightWindowConfig()
    if isinstance(cfg, WeightWindowConfig):
        return cfg
    return WeightWindowConfig(int(cfg))


def _label_arrays(actual: Any, mask: Any = None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(actual, LabelSeries):
        y = actual.values
        m = actual.mask if mask is None else actual.mask & np.asarray(mask, dtype=bool).ravel()
    else:
        y = np.asarray(actual).astype(np.int8).ravel()
        m = np.ones(y.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).ravel()
    if m.shape != y.shape:
        raise AlignmentError(f"mask has {m.size} entries for {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("label values must be 0 or 1")
    return np.where(m, y, 0).astype(np.int8), m


def _unpack(actual: Any, predicted: Any, mask: Any = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    y, m = _label_arrays(actual, mask)
    yhat = np.asarray(getattr(predicted, "values", predicted)).astype(np.int8).ravel()
    if yhat.shape != y.shape:
        raise AlignmentError(f"actual has {y.size} samples but prediction has {yhat.size}")
    if not np.isin(yhat, (0, 1)).all():
        raise ValueError("prediction values must be 0 or 1")
    return y, np.where(m, yhat, 0).astype(np.int8), m


def confusion_matrix(actual: Any, predicted: Any, mask: Any = None) -> ScoreTable:
    """Classical counts over unmasked samples."""
    y, yhat, m = _unpack(actual, predicted, mask)
    y, yhat = y[m], yhat[m]
    return ScoreTable(
        tn=float(np.sum((y == 0) & (yhat == 0))),
        fp=float(np.sum((y == 0) & (yhat == 1))),
        fn=float(np.sum((y == 1) & (yhat == 0))),
        tp=float(np.sum((y == 1) & (yhat == 1))),
    )


def tss(table: ScoreTable) -> float:
    """True Skill Statistic: hit rate minus false-alarm rate."""
    if table.tp + table.fn <= 0 or table.fp + table.tn <= 0:
        raise UndefinedScoreError("TSS needs at least one actual positive and one actual negative")
    return table.tp / (table.tp + table.fn) - table.fp / (table.fp + table.tn)


def csi(table: ScoreTable) -> float:
    """Critical Success Index TP / (TP + FP + FN)."""
    denom = table.tp + table.fp + table.fn
    if denom <= 0:
        raise UndefinedScoreError("CSI needs TP + FP + FN > 0")
    return table.tp / denom


# The weighted scores are the same formulas evaluated on a value-weighted table.
wtss = tss
wcsi = csi


def window_before(series: Any, i: int, T: int) -> np.ndarray:
    """(v[i-1], v[i-2], ..., v[i-T]), zero-padded before the start."""
    v = np.asarray(getattr(series, "values", series))
    if not 0 <= i < v.size:
        raise IndexError(f"index {i} out of range for series of length {v.size}")
    out = np.zeros(T, dtype=np.int8)
    for k in range(1, T + 1):
        if i - k >= 0:
            out[k - 1] = v[i - k]
    return out


def window_after(series: Any, i: int, T: int) -> np.ndarray:
    """(v[i+1], ..., v[i+T]), zero-padded past the end."""
    v = np.asarray(getattr(series, "values", series))
    if not 0 <= i < v.size:
        raise IndexError(f"index {i} out of range for series of length {v.size}")
    out = np.zeros(T, dtype=np.int8)
    for k in range(1, T + 1):
        if i + k < v.size:
            out[k - 1] = v[i + k]
    return out


def weight(s: Sequence[int], t: Sequence[int], cfg: WeightWindowConfig | int | None = None) -> float:
    """Error weight for one sample given its two neighbouring windows.

    Returns 2 when both windows are empty; otherwise ``1 - max(w_vec * t)``,
    which depends on ``t`` alone.
    """
    s = np.asarray(s)
    t = np.asarray(t)
    cfg = _as_config(cfg if cfg is not None else (len(t) or None))
    if s.shape != (cfg.T,) or t.shape != (cfg.T,):
        raise ValueError(f"both windows must have length T={cfg.T}, got {s.shape} and {t.shape}")
    if not s.any() and not t.any():
        return 2.0
    return float(1.0 - np.max(cfg.w_vec * t))


def _all_windows(v: np.ndarray, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Before/after windows for every index, shape (n, T) each."""
    n = v.size
    pad = np.zeros(T, dtype=v.dtype)
    win = sliding_window_view(np.concatenate([pad, v, pad]), T)
    before = win[:n, ::-1]
    after = win[T + 1:T + 1 + n]
    return before, after


def _row_weights(s: np.ndarray, t: np.ndarray, w_vec: np.ndarray) -> np.ndarray:
    quiet = ~s.any(axis=1) & ~t.any(axis=1)
    return np.where(quiet, 2.0, 1.0 - np.max(w_vec * t, axis=1))


def false_positive_weights(actual: Any, cfg: WeightWindowConfig | int | None = None, mask: Any = None) -> np.ndarray:
    """Weight each index would carry if it were a false alarm (uses actual-label windows)."""
    cfg = _as_config(cfg)
    y, _ = _label_arrays(actual, mask)
    before, after = _all_windows(y, cfg.T)
    return _row_weights(before, after, cfg.w_vec)


def value_weighted_confusion_matrix(actual: Any, predicted: Any, cfg: WeightWindowConfig | int | None = None,
                                    mask: Any = None) -> ScoreTable:
    """TN/TP as usual; FP and FN replaced by window-weighted sums.

    False alarms are weighted with ``weight(z_before, z_after)`` on the actual
    labels, misses with ``weight(zhat_after, zhat_before)`` on the predictions.
    Masked samples are not counted and read as zeros inside windows.
    """
    cfg = _as_config(cfg)
    y, yhat, m = _unpack(actual, predicted, mask)
    fp_idx = m & (y == 0) & (yhat == 1)
    fn_idx = m & (y == 1) & (yhat == 0)
    wfp = wfn = 0.0
    if fp_idx.any():
        before, after = _all_windows(y, cfg.T)
        wfp = float(_row_weights(before[fp_idx], after[fp_idx], cfg.w_vec).sum())
    if fn_idx.any():
        before, after = _all_windows(yhat, cfg.T)
        wfn = float(_row_weights(after[fn_idx], before[fn_idx], cfg.w_vec).sum())
    return ScoreTable(
        tn=float(np.sum(m & (y == 0) & (yhat == 0))),
        fp=wfp,
        fn=wfn,
        tp=float(np.sum(m & (y == 1) & (yhat == 1))),
    )


def compute_score(score: Score | str, actual: Any, predicted: Any, T: int = DEFAULT_WINDOW, mask: Any = None) -> float:
    score = Score.parse(score)
    if score.weighted:
        table = value_weighted_confusion_matrix(actual, predicted, T, mask)
    else:
        table = confusion_matrix(actual, predicted, mask)
    return tss(table) if score in (Score.TSS, Score.WTSS) else csi(table)


def score_report(actual: Any, predicted: Any, T: int = DEFAULT_WINDOW, mask: Any = None) -> dict[str, float]:
    """Both tables and all four scores, keyed for JSON output."""
    quality = confusion_matrix(actual, predicted, mask)
    weighted = value_weighted_confusion_matrix(actual, predicted, T, mask)
    return {
        "tn": quality.tn,
        "fp": quality.fp,
        "fn": quality.fn,
        "tp": quality.tp,
        "tss": tss(quality),
        "csi": csi(quality),
        "wfp": weighted.fp,
        "wfn": weighted.fn,
        "wtss": wtss(weighted),
        "wcsi": wcsi(weighted),
        "T": int(T),
    }

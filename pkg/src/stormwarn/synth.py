"""Seeded synthetic data: event streams, epoch probability trajectories, features, radar scenes.

Every generator is a pure function of its config. Independent random streams
are derived by hashing ``(seed, stream name)`` so adding a stream never
perturbs another.
"""

from __future__ import annotations

import datetime as dt
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .ensemble import EpochPredictionMatrix
from .labeling import EventLabel, LightningRecord, RainGrid
from .verify import LabelSeries

REFERENCE_EVENT_RATE = 105 / 7128

SCENE_CATEGORIES = ("qualifying", "rain_only", "isolated", "null")


def child_rng(seed: int, stream: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{int(seed)}:{stream}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    length: int = 7128
    base_event_rate: float = REFERENCE_EVENT_RATE
    persistence: float = 0.5
    skill: float = 1.0
    noise_per_epoch: float = 0.3
    run_skill_spread: float = 0.0
    start: str = "2018-07-09T21:00:00"

    def __post_init__(self):
        for name in ("base_event_rate", "persistence", "run_skill_spread"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.length < 1:
            raise ValueError("length must be >= 1")
        if self.skill < 0 or self.noise_per_epoch < 0:
            raise ValueError("skill and noise must be non-negative")


def generate_event_stream(cfg: SynthConfig) -> LabelSeries:
    """Two-state Markov chain with stationary positive rate ``base_event_rate``.

    ``persistence`` is P(event | event in the previous hour); the onset
    probability is solved so the stationary rate matches.
    """
    rng = child_rng(cfg.seed, "events")
    rate, stay = cfg.base_event_rate, cfg.persistence
    if rate >= 1.0:
        onset = 1.0
    else:
        onset = min(1.0, rate * (1.0 - stay) / (1.0 - rate))
    u = rng.random(cfg.length)
    values = np.zeros(cfg.length, dtype=np.int8)
    state = int(u[0] < rate)
    values[0] = state
    for i in range(1, cfg.length):
        state = int(u[i] < (stay if state else onset))
        values[i] = state
    return LabelSeries.hourly(values, start=cfg.start)


def _anticipation_signal(y: np.ndarray, lead: float = 0.6, lag: float = 0.4) -> np.ndarray:
    """Event indicator smeared one hour forward and back (precursors and decay)."""
    nxt = np.concatenate([y[1:], [0]])
    prev = np.concatenate([[0], y[:-1]])
    return np.maximum.reduce([y.astype(float), lead * nxt, lag * prev])


def generate_probability_trajectories(labels: LabelSeries | np.ndarray, n_epochs: int, cfg: SynthConfig,
                                      n_runs: int = 1, split: str = "test") -> EpochPredictionMatrix:
    """Per-run, per-epoch probabilities emulating a training curve.

    Class separation grows with the epoch index and plateaus; each epoch adds
    its own noise and calibration offset. With ``run_skill_spread > 0`` runs
    differ in attainable skill, as different random initializations do.
    """
    if n_epochs < 1 or n_runs < 1:
        raise ValueError("need at least one epoch and one run")
    y = np.asarray(getattr(labels, "values", labels)).astype(np.int8)
    signal = _anticipation_signal(y)
    n = y.size
    out = np.empty((n_runs, n_epochs, n))
    for r in range(n_runs):
        rng = child_rng(cfg.seed, f"trajectory:run{r}")
        run_skill = cfg.skill * rng.uniform(1.0 - cfg.run_skill_spread, 1.0 + cfg.run_skill_spread)
        base_noise = rng.normal(size=n)
        for e in range(n_epochs):
            growth = 1.0 - np.exp(-4.0 * (e + 1) / n_epochs)
            offset = rng.normal(0.0, 0.25)
            logit = 3.0 * run_skill * growth * signal + base_noise + cfg.noise_per_epoch * rng.normal(size=n)
            out[r, e] = expit(logit + offset - 2.5)
    return EpochPredictionMatrix(out, split)


def generate_features(labels: LabelSeries | np.ndarray, n_features: int, cfg: SynthConfig) -> np.ndarray:
    """Noisy feature vectors whose mean shifts with the (anticipatory) event signal."""
    if n_features < 1:
        raise ValueError("n_features must be >= 1")
    y = np.asarray(getattr(labels, "values", labels)).astype(np.int8)
    rng = child_rng(cfg.seed, "features")
    direction = rng.normal(size=n_features)
    direction *= 2.0 / np.linalg.norm(direction)
    signal = _anticipation_signal(y)
    return cfg.skill * np.outer(signal, direction) + rng.normal(size=(y.size, n_features))


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    rows: int = 30
    cols: int = 30
    lat0: float = 44.0
    lon0: float = 8.5
    dlat: float = 0.008929
    dlon: float = 0.013267
    start: dt.datetime = dt.datetime(2019, 10, 3, 15, 0)
    missing_fraction: float = 0.01


@dataclass(frozen=True)
class Scene:
    category: str
    grid: RainGrid
    strikes: tuple[LightningRecord, ...]
    expected: EventLabel


def _background(rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    values = rng.uniform(0.0, 45.0, (cfg.rows, cfg.cols))
    values[rng.random(values.shape) < 0.5] = 0.0
    # boundary values never exceed the threshold
    values[rng.random(values.shape) < 0.02] = 50.0
    return values


def _blob(rng: np.random.Generator, cfg: SceneConfig) -> list[tuple[int, int]]:
    size = int(rng.integers(3, 9))
    r0 = int(rng.integers(3, cfg.rows - 3))
    c0 = int(rng.integers(3, cfg.cols - 3))
    cells = [(r0, c0)]
    while len(cells) < size:
        r, c = cells[int(rng.integers(len(cells)))]
        dr, dc = ((1, 0), (-1, 0), (0, 1), (0, -1))[int(rng.integers(4))]
        cand = (min(max(r + dr, 1), cfg.rows - 2), min(max(c + dc, 1), cfg.cols - 2))
        if cand not in cells:
            cells.append(cand)
    return sorted(cells)


def _near(rng: np.random.Generator, cfg: SceneConfig, cells: list[tuple[int, int]], when: dt.datetime) -> LightningRecord:
    r, c = cells[int(rng.integers(len(cells)))]
    lat = cfg.lat0 + (r + rng.uniform(-0.3, 0.3)) * cfg.dlat
    lon = cfg.lon0 + (c + rng.uniform(-0.3, 0.3)) * cfg.dlon
    return LightningRecord(when, float(lat), float(lon))


def _far(rng: np.random.Generator, cfg: SceneConfig, when: dt.datetime) -> LightningRecord:
    # at least 0.2 deg (about 22 km) south of the grid
    lat = cfg.lat0 - 0.2 - rng.uniform(0.0, 0.3)
    lon = cfg.lon0 + rng.uniform(0.0, cfg.cols * cfg.dlon)
    return LightningRecord(when, float(lat), float(lon))


def _minutes(t0: dt.datetime, m: float) -> dt.datetime:
    return t0 + dt.timedelta(microseconds=int(round(m * 60e6)))


def _burst(rng, cfg, cells, t0, count, start_min, span_min):
    offsets = np.sort(rng.uniform(0.0, span_min, count))
    offsets[0], offsets[-1] = 0.0, span_min
    return [_near(rng, cfg, cells, _minutes(t0, start_min + o)) for o in offsets]


def generate_rain_lightning_scene(cfg: SceneConfig, category: str | None = None, index: int = 0) -> Scene:
    """One hourly raster plus strikes, with the label the event rules imply by construction.

    Categories: ``qualifying`` (patch of >= 3 wet cells and a burst of >= 10
    strikes in under 10 minutes), ``rain_only`` (patch, but the lightning
    condition fails), ``isolated`` (only single or paired over-threshold
    cells, e.g. spurious echoes) and ``null``.
    """
    rng = child_rng(cfg.seed, f"scene{index}")
    if category is None:
        category = SCENE_CATEGORIES[int(rng.integers(len(SCENE_CATEGORIES)))]
    if category not in SCENE_CATEGORIES:
        raise ValueError(f"unknown scene category {category!r}")
    t0 = cfg.start + dt.timedelta(hours=index)
    values = _background(rng, cfg)
    strikes: list[LightningRecord] = []
    blob: list[tuple[int, int]] = []

    if category in ("qualifying", "rain_only"):
        blob = _blob(rng, cfg)
        for r, c in blob:
            values[r, c] = rng.uniform(50.5, 120.0)

    if category == "qualifying":
        span = rng.uniform(0.0, 9.5)
        strikes += _burst(rng, cfg, blob, t0, int(rng.integers(10, 17)), rng.uniform(0.0, 59.0 - span), span)
    elif category == "rain_only":
        variant = int(rng.integers(3))
        if variant == 0:
            for _ in range(int(rng.integers(0, 10))):
                strikes.append(_near(rng, cfg, blob, _minutes(t0, rng.uniform(0.0, 59.9))))
        elif variant == 1:
            count = int(rng.integers(10, 21))
            gaps = rng.uniform(1.2, 2.8, count - 1)
            start = rng.uniform(0.0, 59.5 - gaps.sum())
            times = start + np.concatenate([[0.0], np.cumsum(gaps)])
            strikes += [_near(rng, cfg, blob, _minutes(t0, m)) for m in times]
        else:
            # a qualifying burst, but in the neighbouring hour
            before = bool(rng.integers(2))
            start = -9.9 if before else 60.0
            strikes += _burst(rng, cfg, blob, t0, 12, start, 9.0)
    elif category == "isolated":
        cells: list[tuple[int, int]] = []
        for _ in range(int(rng.integers(1, 6))):
            r, c = int(rng.integers(1, cfg.rows - 2)), int(rng.integers(1, cfg.cols - 2))
            if all(abs(r - a) > 2 or abs(c - b) > 2 for a, b in cells):
                cells.append((r, c))
        for r, c in cells:
            values[r - 1:r + 2, c - 1:c + 2] = np.minimum(values[r - 1:r + 2, c - 1:c + 2], 50.0)
            values[r, c] = rng.uniform(60.0, 200.0)
        r, c = cells[0]
        if rng.integers(2):
            # a wet pair flanked by cells exactly at the threshold
            values[r, c + 1] = rng.uniform(60.0, 200.0)
            values[r, c - 1] = 50.0
        strikes += _burst(rng, cfg, cells, t0, 12, rng.uniform(0.0, 50.0), 5.0)

    for _ in range(int(rng.integers(0, 15))):
        strikes.append(_far(rng, cfg, _minutes(t0, rng.uniform(0.0, 59.9))))
    if category == "null" and rng.integers(2):
        anywhere = [(int(rng.integers(cfg.rows)), int(rng.integers(cfg.cols)))]
        strikes += _burst(rng, cfg, anywhere, t0, 12, rng.uniform(0.0, 50.0), 5.0)

    protected = set(blob)
    missing = (rng.random(values.shape) < cfg.missing_fraction) & (values <= 50.0)
    missing &= ~np.array([[(r, c) in protected for c in range(cfg.cols)] for r in range(cfg.rows)])
    values[missing] = np.nan

    strikes.sort(key=lambda s: s.time)
    grid = RainGrid(values, cfg.lat0, cfg.lon0, cfg.dlat, cfg.dlon, t0)
    n_missing = int(missing.sum())
    if category == "qualifying":
        expected = EventLabel(t0, 1, False, tuple(blob), n_missing)
    elif category == "rain_only":
        expected = EventLabel(t0, 0, True, tuple(blob), n_missing)
    else:
        expected = EventLabel(t0, 0, False, (), n_missing)
    return Scene(category, grid, tuple(strikes), expected)


def generate_scenes(n: int, cfg: SceneConfig | None = None) -> list[Scene]:
    cfg = cfg or SceneConfig()
    return [generate_rain_lightning_scene(cfg, index=i) for i in range(n)]

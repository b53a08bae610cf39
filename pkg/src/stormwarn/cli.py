"""Command-line driver: label, train, ensemble, timeline, plus synthetic data helpers.

Exit codes: 0 success, 2 input error, 3 undefined score.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import logging
import sys
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .ensemble import EnsembleConfig, decision_to_json, select_run
from .io import (
    InputError,
    config_digest,
    format_time,
    parse_time,
    read_features_csv,
    read_json,
    read_labels_csv,
    read_matrix_csv,
    read_rain_grid,
    read_strikes_csv,
    write_features_csv,
    write_csv,
    write_json,
    write_labels_csv,
    write_matrix_csv,
    write_rain_grid,
    write_snapshots,
    write_strikes_csv,
)
from .labeling import LabelParams, label_hours
from .nn.toy import TrainConfig, TrainingDivergedError, train_toy_classifier
from .synth import SceneConfig, SynthConfig, child_rng, generate_event_stream, generate_features, generate_scenes
from .verify import AlignmentError, LabelSeries, Score, UndefinedScoreError, score_report

logger = logging.getLogger("stormwarn")

EXIT_INPUT = 2
EXIT_UNDEFINED = 3

# chronological split proportions of the reference archive (7128 / 1296 / 1899 samples)
DEFAULT_SPLIT_FRACTIONS = (7128 / 10323, 1296 / 10323, 1899 / 10323)

DEFAULTS: dict[str, dict[str, Any]] = {
    "label": {"threshold": 50.0, "min_pixels": 3, "connectivity": "four", "radius_km": 5.0,
              "window_min": 10.0, "min_strikes": 10},
    "train": {"runs": 10, "epochs": 100, "lr": 0.001, "batch_size": 72, "hidden": 16, "seed": 0,
              "train": None, "validation": None, "test": None, "split_fractions": None},
    "ensemble": {"score": "wtss", "run_score": None, "window": 3, "gamma_grid": "0.80:0.99:0.01",
                 "threshold_grid": "unique_probs"},
    "timeline": {},
    "synth-series": {"seed": 0, "length": 2000, "features": 6, "rate": 105 / 7128, "persistence": 0.5,
                     "skill": 1.5, "gaps": 2},
    "synth-scenes": {"seed": 0, "count": 24},
}

# keys that name files or directories; kept out of the config digest
PATH_KEYS = {"out", "config", "features", "labels", "rain_dir", "strikes", "matrices", "decision"}


def _interval(text: str) -> tuple[dt.datetime, dt.datetime]:
    try:
        start, end = text.split("/")
        a, b = parse_time(start), parse_time(end)
    except ValueError:
        raise InputError(f"split interval must look like START/END, got {text!r}") from None
    if not a < b:
        raise InputError(f"split interval {text!r} is empty")
    return a, b


def _gamma_grid(text: str) -> tuple[float, float, float]:
    try:
        g0, g1, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise InputError(f"--gamma-grid must be a:b:step, got {text!r}") from None
    return g0, g1, step


def _file_sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _settings(args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the JSON config file, then explicit flags."""
    merged = dict(DEFAULTS[args.command])
    if getattr(args, "config", None):
        cfg = read_json(args.config)
        if not isinstance(cfg, dict):
            raise InputError(f"{args.config}: config must be a JSON object")
        merged.update({k.replace("-", "_"): v for k, v in cfg.items()})
    merged.update({k: v for k, v in vars(args).items() if k not in ("command", "func", "config", "verbose")})
    return merged


def _digest(settings: dict[str, Any], inputs: dict[str, Path] | None = None) -> str:
    payload = {k: v for k, v in settings.items() if k not in PATH_KEYS}
    payload["tool_version"] = __version__
    if inputs:
        payload["inputs"] = {name: _file_sha(p) for name, p in sorted(inputs.items()) if p.is_file()}
    return config_digest(payload)


# label ---------------------------------------------------------------------

def cmd_label(s: dict[str, Any]) -> int:
    rain_dir = Path(s["rain_dir"])
    if not rain_dir.is_dir():
        raise InputError(f"{rain_dir}: not a directory")
    strikes_path = Path(s["strikes"])
    params = LabelParams(rain_threshold=float(s["threshold"]), min_pixels=int(s["min_pixels"]),
                         connectivity=s["connectivity"], radius_km=float(s["radius_km"]),
                         window_min=float(s["window_min"]), min_strikes=int(s["min_strikes"]))
    headers = sorted(rain_dir.glob("*.json"))
    digest = _digest(s, {"strikes": strikes_path})
    out = Path(s["out"])
    if not headers:
        logger.warning("no rain grids found in %s; writing an empty label file", rain_dir)
        write_labels_csv(out, LabelSeries(np.zeros(0), np.zeros(0, dtype="datetime64[s]")), [], digest)
        return 0
    grids = [read_rain_grid(h) for h in headers]
    strikes = read_strikes_csv(strikes_path)
    labels = label_hours(grids, strikes, params)
    stamps = np.array([np.datetime64(lab.timestamp, "s") for lab in labels])
    if stamps.size > 1 and not (np.diff(stamps) > np.timedelta64(0, "s")).all():
        raise InputError(f"{rain_dir}: two rain grids share a timestamp")
    grids_by_time = {g.timestamp: g for g in grids}
    present = [not np.isnan(grids_by_time[lab.timestamp].values).all() for lab in labels]
    series = LabelSeries(np.array([lab.label for lab in labels]), stamps, np.array(present))
    write_labels_csv(out, series, [lab.rain_only for lab in labels], digest)
    logger.info("labelled %d hours (%d events, %d rain-only)", len(labels), series.n_positive,
                sum(lab.rain_only for lab in labels))
    return 0


# train ---------------------------------------------------------------------

def _split_bounds(s: dict[str, Any], stamps: np.ndarray) -> dict[str, tuple[dt.datetime, dt.datetime]]:
    names = ("train", "validation", "test")
    if any(s.get(n) for n in names):
        if not all(s.get(n) for n in names):
            raise InputError("give all of --train, --validation and --test, or none")
        bounds = {n: _interval(s[n]) for n in names}
    else:
        fracs = s.get("split_fractions") or DEFAULT_SPLIT_FRACTIONS
        if isinstance(fracs, str):
            fracs = [float(v) for v in fracs.split(",")]
        fracs = np.asarray(fracs, dtype=float)
        if fracs.shape != (3,) or (fracs <= 0).any():
            raise InputError("split fractions must be three positive numbers")
        n = stamps.size
        c1, c2 = np.round(np.cumsum(fracs / fracs.sum())[:2] * n).astype(int)
        if not 0 < c1 < c2 < n:
            raise InputError(f"too few samples ({n}) for the requested split fractions")
        edges = [stamps[0].item(), stamps[c1].item(), stamps[c2].item(), stamps[-1].item() + dt.timedelta(seconds=1)]
        bounds = {name: (edges[i], edges[i + 1]) for i, name in enumerate(names)}
    ordered = [bounds[n] for n in names]
    for (a0, a1), (b0, b1), na, nb in zip(ordered, ordered[1:], names, names[1:]):
        if b0 < a1:
            raise InputError(f"{na} and {nb} splits overlap or are out of chronological order")
    if ordered[0][0] >= ordered[2][1]:
        raise InputError("splits are empty")
    return bounds


def _select(stamps: np.ndarray, bounds: tuple[dt.datetime, dt.datetime]) -> np.ndarray:
    lo, hi = (np.datetime64(b, "s") for b in bounds)
    return np.flatnonzero((stamps >= lo) & (stamps < hi))


def cmd_train(s: dict[str, Any]) -> int:
    feat_path, label_path = Path(s["features"]), Path(s["labels"])
    stamps, x = read_features_csv(feat_path)
    labels, _ = read_labels_csv(label_path)
    if stamps.shape != labels.timestamps.shape or (stamps != labels.timestamps).any():
        raise InputError(f"{feat_path} and {label_path} do not share the same timestamps")
    bounds = _split_bounds(s, stamps)
    idx = {name: _select(stamps, b) for name, b in bounds.items()}
    for name, rows in idx.items():
        if rows.size == 0:
            raise InputError(f"{name} split selects no samples")

    tr = idx["train"]
    fit = tr[labels.mask[tr]]
    mean, std = x[fit].mean(axis=0), x[fit].std(axis=0)
    xs = (x - mean) / np.where(std > 0, std, 1.0)
    digest = _digest(s, {"features": feat_path, "labels": label_path})
    out = Path(s["out"])
    n_runs, n_epochs = int(s["runs"]), int(s["epochs"])
    runs = []
    for k in range(1, n_runs + 1):
        seed_k = int(child_rng(int(s["seed"]), f"train:run{k}").integers(2**31 - 1))
        cfg = TrainConfig(epochs=n_epochs, learning_rate=float(s["lr"]), batch_size=int(s["batch_size"]),
                          hidden=int(s["hidden"]), seed=seed_k)
        result = train_toy_classifier(xs[fit], labels.values[fit], cfg,
                                      eval_sets={name: xs[rows] for name, rows in idx.items()})
        files = {}
        for name, rows in idx.items():
            fname = f"run_{k:02d}_{name}.csv"
            write_matrix_csv(out / fname, [format_time(t) for t in stamps[rows]], result.probs[name], digest)
            files[name] = fname
        write_snapshots(out / f"run_{k:02d}_params", result.snapshots, seed_k, digest)
        runs.append({"run": k, "seed": seed_k, "files": files, "params": f"run_{k:02d}_params.json",
                     "final_loss": result.losses[-1]})
        logger.info("run %d/%d done (final loss %.4f)", k, n_runs, result.losses[-1])

    write_json(out / "manifest.json", {
        "tool_version": __version__,
        "config_digest": digest,
        "N": n_epochs,
        "M": n_runs,
        "train_config": {"epochs": n_epochs, "learning_rate": float(s["lr"]), "batch_size": int(s["batch_size"]),
                         "hidden": int(s["hidden"]), "seed": int(s["seed"])},
        "splits": {name: [format_time(a), format_time(b)] for name, (a, b) in bounds.items()},
        "inputs": {"features": str(feat_path), "labels": str(label_path)},
        "runs": runs,
    })
    return 0


# ensemble ------------------------------------------------------------------

def _load_split(mdir: Path, manifest: dict, split: str, labels: LabelSeries) -> tuple[np.ndarray, LabelSeries, list[str]]:
    if split not in manifest.get("splits", {}):
        raise InputError(f"{mdir}/manifest.json: missing split {split!r}")
    arrays, ids = [], None
    for run in manifest["runs"]:
        if split not in run.get("files", {}):
            raise InputError(f"{mdir}/manifest.json: run {run.get('run')} lacks split {split!r}")
        run_ids, probs = read_matrix_csv(mdir / run["files"][split])
        if ids is None:
            ids = run_ids
        elif run_ids != ids:
            raise InputError(f"{mdir}: runs disagree on {split} sample ids")
        if probs.shape[0] != manifest["N"]:
            raise InputError(f"{mdir / run['files'][split]}: expected {manifest['N']} epochs")
        arrays.append(probs)
    position = {format_time(t): i for i, t in enumerate(labels.timestamps)}
    try:
        rows = np.array([position[sid] for sid in ids], dtype=int)
    except KeyError as exc:
        raise InputError(f"sample {exc.args[0]} of split {split!r} has no label") from None
    if rows.size > 1 and not (np.diff(rows) > 0).all():
        raise InputError(f"split {split!r} samples are not in time order")
    sub = LabelSeries(labels.values[rows], labels.timestamps[rows], labels.mask[rows])
    return np.stack(arrays), sub, ids


def cmd_ensemble(s: dict[str, Any]) -> int:
    mdir, label_path = Path(s["matrices"]), Path(s["labels"])
    manifest = read_json(mdir / "manifest.json")
    for key in ("runs", "splits", "N", "M"):
        if key not in manifest:
            raise InputError(f"{mdir}/manifest.json: missing key {key!r}")
    labels, _ = read_labels_csv(label_path)
    data = {split: _load_split(mdir, manifest, split, labels) for split in ("train", "validation", "test")}
    g0, g1, step = _gamma_grid(s["gamma_grid"])
    scores = [Score.parse(v) for v in str(s["score"]).split(",")]
    run_scores = [None] * len(scores) if not s.get("run_score") else [Score.parse(v) for v in str(s["run_score"]).split(",")]
    if len(run_scores) == 1 and len(scores) > 1:
        run_scores = run_scores * len(scores)
    if len(run_scores) != len(scores):
        raise InputError("--run-score needs one value or one per --score value")
    T = int(s["window"])
    # hash file contents rather than the manifest, which records input paths
    inputs = {"labels": label_path}
    for run in manifest["runs"]:
        for split, fname in sorted(run["files"].items()):
            inputs[f"run{run['run']}:{split}"] = mdir / fname
    out = Path(s["out"])
    for sel, run_sel in zip(scores, run_scores):
        cfg = EnsembleConfig(sel, run_sel, T, g0, g1, step, s["threshold_grid"])
        digest = _digest({**s, "score": sel.value, "run_score": cfg.run_score.value,
                          "upstream_digest": manifest.get("config_digest")}, inputs)
        (train_p, train_y, _), (val_p, val_y, _), (test_p, test_y, test_ids) = (data[k] for k in ("train", "validation", "test"))
        decision = select_run(train_p, train_y, val_p, val_y, cfg, test=test_p)
        record = decision_to_json(decision, test_ids)
        record["config_digest"] = digest
        record["upstream_digest"] = manifest.get("config_digest")
        tag = sel.value if cfg.run_score == sel else f"{sel.value}_{cfg.run_score.value}"
        write_json(out / f"decision_{tag}.json", record)
        report = score_report(test_y, decision.test_predictions, T)
        write_json(out / f"report_{tag}.json", {"config_digest": digest, "split": "test",
                                                "chosen_run": decision.chosen_run + 1, **report})
        logger.info("%s-ensemble: run %d, test TSS %.4f CSI %.4f wTSS %.4f wCSI %.4f", sel.value,
                    decision.chosen_run + 1, report["tss"], report["csi"], report["wtss"], report["wcsi"])
    return 0


# timeline ------------------------------------------------------------------

def cmd_timeline(s: dict[str, Any]) -> int:
    decision_path, label_path = Path(s["decision"]), Path(s["labels"])
    decision = read_json(decision_path)
    if "predictions" not in decision or "timestamps" not in decision:
        raise InputError(f"{decision_path}: decision carries no test predictions/timestamps")
    preds, stamps = decision["predictions"], decision["timestamps"]
    if len(preds) != len(stamps):
        raise AlignmentError(f"{decision_path}: {len(preds)} predictions for {len(stamps)} timestamps")
    labels, rain_only = read_labels_csv(label_path)
    position = {format_time(t): i for i, t in enumerate(labels.timestamps)}
    rows = []
    for t, p in zip(stamps, preds):
        if t not in position:
            raise AlignmentError(f"{label_path}: no label for decision timestamp {t}")
        i = position[t]
        masked = not labels.mask[i]
        rows.append([t, int(labels.values[i]), int(bool(rain_only[i])) if rain_only is not None else 0,
                     int(p), int(masked)])
    digest = _digest(s, {"decision": decision_path, "labels": label_path})
    write_csv(s["out"], ["timestamp", "actual", "rain_only", "predicted", "masked"], rows, digest)
    return 0


# synthetic data --------------------------------------------------------------

def cmd_synth_series(s: dict[str, Any]) -> int:
    cfg = SynthConfig(seed=int(s["seed"]), length=int(s["length"]), base_event_rate=float(s["rate"]),
                      persistence=float(s["persistence"]), skill=float(s["skill"]))
    labels = generate_event_stream(cfg)
    mask = np.ones(len(labels), dtype=bool)
    rng = child_rng(cfg.seed, "gaps")
    for _ in range(int(s["gaps"])):
        start = int(rng.integers(0, max(1, len(labels) - 12)))
        mask[start:start + int(rng.integers(3, 12))] = False
    labels = LabelSeries(labels.values, labels.timestamps, mask)
    feats = generate_features(labels, int(s["features"]), cfg)
    digest = _digest(s)
    out = Path(s["out"])
    write_labels_csv(out / "labels.csv", labels, digest=digest)
    write_features_csv(out / "features.csv", labels.timestamps, feats, digest)
    logger.info("wrote %d hours with %d events to %s", len(labels), labels.n_positive, out)
    return 0


def cmd_synth_scenes(s: dict[str, Any]) -> int:
    scenes = generate_scenes(int(s["count"]), SceneConfig(seed=int(s["seed"])))
    out = Path(s["out"])
    strikes = []
    for i, scene in enumerate(scenes):
        write_rain_grid(out / "rain", f"hour_{i:05d}", scene.grid, fmt="csv" if i % 2 == 0 else "f32")
        strikes.extend(scene.strikes)
    strikes.sort(key=lambda r: r.time)
    write_strikes_csv(out / "strikes.csv", strikes)
    truth = LabelSeries(np.array([sc.expected.label for sc in scenes]),
                        np.array([np.datetime64(sc.expected.timestamp, "s") for sc in scenes]))
    write_labels_csv(out / "truth.csv", truth, [sc.expected.rain_only for sc in scenes], _digest(s))
    return 0


COMMANDS: dict[str, Callable[[dict[str, Any]], int]] = {
    "label": cmd_label,
    "train": cmd_train,
    "ensemble": cmd_ensemble,
    "timeline": cmd_timeline,
    "synth-series": cmd_synth_series,
    "synth-scenes": cmd_synth_scenes,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stormwarn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, argument_default=S)
        p.add_argument("--config", help="JSON file with settings; flags override it", default=None)
        p.add_argument("-v", "--verbose", action="store_true", default=False)
        return p

    p = add("label", "label hourly rain grids against lightning strikes")
    p.add_argument("--rain-dir", required=True)
    p.add_argument("--strikes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--min-pixels", type=int)
    p.add_argument("--connectivity", choices=("four", "eight"))
    p.add_argument("--radius-km", type=float)
    p.add_argument("--window-min", type=float)
    p.add_argument("--min-strikes", type=int)

    p = add("train", "train M runs of the toy classifier and dump per-epoch probabilities")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train", help="START/END (ISO-8601, end exclusive)")
    p.add_argument("--validation", help="START/END")
    p.add_argument("--test", help="START/END")
    p.add_argument("--split-fractions", help="a,b,c chronological fractions when no intervals are given")
    p.add_argument("--runs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--seed", type=int)

    p = add("ensemble", "select epochs, level and run; write decision and test report")
    p.add_argument("--matrices", required=True, help="directory written by 'train'")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--score", help="tss|wtss|csi|wcsi, comma-separated for several strategies")
    p.add_argument("--run-score")
    p.add_argument("--window", type=int, help="window length T of the weighted scores")
    p.add_argument("--gamma-grid", help="gamma0:gamma1:step (gamma1 excluded)")
    p.add_argument("--threshold-grid", choices=("unique_probs", "uniform"))

    p = add("timeline", "plot-ready per-hour CSV from a decision and labels")
    p.add_argument("--decision", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)

    p = add("synth-series", "write a synthetic labels.csv/features.csv pair")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--features", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--persistence", type=float)
    p.add_argument("--skill", type=float)
    p.add_argument("--gaps", type=int, help="number of missing-data gaps")

    p = add("synth-scenes", "write synthetic rain grids, strikes and their true labels")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](_settings(args))
    except UndefinedScoreError as exc:
        logger.error("undefined score: %s", exc)
        return EXIT_UNDEFINED
    except (InputError, AlignmentError, TrainingDivergedError, FileNotFoundError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

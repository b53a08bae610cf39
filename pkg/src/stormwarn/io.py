"""Readers and writers for the CSV/JSON/binary exchange formats.

CSV files may start with ``#`` comment lines; writers use one to embed the
config digest of the command that produced them.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .labeling import LightningRecord, RainGrid
from .verify import LabelSeries


class InputError(ValueError):
    """Malformed or inconsistent input file."""


def config_digest(config: dict) -> str:
    """sha256 of the canonical JSON form; insensitive to key order."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def format_time(t: Any) -> str:
    """ISO-8601 UTC with a trailing Z; microseconds only when present."""
    if isinstance(t, np.datetime64):
        t = t.astype("datetime64[us]").item()
    if t.tzinfo is not None:
        t = t.astimezone(dt.timezone.utc).replace(tzinfo=None)
    spec = "seconds" if t.microsecond == 0 else "microseconds"
    return t.isoformat(timespec=spec) + "Z"


def parse_time(text: str) -> dt.datetime:
    """Parse ISO-8601; returns a naive datetime in UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    t = dt.datetime.fromisoformat(text)
    if t.tzinfo is not None:
        t = t.astimezone(dt.timezone.utc).replace(tzinfo=None)
    return t


def _rows(path: Path) -> Iterator[tuple[int, list[str]]]:
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, next(csv.reader([line]))


def _read_table(path: str | Path, required: Sequence[str]) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    rows = _rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise InputError(f"{path}: empty file") from None
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise InputError(f"{path}: header lacks column(s) {', '.join(missing)}")
    body = []
    for lineno, row in rows:
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
        body.append((lineno, row))
    return header, body


def read_digest(path: str | Path) -> str | None:
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                return None
            if "config_digest=" in line:
                return line.split("config_digest=", 1)[1].strip()
    return None


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]], digest: str | None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if digest:
            fh.write(f"# config_digest={digest}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_json(path: str | Path, obj: Any) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def _bit(path: Path, lineno: int, text: str, column: str) -> int:
    if text.strip() not in ("0", "1"):
        raise InputError(f"{path}:{lineno}: {column} must be 0 or 1, got {text!r}")
    return int(text)


# label series ----------------------------------------------------------------

def read_labels_csv(path: str | Path) -> tuple[LabelSeries, np.ndarray | None]:
    """Label series plus the optional ``rain_only`` column."""
    path = Path(path)
    header, body = _read_table(path, ("timestamp", "value", "mask"))
    col = {name: i for i, name in enumerate(header)}
    stamps, values, mask, rain_only = [], [], [], []
    for lineno, row in body:
        try:
            stamps.append(np.datetime64(parse_time(row[col["timestamp"]]), "s"))
        except ValueError:
            raise InputError(f"{path}:{lineno}: bad timestamp {row[col['timestamp']]!r}") from None
        values.append(_bit(path, lineno, row[col["value"]], "value"))
        mask.append(_bit(path, lineno, row[col["mask"]], "mask"))
        if "rain_only" in col:
            rain_only.append(_bit(path, lineno, row[col["rain_only"]], "rain_only"))
    try:
        series = LabelSeries(np.array(values, dtype=np.int8), np.array(stamps, dtype="datetime64[s]"),
                             np.array(mask, dtype=bool))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    return series, (np.array(rain_only, dtype=bool) if "rain_only" in col else None)


def write_labels_csv(path: str | Path, series: LabelSeries, rain_only: Sequence[bool] | None = None,
                     digest: str | None = None) -> None:
    header = ["timestamp", "value", "mask"] + (["rain_only"] if rain_only is not None else [])
    rows = []
    for i, (t, v, m) in enumerate(zip(series.timestamps, series.values, series.mask)):
        row = [format_time(t), int(v), int(m)]
        if rain_only is not None:
            row.append(int(bool(rain_only[i])))
        rows.append(row)
    write_csv(path, header, rows, digest)


# epoch prediction matrices ---------------------------------------------------

def write_matrix_csv(path: str | Path, sample_ids: Sequence[str], probs: np.ndarray, digest: str | None = None) -> None:
    probs = np.asarray(probs, dtype=float)
    header = ["sample_id"] + [f"epoch_{j + 1}" for j in range(probs.shape[0])]
    rows = ([sid] + [repr(float(v)) for v in probs[:, i]] for i, sid in enumerate(sample_ids))
    write_csv(path, header, rows, digest)


def read_matrix_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Sample ids and an (epochs, samples) probability array."""
    path = Path(path)
    header, body = _read_table(path, ("sample_id",))
    epochs = header[1:]
    if not epochs or epochs != [f"epoch_{j + 1}" for j in range(len(epochs))]:
        raise InputError(f"{path}: header must be sample_id,epoch_1,...,epoch_N")
    ids, rows = [], []
    for lineno, row in body:
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric probability") from None
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise InputError(f"{path}:{lineno}: probability outside [0, 1]")
        ids.append(row[0])
        rows.append(vals)
    return ids, np.array(rows, dtype=float).T.reshape(len(epochs), len(ids))


# rain grids and strikes ------------------------------------------------------

def write_rain_grid(directory: str | Path, name: str, grid: RainGrid, fmt: str = "csv") -> Path:
    """Write ``<name>.json`` geo-header plus ``<name>.csv`` (row,col,value) or ``<name>.f32``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "timestamp": format_time(grid.timestamp),
        "lat0": grid.lat0,
        "lon0": grid.lon0,
        "dlat": grid.dlat,
        "dlon": grid.dlon,
        "rows": grid.shape[0],
        "cols": grid.shape[1],
        "format": fmt,
    }
    if fmt == "csv":
        header["data"] = f"{name}.csv"
        rows = []
        for (r, c), v in np.ndenumerate(grid.values):
            if np.isnan(v):
                rows.append([r, c, "nan"])
            elif v != 0.0:
                rows.append([r, c, repr(float(v))])
        write_csv(directory / header["data"], ["row", "col", "value"], rows, None)
    elif fmt == "f32":
        header["data"] = f"{name}.f32"
        grid.values.astype("<f4").tofile(directory / header["data"])
    else:
        raise ValueError(f"unknown raster format {fmt!r}")
    write_json(directory / f"{name}.json", header)
    return directory / f"{name}.json"


def read_rain_grid(header_path: str | Path) -> RainGrid:
    """Read a grid from its JSON header. Cells absent from a CSV raster are dry."""
    header_path = Path(header_path)
    meta = read_json(header_path)
    try:
        rows, cols = int(meta["rows"]), int(meta["cols"])
        data = header_path.parent / meta["data"]
        fmt = meta.get("format", "csv")
        stamp = parse_time(meta["timestamp"])
        geo = [float(meta[k]) for k in ("lat0", "lon0", "dlat", "dlon")]
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"{header_path}: bad raster header ({exc})") from None
    if fmt == "f32":
        raw = np.fromfile(data, dtype="<f4").astype(float)
        if raw.size != rows * cols:
            raise InputError(f"{data}: expected {rows * cols} floats, found {raw.size}")
        values = raw.reshape(rows, cols)
    elif fmt == "csv":
        values = np.zeros((rows, cols))
        _, body = _read_table(data, ("row", "col", "value"))
        for lineno, (r, c, v) in body:
            try:
                r, c, v = int(r), int(c), float(v)
            except ValueError:
                raise InputError(f"{data}:{lineno}: expected integer row/col and numeric value") from None
            if not (0 <= r < rows and 0 <= c < cols):
                raise InputError(f"{data}:{lineno}: cell ({r}, {c}) outside {rows}x{cols} grid")
            values[r, c] = v
    else:
        raise InputError(f"{header_path}: unknown raster format {fmt!r}")
    if "missing_value" in meta:
        values[values == float(meta["missing_value"])] = np.nan
    try:
        return RainGrid(values, *geo, stamp)
    except ValueError as exc:
        raise InputError(f"{header_path}: {exc}") from None


def write_strikes_csv(path: str | Path, strikes: Sequence[LightningRecord]) -> None:
    write_csv(path, ["timestamp", "lat", "lon"],
               ([format_time(s.time), repr(s.lat), repr(s.lon)] for s in strikes), None)


def read_strikes_csv(path: str | Path) -> list[LightningRecord]:
    """Strikes sorted by time."""
    path = Path(path)
    _, body = _read_table(path, ("timestamp", "lat", "lon"))
    out = []
    for lineno, (t, lat, lon) in body:
        try:
            out.append(LightningRecord(parse_time(t), float(lat), float(lon)))
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    out.sort(key=lambda s: s.time)
    return out


# features and parameter snapshots --------------------------------------------

def write_features_csv(path: str | Path, timestamps: Sequence[Any], features: np.ndarray, digest: str | None = None) -> None:
    features = np.asarray(features, dtype=float)
    header = ["timestamp"] + [f"f{j + 1}" for j in range(features.shape[1])]
    rows = ([format_time(t)] + [repr(float(v)) for v in row] for t, row in zip(timestamps, features))
    write_csv(path, header, rows, digest)


def read_features_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Timestamps (datetime64[s]) and an (n, d) feature matrix."""
    path = Path(path)
    header, body = _read_table(path, ("timestamp",))
    if len(header) < 2:
        raise InputError(f"{path}: no feature columns")
    stamps, rows = [], []
    for lineno, row in body:
        try:
            stamps.append(np.datetime64(parse_time(row[0]), "s"))
            rows.append([float(v) for v in row[1:]])
        except ValueError:
            raise InputError(f"{path}:{lineno}: bad timestamp or non-numeric feature") from None
    return np.array(stamps, dtype="datetime64[s]"), np.array(rows, dtype=float).reshape(len(rows), len(header) - 1)


def write_snapshots(path_stem: str | Path, snapshots: Sequence[dict[str, np.ndarray]], seed: int,
                    digest: str | None = None) -> None:
    """All epochs' parameters as row-major little-endian float64 plus a JSON manifest."""
    path_stem = Path(path_stem)
    path_stem.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(snapshots[0]) if snapshots else []
    entries, offset = [], 0
    with open(path_stem.with_suffix(".bin"), "wb") as fh:
        for epoch, snap in enumerate(snapshots, start=1):
            for name in names:
                arr = np.ascontiguousarray(snap[name], dtype="<f8")
                fh.write(arr.tobytes())
                entries.append({"epoch": epoch, "name": name, "shape": list(arr.shape), "offset": offset})
                offset += arr.size
    write_json(path_stem.with_suffix(".json"), {
        "data": path_stem.with_suffix(".bin").name,
        "dtype": "<f8",
        "seed": seed,
        "epochs": len(snapshots),
        "arrays": entries,
        "config_digest": digest,
    })


def read_snapshots(manifest_path: str | Path) -> list[dict[str, np.ndarray]]:
    manifest_path = Path(manifest_path)
    meta = read_json(manifest_path)
    flat = np.fromfile(manifest_path.parent / meta["data"], dtype=meta["dtype"])
    out: list[dict[str, np.ndarray]] = [{} for _ in range(meta["epochs"])]
    for e in meta["arrays"]:
        size = int(np.prod(e["shape"], dtype=int))
        out[e["epoch"] - 1][e["name"]] = flat[e["offset"]:e["offset"] + size].reshape(e["shape"]).astype(float)
    return out

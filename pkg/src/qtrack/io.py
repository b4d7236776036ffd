"""File formats for records, trajectory logs, ensembles, fields and metrics.

CSV files start with ``#``-prefixed ``key,value`` header lines followed by a
column header and data written with 17 significant digits, which round-trips
every float64 exactly. The binary format is

    b"QTRK" | uint32 LE header length | UTF-8 JSON header | float64 LE payload

with the payload shape stored in the header.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .phase_space import PhaseSpaceField, PhaseSpaceGrid
from .quantum import MeasurementRecord, TrajectoryLog

__all__ = [
    "write_table_csv",
    "read_table_csv",
    "write_record_csv",
    "read_record_csv",
    "write_record_binary",
    "read_record_binary",
    "write_record",
    "read_record",
    "write_log_csv",
    "read_log_csv",
    "write_ensemble_csv",
    "read_ensemble_csv",
    "write_field_csv",
    "read_field_csv",
    "write_field_binary",
    "read_field_binary",
    "write_json",
    "read_json",
]

MAGIC = b"QTRK"
FMT = "%.17g"


def _fmt(v) -> str:
    return FMT % v


def write_table_csv(path, meta: dict, columns: list[str], data: np.ndarray):
    """Header lines ``# key,value``, a column row, then one row per record."""
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        for key, value in meta.items():
            fh.write(f"# {key},{value}\n")
        fh.write(",".join(columns) + "\n")
        for row in data:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_table_csv(path) -> tuple[dict, list[str], np.ndarray]:
    meta, rows, columns = {}, [], None
    with Path(path).open() as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(",")
                meta[key] = value
            elif columns is None:
                columns = line.split(",")
            else:
                rows.append([float(v) for v in line.split(",")])
    if columns is None:
        raise ValueError(f"{path}: no column header")
    data = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    return meta, columns, data


def _write_binary(path, header: dict, payload: np.ndarray):
    blob = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())


def _read_binary(path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a qtrack binary file")
    (n,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + n].decode())
    payload = np.frombuffer(raw[8 + n :], dtype="<f8").astype(float)
    return header, payload.reshape(header["shape"])


def _seed_text(seed) -> str:
    return "" if seed is None else str(int(seed))


def _seed_value(text: str):
    return None if text in ("", "None") else int(text)


# -- measurement records ----------------------------------------------------


def write_record_csv(record: MeasurementRecord, path):
    meta = {
        "kind": "measurement_record",
        "dt": _fmt(record.dt),
        "steps": record.steps,
        "seed": _seed_text(record.seed),
        "params_hash": record.params_hash,
    }
    write_table_csv(path, meta, ["dy"], record.increments[:, None])


def read_record_csv(path) -> MeasurementRecord:
    meta, columns, data = read_table_csv(path)
    if columns != ["dy"]:
        raise ValueError(f"{path}: expected a single 'dy' column, got {columns}")
    inc = data[:, 0]
    if int(meta.get("steps", inc.size)) != inc.size:
        raise ValueError(f"{path}: header promises {meta['steps']} steps, found {inc.size}")
    return MeasurementRecord(float(meta["dt"]), inc, _seed_value(meta.get("seed", "")), meta.get("params_hash", ""))


def write_record_binary(record: MeasurementRecord, path):
    header = {
        "kind": "measurement_record",
        "dt": record.dt,
        "seed": record.seed,
        "params_hash": record.params_hash,
        "shape": [record.steps],
    }
    _write_binary(path, header, record.increments)


def read_record_binary(path) -> MeasurementRecord:
    header, payload = _read_binary(path)
    if header.get("kind") != "measurement_record":
        raise ValueError(f"{path}: not a measurement record")
    return MeasurementRecord(header["dt"], payload, header.get("seed"), header.get("params_hash", ""))


def write_record(record: MeasurementRecord, path):
    """Write CSV for ``.csv`` paths and the binary format otherwise."""
    (write_record_csv if str(path).endswith(".csv") else write_record_binary)(record, path)


def read_record(path) -> MeasurementRecord:
    return (read_record_csv if str(path).endswith(".csv") else read_record_binary)(path)


# -- trajectory logs and ensembles -----------------------------------------


def write_log_csv(log: TrajectoryLog, path, label: str = ""):
    cols = ["t", "mean_x", "mean_p"]
    data = [log.times, log.mean_x, log.mean_p]
    if log.purity is not None:
        cols.append("purity")
        data.append(log.purity)
    ess = getattr(log, "ess", None)
    if ess is not None:
        cols.append("ess")
        data.append(ess)
    write_table_csv(path, {"kind": "trajectory_log", "label": label}, cols, np.column_stack(data))


def read_log_csv(path) -> TrajectoryLog:
    _, columns, data = read_table_csv(path)
    col = {name: data[:, i] for i, name in enumerate(columns)}
    return TrajectoryLog(times=col["t"], mean_x=col["mean_x"], mean_p=col["mean_p"], purity=col.get("purity"))


def write_ensemble_csv(x, p, weights, path, step: int | None = None):
    meta = {"kind": "particle_ensemble"}
    if step is not None:
        meta["step"] = int(step)
    write_table_csv(path, meta, ["x", "p", "weight"], np.column_stack([x, p, weights]))


def read_ensemble_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    _, _, data = read_table_csv(path)
    return data[:, 0], data[:, 1], data[:, 2]


# -- phase-space fields -----------------------------------------------------


def _field_header(f: PhaseSpaceField) -> dict:
    residual = f.mass() - 1.0
    meta = {k: v for k, v in f.meta.items() if isinstance(v, (int, float, str)) and not isinstance(v, bool)}
    return {"kind": "phase_space_field", "mode": f.mode, "grid": f.grid.to_dict(),
            "normalization_residual": residual, "meta": meta}


def write_field_csv(f: PhaseSpaceField, path):
    header = _field_header(f)
    meta = {"kind": header["kind"], "mode": f.mode, "grid": json.dumps(header["grid"], sort_keys=True),
            "normalization_residual": _fmt(header["normalization_residual"])}
    xg, pg = f.grid.mesh()
    write_table_csv(path, meta, ["x", "p", "value"], np.column_stack([xg.ravel(), pg.ravel(), f.values.ravel()]))


def read_field_csv(path) -> PhaseSpaceField:
    meta, _, data = read_table_csv(path)
    grid = PhaseSpaceGrid(**json.loads(meta["grid"]))
    return PhaseSpaceField(grid, data[:, 2].reshape(grid.n_x, grid.n_p), meta["mode"])


def write_field_binary(f: PhaseSpaceField, path):
    header = _field_header(f)
    header["shape"] = [f.grid.n_x, f.grid.n_p]
    _write_binary(path, header, f.values)


def read_field_binary(path) -> PhaseSpaceField:
    header, payload = _read_binary(path)
    if header.get("kind") != "phase_space_field":
        raise ValueError(f"{path}: not a phase-space field")
    return PhaseSpaceField(PhaseSpaceGrid(**header["grid"]), payload, header["mode"], dict(header.get("meta", {})))


# -- metrics ----------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(obj, path):
    """Deterministic JSON: sorted keys, fixed indentation, non-finite floats as null."""
    Path(path).write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())

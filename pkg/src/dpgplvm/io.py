"""Checkpoint and CSV serialization.

Floats are written with :func:`repr`, the shortest decimal string that
parses back to the same double (never more than 17 significant digits), so
every file round-trips bit-exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from typing import Optional, Sequence

import numpy as np

from .exceptions import InputError
from .model import ComponentParams, DataMatrix, DPState, Mode, ModelConfig, ModelState, VariationalLatent

SCHEMA_VERSION = 1


def _number(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise InputError(f"cannot serialize non-finite value {x!r}")
    return repr(x)


def _array(a):
    return np.asarray(a, dtype=float).tolist()


def state_to_dict(state: ModelState, elbo_final: Optional[float] = None) -> dict:
    latent, comp, dp = state.params
    return {
        "schema_version": SCHEMA_VERSION,
        "config": state.config.to_dict(),
        "mode": {"name": state.mode.name, "assignment": list(state.mode.assignment or []) or None},
        "state": {
            "mu": _array(latent.mu),
            "sigma": _array(latent.sigma),
            "Xu": _array(latent.Xu),
            "signal_var": _array(comp.signal_var),
            "ard": _array(comp.ard),
            "noise_prec": _array(comp.noise_prec),
            "a": _array(dp.a),
            "b": _array(dp.b),
            "phi": _array(dp.phi),
            "w1": float(dp.w1),
            "w2": float(dp.w2),
        },
        "elbo_final": None if elbo_final is None else float(elbo_final),
        "rng_seed": state.config.seed,
    }


def _shaped(values, shape, name):
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(shape)
    if arr.shape != tuple(shape):
        raise InputError(f"checkpoint field {name!r} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def state_from_dict(payload: dict) -> tuple[ModelState, Optional[float]]:
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InputError(f"unsupported checkpoint schema_version {version!r} (expected {SCHEMA_VERSION})")
    try:
        config = ModelConfig(**payload["config"])
        mode_info = payload["mode"]
        mode = Mode(mode_info["name"], mode_info.get("assignment"))
        s = payload["state"]
        n, q, m, t, d = config.n, config.q, config.m, config.t, config.d
        n_sticks = 0 if mode.name == "bgplvm" else t - 1
        latent = VariationalLatent(
            _shaped(s["mu"], (n, q), "mu"), _shaped(s["sigma"], (n, q), "sigma"), _shaped(s["Xu"], (m, q), "Xu")
        )
        comp = ComponentParams(
            _shaped(s["signal_var"], (t,), "signal_var"),
            _shaped(s["ard"], (t, q), "ard"),
            _shaped(s["noise_prec"], (t,), "noise_prec"),
        )
        dp = DPState(
            _shaped(s["a"], (n_sticks,), "a"),
            _shaped(s["b"], (n_sticks,), "b"),
            _shaped(s["phi"], (d, t), "phi"),
            float(s["w1"]),
            float(s["w2"]),
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed checkpoint: {exc}") from None
    mode.check(config)
    return ModelState(config, latent, comp, dp, mode), payload.get("elbo_final")


def dumps_state(state: ModelState, elbo_final: Optional[float] = None) -> str:
    # json.dumps writes floats with repr, which is exact
    return json.dumps(state_to_dict(state, elbo_final), indent=1, allow_nan=False) + "\n"


def loads_state(text: str) -> tuple[ModelState, Optional[float]]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"checkpoint is not valid JSON: {exc}") from None
    if not isinstance(payload, dict):
        raise InputError("checkpoint must be a JSON object")
    return state_from_dict(payload)


def save_state(path, state: ModelState, elbo_final: Optional[float] = None):
    write_text_atomic(path, dumps_state(state, elbo_final))


def load_state(path) -> tuple[ModelState, Optional[float]]:
    with open(path, encoding="utf-8") as fh:
        return loads_state(fh.read())


# --- CSV --------------------------------------------------------------------------

def format_csv(header: Sequence[str], rows) -> str:
    """Comma-separated text with a header; ``None`` and NaN become empty cells."""
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in rows:
        cells = []
        for x in row:
            if x is None or (isinstance(x, float) and math.isnan(x)):
                cells.append("")
            elif isinstance(x, (int, np.integer)) and not isinstance(x, bool):
                cells.append(str(int(x)))
            else:
                cells.append(_number(x))
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def matrix_csv(matrix, prefix: str) -> str:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    header = [f"{prefix}{j + 1}" for j in range(matrix.shape[1])]
    return format_csv(header, ([float(x) for x in row] for row in matrix))


def read_matrix_csv(path) -> tuple[list, np.ndarray]:
    """Read a numeric CSV with a header row; empty cells become NaN."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    values = np.full((len(body), len(header)), np.nan)
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise InputError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell:
                try:
                    values[i, j] = float(cell)
                except ValueError:
                    raise InputError(f"{path}: non-numeric cell {cell!r} at row {i + 2}") from None
    return header, values


def read_data_csv(path) -> DataMatrix:
    _, values = read_matrix_csv(path)
    if values.size == 0:
        raise InputError(f"{path}: no data rows")
    if np.any(np.isinf(values)):
        raise InputError(f"{path}: infinite values")
    return DataMatrix.from_array(values)


def read_labels_csv(path) -> np.ndarray:
    """Group labels, one per observed dimension, as a header row plus one column
    or as a single row. Labels are returned as 0-based integers in order of
    first appearance."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            cells = [c.strip() for row in csv.reader(fh) for c in row if c.strip()]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if cells and not _is_int(cells[0]):
        cells = cells[1:]
    if not cells or not all(_is_int(c) for c in cells):
        raise InputError(f"{path}: labels must be integers")
    _, idx = np.unique([int(c) for c in cells], return_inverse=True)
    return idx


def _is_int(text):
    try:
        int(text)
    except ValueError:
        return False
    return True


def write_text_atomic(path, text: str):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

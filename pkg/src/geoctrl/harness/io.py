"""CSV output with JSON sidecars.

Floats are written with 17 significant digits so that parsing a file gives back
the exact values that were written. Nothing time- or host-dependent goes into
either file, so identical runs produce identical bytes.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from geoctrl import __version__

TIME_SERIES_COLUMNS = (
    "t[s]",
    "qw[-]",
    "qx[-]",
    "qy[-]",
    "qz[-]",
    "omega_x[rad/s]",
    "omega_y[rad/s]",
    "omega_z[rad/s]",
    "u_x[N*m]",
    "u_y[N*m]",
    "u_z[N*m]",
    "error_angle[rad]",
    "velocity_error_norm[rad/s]",
)

CONVERGENCE_COLUMNS = (
    "iteration[-]",
    "total_cost[-]",
    "control_change_from_previous[N*m]",
    "distance_to_final[N*m]",
)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_csv(
    columns: Sequence[str],
    rows,
    path,
    config: Optional[Dict[str, Any]] = None,
    summary: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write ``rows`` (2-D, one column per name) plus a ``.json`` sidecar."""
    path = Path(path)
    rows = np.asarray(rows, dtype=float).reshape(-1, len(columns))
    meta = {
        "library": {"name": "geoctrl", "version": __version__},
        "columns": list(columns),
        "rows": int(rows.shape[0]),
        "config": config,
        "summary": summary,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(x) for x in row])
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def read_csv(path) -> Tuple[Tuple[str, ...], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        data = [[float(x) for x in row] for row in reader]
    return header, np.asarray(data, dtype=float).reshape(-1, len(header))


def read_sidecar(path) -> Dict[str, Any]:
    return json.loads(sidecar_path(path).read_text())


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")

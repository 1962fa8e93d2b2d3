"""CSV and JSON serialization with atomic writes and fixed number formatting.

Numeric payloads are formatted with ``repr`` (shortest round-trip), so a run
with identical inputs produces byte-identical files.  Files are written to a
temporary sibling and renamed into place; no partially written output is ever
observable.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Iterable, Mapping, Sequence

import numpy as np

from .conventions import CONVENTIONS_HASH
from .geometry import RadialWeight


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_csv(path: str) -> tuple[list[str], np.ndarray]:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    header = lines[0].split(",")
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
    return header, data


def write_json(path: str, payload: Mapping) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True,
                                       default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)!r}")


# ---------------------------------------------------------------------------
# weight profiles
# ---------------------------------------------------------------------------

def weight_to_csv(w: RadialWeight, path: str) -> None:
    """Profile table with columns t, u, u', u''."""
    rows = zip(w.grid.nodes, w.values, w.derivative(), w.curvature_profile())
    write_csv(path, ["t", "u", "du_dt", "d2u_dt2"], rows)


def weight_record(w: RadialWeight) -> dict:
    """JSON-ready metadata record for a weight profile."""
    return {
        "grid": {"half_width": w.grid.half_width, "node_count": w.grid.node_count},
        "slope_minus": w.slope_minus,
        "slope_plus": w.slope_plus,
        "degree": w.degree,
        "convention_hash": CONVENTIONS_HASH,
    }


def weight_to_json(w: RadialWeight, path: str) -> None:
    write_json(path, weight_record(w))

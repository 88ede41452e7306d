"""CSV and JSON export of fields, kernel slices, curves and reports.

CSV files follow RFC 4180 (header row, CRLF line ends, '.' decimal point)
with floats written to 17 significant digits, so values round-trip exactly.
JSON is UTF-8 with sorted keys.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .lattice import LatticeDomain, ball_sites, box_sites, torus_sites
from .operators import Field


def fmt(x) -> str:
    """Format one CSV cell: integers verbatim, floats with 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if x is None:
        return ""
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays, tuples and Fields to JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, Field):
        return {"domain": domain_spec(obj.domain), "n_values": int(obj.values.size)}
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def domain_spec(domain: LatticeDomain) -> dict:
    spec = {"kind": domain.kind, "dim": domain.dim}
    if domain.kind == "torus":
        spec["side"] = int(domain.side)
    else:
        spec["center"] = [int(c) for c in domain.center]
        spec["radius"] = float(domain.radius)
    return spec


def domain_from_spec(spec: dict) -> LatticeDomain:
    kind = spec["kind"]
    if kind == "ball":
        return ball_sites(tuple(spec["center"]), spec["radius"])
    if kind == "box":
        return box_sites(tuple(spec["center"]), int(spec["radius"]))
    if kind == "torus":
        return torus_sites(int(spec["dim"]), int(spec["side"]))
    raise ValueError(f"unknown domain kind {kind!r}")


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def write_field(path, u: Field, extra: dict | None = None) -> Path:
    """Field CSV (``x1..xd, boundary, value``) plus a JSON sidecar describing the domain."""
    path = Path(path)
    d = u.domain.dim
    n = u.domain.n_sites
    flags = np.r_[np.zeros(n, dtype=int), np.ones(u.domain.n_boundary, dtype=int)]
    rows = ([*map(int, s), int(b), float(v)] for s, b, v in zip(u.sites, flags, u.values))
    write_csv(path, [f"x{i + 1}" for i in range(d)] + ["boundary", "value"], rows)
    meta = {"domain": domain_spec(u.domain), "meta": u.meta}
    if extra:
        meta.update(extra)
    write_json(_sidecar(path), meta)
    return path


def read_field(path) -> Field:
    path = Path(path)
    side = read_json(_sidecar(path))
    dom = domain_from_spec(side["domain"])
    header, rows = read_csv(path)
    d = dom.dim
    arr = np.array([[float(c) for c in row] for row in rows]) if rows else np.zeros((0, d + 2))
    sites = arr[:, :d].astype(np.int64)
    vals = np.zeros(dom.n_sites + dom.n_boundary)
    vals[dom.index_strict(sites)] = arr[:, d + 1]
    return Field(dom, vals, side.get("meta") or {})


def write_kernel(path, k) -> Path:
    """A :class:`~rwre.kernels.KernelSlice` as a field CSV with its time, start and deficit."""
    return write_field(path, k.field, {"x0": list(k.x0), "time": k.time, "deficit": k.deficit,
                                       "discrete": k.discrete, "kernel_meta": k.meta})


def write_decay(path, curve) -> Path:
    return write_csv(path, ["t", "var_q", "var_q_stderr", "l1", "l1_stderr", "n"], curve.rows())

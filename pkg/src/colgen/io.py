"""File formats: tensor and result JSON, point CSV, trace and benchmark CSV.

Reals are written with 17 significant digits so a write/read round trip
reproduces every float64 bit for bit.  JSON output is produced by a small
serializer (rather than :mod:`json`) because the standard encoder offers no
hook for the float format.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ColgenError, FormatError
from .tensor import Atom, AtomKind, DenseTensor3, PointSet, atom_densify

TRACE_COLUMNS = (
    "iteration", "elapsed_s", "objective", "ws_size", "active",
    "best_score", "threshold", "cuts_added", "terminated",
)


def format_real(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise FormatError(f"cannot serialize non-finite value {x!r}")
    text = format(x, ".17g")
    # keep a float marker so integral values (and -0.0) do not parse back as ints
    return text if any(c in text for c in ".en") else text + ".0"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text for nested dicts/lists of str, int, float, bool and None."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_real(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        body = (",\n").join(pad + dumps(v, indent, _level + 1) for v in obj)
        return "[\n" + body + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        body = (",\n").join(
            f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()
        )
        return "{\n" + body + "\n" + end + "}"
    raise FormatError(f"cannot serialize {type(obj).__name__}")


def _load_json(path) -> object:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not UTF-8 at byte offset {exc.start}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise FormatError(
            f"{path}: invalid JSON at byte offset {offset} (line {exc.lineno}, column {exc.colno}): {exc.msg}"
        ) from None


def _real_list(values, where: str) -> np.ndarray:
    if not isinstance(values, list):
        raise FormatError(f"{where}: expected a list of numbers")
    for i, v in enumerate(values):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise FormatError(f"{where}[{i}]: expected a number, got {json.dumps(v)}")
    return np.array(values, dtype=np.float64)


def tensor_to_document(T: DenseTensor3) -> dict:
    return {"dims": list(T.dims), "symmetric": bool(T.symmetric), "data": T.data}


def tensor_from_document(doc, where: str = "tensor") -> DenseTensor3:
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: top level must be an object")
    for key in ("dims", "data"):
        if key not in doc:
            raise FormatError(f"{where}: missing field '{key}'")
    dims = doc["dims"]
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or any(isinstance(d, bool) or not isinstance(d, int) or d < 1 for d in dims)
    ):
        raise FormatError(f"{where}: field 'dims' must be three positive integers")
    symmetric = doc.get("symmetric", False)
    if not isinstance(symmetric, bool):
        raise FormatError(f"{where}: field 'symmetric' must be true or false")
    data = _real_list(doc["data"], f"{where}: field 'data'")
    size = dims[0] * dims[1] * dims[2]
    if data.size != size:
        raise FormatError(f"{where}: field 'data' has {data.size} values, dims need {size}")
    try:
        return DenseTensor3(tuple(dims), data, symmetric=symmetric)
    except ColgenError as exc:
        raise FormatError(f"{where}: {exc}") from None


def read_tensor(path) -> DenseTensor3:
    return tensor_from_document(_load_json(path), str(path))


def write_tensor(path, T: DenseTensor3):
    Path(path).write_text(dumps(tensor_to_document(T)) + "\n")


def read_points(path) -> PointSet:
    """Read a ``position,weight`` CSV (header required, one point per line)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["position", "weight"]:
        raise FormatError(f"{path}: line 1: header must be 'position,weight'")
    pos, wts = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise FormatError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
        try:
            p, w = float(row[0]), float(row[1])
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: fields must be numbers") from None
        if not (math.isfinite(p) and math.isfinite(w)) or w < 0:
            raise FormatError(f"{path}: line {lineno}: need a finite position and a finite weight >= 0")
        pos.append(p)
        wts.append(w)
    if not pos:
        raise FormatError(f"{path}: no points")
    return PointSet(np.array(pos), np.array(wts))


def atom_to_document(atom: Atom, weight: float) -> dict:
    doc = {"kind": atom.kind.value}
    if atom.kind is AtomKind.GAUSSIAN:
        doc["mu"] = atom.mu
        doc["sigma"] = atom.sigma
    elif atom.kind is not AtomKind.BASELINE:
        doc["factors"] = [f for f in atom.factors]
    doc["sign"] = atom.sign
    doc["weight"] = weight
    return doc


def atom_from_document(doc) -> tuple[Atom, float]:
    kind = AtomKind(doc["kind"])
    if kind is AtomKind.BASELINE:
        atom = Atom.baseline()
    elif kind is AtomKind.GAUSSIAN:
        atom = Atom.gaussian(doc["mu"], doc["sigma"])
    else:
        atom = Atom(kind, tuple(np.array(f, dtype=np.float64) for f in doc["factors"]), sign=doc["sign"])
    return atom, float(doc["weight"])


def result_document(result, config) -> dict:
    """Serializable summary of a finished run: active atoms and the certificate."""
    atoms = [
        atom_to_document(a, float(x)) for a, x in zip(result.working_set, result.solution.weights) if x > 0
    ]
    last = result.trace[-1]
    return {
        "family": config.family,
        "reg": config.reg,
        "objective": result.solution.objective,
        "termination": result.termination,
        "iterations": last.iteration,
        "atoms": atoms,
        "certificate": {
            "best_score": last.best_score,
            "threshold": last.threshold,
            "restarts": config.pricing.restarts,
        },
    }


def write_result(path, doc: dict):
    Path(path).write_text(dumps(doc) + "\n")


def read_result(path) -> dict:
    return _load_json(path)


def reconstruct(doc: dict, context) -> np.ndarray:
    """Model ``sum_m w_m m`` rebuilt from a result document (dims tuple or PointSet)."""
    out = None
    for entry in doc["atoms"]:
        atom, w = atom_from_document(entry)
        col = w * atom_densify(atom, context)
        out = col if out is None else out + col
    if out is None:
        size = len(context) if isinstance(context, PointSet) else int(np.prod(context))
        out = np.zeros(size)
    return out


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (float, np.floating)):
        return format_real(v) if math.isfinite(v) else str(float(v))
    return str(v)


def write_csv(path, columns, rows):
    """Write dict rows with a fixed column order; floats use 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c, "")) for c in columns])


def trace_rows(trace):
    return [{c: getattr(e, c) for c in TRACE_COLUMNS} for e in trace]


def write_trace(path, trace):
    write_csv(path, TRACE_COLUMNS, trace_rows(trace))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

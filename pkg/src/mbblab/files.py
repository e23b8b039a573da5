"""Instance and report files.

Instances are JSON documents::

    {
      "dimension": 1,
      "gaussian_points": 64,
      "mu_atoms": [{"weight": 1.0, "point": [0.0]}],
      "nu_atoms": [{"weight": 0.5, "point": [-1.0]}, {"weight": 0.5, "point": [1.0]}],
      "seed": 7,
      "tolerances": {"l0": 1e-4}
    }

``seed`` and ``tolerances`` are optional.  Writing is canonical: weights are
renormalized, duplicate atoms merged, atoms sorted, keys sorted.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .measures import DiscreteMeasure, MeasureError

VERDICTS = ("PASS", "FAIL", "NOT-EVALUATED", "NOT-APPLICABLE")
REPORT_COLUMNS = ("instance_id", "check_id", "n_or_j", "value", "threshold", "verdict")
TOLERANCE_KEYS = ("gap", "pi_independence", "affine", "chain", "w2", "strassen",
                  "l0", "l1", "liminf", "opt", "localize")
REQUIRED = ("dimension", "mu_atoms", "nu_atoms")
OPTIONAL = ("gaussian_points", "seed", "tolerances")


class FileFormatError(ValueError):
    """Malformed instance file; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.field = field
        self.line = line


def atomic_write(path, text: str):
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# instances


@dataclass
class InstanceFile:
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    gaussian_points: int = 64
    seed: int | None = None
    tolerances: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.nu.dim

    def instance(self, check: bool = True, gaussian_points: int | None = None):
        from .mbb import Instance

        return Instance.create(self.mu, self.nu, n_gauss=gaussian_points or self.gaussian_points,
                               check=check)

    @classmethod
    def from_instance(cls, inst, seed=None, tolerances=None) -> "InstanceFile":
        return cls(inst.mu, inst.nu, inst.gamma.size, seed, dict(tolerances or {}))


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FileFormatError(f"expected a number, got {v!r}", where)
    if not math.isfinite(v):
        raise FileFormatError(f"expected a finite number, got {v!r}", where)
    return float(v)


def _integer(v, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise FileFormatError(f"expected an integer, got {v!r}", where)
    return v


def _atoms(doc, key: str, d: int) -> DiscreteMeasure:
    items = doc[key]
    if not isinstance(items, list) or not items:
        raise FileFormatError("expected a nonempty list of atoms", key)
    pts, wts = [], []
    for i, a in enumerate(items):
        where = f"{key}[{i}]"
        if not isinstance(a, dict):
            raise FileFormatError("expected an object with 'weight' and 'point'", where)
        extra = set(a) - {"weight", "point"}
        if extra:
            raise FileFormatError(f"unknown keys {sorted(extra)}", where)
        if "weight" not in a or "point" not in a:
            raise FileFormatError("missing 'weight' or 'point'", where)
        w = _number(a["weight"], f"{where}.weight")
        if w <= 0:
            raise FileFormatError(f"weight must be positive, got {w!r}", f"{where}.weight")
        p = a["point"]
        if not isinstance(p, list) or len(p) != d:
            raise FileFormatError(f"expected a list of {d} coordinates", f"{where}.point")
        pts.append([_number(c, f"{where}.point[{k}]") for k, c in enumerate(p)])
        wts.append(w)
    try:
        return DiscreteMeasure.build(np.array(pts), np.array(wts))
    except MeasureError as exc:
        raise FileFormatError(str(exc), key) from exc


def parse_instance(text: str) -> InstanceFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(exc.msg, line=exc.lineno) from exc
    if not isinstance(doc, dict):
        raise FileFormatError("top level must be an object")
    for key in REQUIRED:
        if key not in doc:
            raise FileFormatError("missing required field", key)
    unknown = set(doc) - set(REQUIRED) - set(OPTIONAL)
    if unknown:
        raise FileFormatError(f"unknown fields {sorted(unknown)}")
    d = _integer(doc["dimension"], "dimension")
    if d not in (1, 2):
        raise FileFormatError(f"dimension must be 1 or 2, got {d}", "dimension")
    mu = _atoms(doc, "mu_atoms", d)
    nu = _atoms(doc, "nu_atoms", d)
    n_gauss = _integer(doc.get("gaussian_points", 64), "gaussian_points")
    if n_gauss < 2:
        raise FileFormatError("need at least 2 points", "gaussian_points")
    seed = doc.get("seed")
    if seed is not None:
        seed = _integer(seed, "seed")
    tols = doc.get("tolerances", {})
    if not isinstance(tols, dict):
        raise FileFormatError("expected an object", "tolerances")
    clean = {}
    for k, v in tols.items():
        if k not in TOLERANCE_KEYS:
            raise FileFormatError(f"unknown tolerance (known: {', '.join(TOLERANCE_KEYS)})",
                                  f"tolerances.{k}")
        v = _number(v, f"tolerances.{k}")
        if v <= 0:
            raise FileFormatError("tolerances must be positive", f"tolerances.{k}")
        clean[k] = v
    return InstanceFile(mu, nu, n_gauss, seed, clean)


def read_instance(path) -> InstanceFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileFormatError(f"cannot read instance file: {exc.strerror}", str(path)) from exc
    return parse_instance(text)


def _atom_list(m: DiscreteMeasure):
    return [{"point": [float(c) for c in p], "weight": float(w)}
            for p, w in zip(m.points, m.weights)]


def dump_instance(f: InstanceFile) -> str:
    doc = {"dimension": f.dimension, "gaussian_points": f.gaussian_points,
           "mu_atoms": _atom_list(f.mu), "nu_atoms": _atom_list(f.nu)}
    if f.seed is not None:
        doc["seed"] = f.seed
    if f.tolerances:
        doc["tolerances"] = {k: float(v) for k, v in f.tolerances.items()}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_instance(path, f: InstanceFile):
    atomic_write(path, dump_instance(f))


# ---------------------------------------------------------------------------
# reports


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def report_text(rows) -> str:
    """CSV with a header; rows sorted by ``(instance_id, check_id, n_or_j)``."""
    rows = list(rows)
    for r in rows:
        if r[5] not in VERDICTS:
            raise ValueError(f"invalid verdict {r[5]!r}")
    rows.sort(key=lambda r: (str(r[0]), str(r[1]), int(r[2])))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([r[0], r[1], int(r[2]), _fmt(r[3]), _fmt(r[4]), r[5]])
    return buf.getvalue()


def write_report(path, rows):
    atomic_write(path, report_text(rows))


def read_report(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

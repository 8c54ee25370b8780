"""CSV input and JSON output.

CSV files carry a header row with covariate columns ``x1..xp`` and optional
``y`` (label) and ``yhat`` (prediction) columns, in any order. JSON floats
are written with Python's ``repr``, the shortest string that round-trips to
the same double (at most 17 significant digits); non-finite values become
``null``.
"""

from __future__ import annotations

import csv
import json
import math
import re

import numpy as np

from .dgp import Dataset
from .errors import ParseError

_XCOL = re.compile(r"^x([1-9][0-9]*)$")


def _parse_header(header, path):
    cols = [h.strip() for h in header]
    seen = set()
    xcols = {}
    for j, c in enumerate(cols):
        if c in seen:
            raise ParseError(f"duplicate column {c!r}", f"{path}:1")
        seen.add(c)
        m = _XCOL.match(c)
        if m:
            xcols[int(m.group(1))] = j
        elif c not in ("y", "yhat"):
            raise ParseError(f"unexpected column {c!r}", f"{path}:1")
    if not xcols:
        raise ParseError("no covariate columns (x1..xp)", f"{path}:1")
    p = len(xcols)
    if sorted(xcols) != list(range(1, p + 1)):
        raise ParseError(f"covariate columns must be x1..x{p} without gaps", f"{path}:1")
    return cols, [xcols[k] for k in range(1, p + 1)]


def read_csv(path) -> Dataset:
    """Read a dataset; raises ParseError with ``file:line`` on bad input."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open: {exc.strerror}", str(path)) from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", f"{path}:1") from None
        except (csv.Error, UnicodeDecodeError) as exc:
            raise ParseError(str(exc), f"{path}:1") from None
        cols, xidx = _parse_header(header, path)
        rows = []
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(cols):
                    raise ParseError(f"expected {len(cols)} fields, found {len(row)}",
                                     f"{path}:{line}")
                try:
                    vals = [float(c) for c in row]
                except ValueError:
                    raise ParseError("non-numeric field", f"{path}:{line}") from None
                if not all(math.isfinite(v) for v in vals):
                    raise ParseError("non-finite field", f"{path}:{line}")
                rows.append(vals)
        except (csv.Error, UnicodeDecodeError) as exc:
            raise ParseError(str(exc), f"{path}:{reader.line_num}") from None
    if not rows:
        raise ParseError("no data rows", f"{path}:2")
    A = np.array(rows, dtype=float)
    y = A[:, cols.index("y")].copy() if "y" in cols else None
    yhat = A[:, cols.index("yhat")].copy() if "yhat" in cols else None
    return Dataset(X=A[:, xidx].copy(), y=y, yhat=yhat, meta={"source": "csv", "path": str(path)})


def write_csv(path, data: Dataset):
    header = [f"x{j + 1}" for j in range(data.p)]
    cols = [data.X[:, j] for j in range(data.p)]
    for name in ("y", "yhat"):
        v = getattr(data, name)
        if v is not None:
            header.append(name)
            cols.append(np.asarray(v, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            w.writerow([repr(float(c[i])) for c in cols])


def jsonable(obj):
    """Convert numpy scalars/arrays, tuples and non-finite floats."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(report) -> str:
    from . import __version__
    body = dict(jsonable(report))
    body.setdefault("version", __version__)
    return json.dumps(body, indent=2, allow_nan=False) + "\n"


def write_json(path, report):
    """Write a report dict; ``-`` writes to stdout."""
    text = dumps(report)
    if str(path) == "-":
        import sys
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)

"""FormField containers.

Binary layout (``.jff``)::

    JFORMS-FIELD\\n
    {"format": ..., "degree": k, "n": [...], "L": [...], "components": [...], ...}\\n
    <C(4,k) * n1*n2*n3*n4 float64 values, little-endian>

Values are row-major over ``(component, x1, x2, x3, x4)``: the last grid
axis varies fastest.  Components follow the lexicographic basis order
recorded in the header.  A ``.json`` file carries the same header keys plus
a flat ``data`` list in the same order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import fiber
from .grid import FormField, Grid, ncomp

MAGIC = b"JFORMS-FIELD\n"
FORMAT = "jforms-formfield"
VERSION = 1


def header(a: FormField) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "degree": a.degree,
        "n": list(a.grid.n),
        "L": list(a.grid.L),
        "components": list(fiber.LABELS[a.degree]),
        "dtype": "float64",
        "byte_order": "little",
        "layout": "row-major (component, x1, x2, x3, x4)",
    }


def _from_header(hdr: dict, values: np.ndarray) -> FormField:
    if hdr.get("format") != FORMAT:
        raise ValueError(f"not a form field container (format={hdr.get('format')!r})")
    grid = Grid(tuple(hdr["n"]), tuple(hdr["L"]))
    degree = int(hdr["degree"])
    if list(hdr.get("components", fiber.LABELS[degree])) != list(fiber.LABELS[degree]):
        raise ValueError("unsupported component order")
    expected = ncomp(degree) * grid.npoints
    if values.size != expected:
        raise ValueError(f"container holds {values.size} values, expected {expected}")
    return FormField(grid, degree, values.reshape((ncomp(degree),) + grid.shape))


def save(path, a: FormField) -> Path:
    path = Path(path)
    if path.suffix == ".json":
        payload = header(a) | {"data": a.data.ravel().tolist()}
        path.write_text(json.dumps(payload))
        return path
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header(a), sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(a.data, dtype="<f8").tobytes())
    return path


def load(path) -> FormField:
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(MAGIC):
        rest = raw[len(MAGIC):]
        end = rest.index(b"\n")
        hdr = json.loads(rest[:end])
        values = np.frombuffer(rest[end + 1:], dtype="<f8").astype(float)
        return _from_header(hdr, values)
    payload = json.loads(raw)
    return _from_header(payload, np.asarray(payload["data"], dtype=float))

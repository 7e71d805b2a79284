"""Writers for run outputs: legacy VTK fields, CSV tables, JSON reports and mesh descriptors."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .mesh import Lattice

CSV_FORMAT = "{:.17g}"


def _ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def to_jsonable(obj):
    """Recursively convert numpy types, complex numbers and dataclasses for ``json``."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        z = complex(obj)
        return {"re": _finite(z.real), "im": _finite(z.imag)}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite(float(obj))
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _finite(x: float):
    return x if math.isfinite(x) else str(x)


def write_json(path, obj) -> Path:
    path = _ensure_parent(path)
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return CSV_FORMAT.format(float(v))
    if isinstance(v, (complex, np.complexfloating)):
        z = complex(v)
        return f"{CSV_FORMAT.format(z.real)}{'+' if z.imag >= 0 else '-'}{CSV_FORMAT.format(abs(z.imag))}j"
    return str(v)


def write_csv(path, header, rows) -> Path:
    """CSV with floats written at 17 significant digits (round-trip exact)."""
    path = _ensure_parent(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def undirected_links(lattice: Lattice) -> np.ndarray:
    """Each internal link once, as an (E, 2) array of node pairs with a < b (or self-pairs excluded)."""
    nb = lattice.neighbors
    a = np.repeat(np.arange(lattice.n_nodes), lattice.q - 1)
    b = nb[:, 1:].ravel()
    keep = (b >= 0) & (a < b)
    pairs = np.stack([a[keep], b[keep]], axis=1)
    return np.unique(pairs, axis=0)


def write_vtk(path, lattice: Lattice, fields: dict | None = None, title: str = "tri-lbm field") -> Path:
    """Legacy ASCII VTK polydata: nodes as points, links as lines, fields as point data.

    Periodic wrap links are skipped so the picture is not crossed by long lines.
    """
    path = _ensure_parent(path)
    pos = lattice.positions
    pairs = undirected_links(lattice)
    if lattice.periodic:
        d = pos[pairs[:, 1]] - pos[pairs[:, 0]]
        pairs = pairs[np.linalg.norm(d, axis=1) < 1.5 * lattice.dx]
    lines = [
        "# vtk DataFile Version 3.0",
        title[:255],
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {pos.shape[0]} double",
    ]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in pos]
    lines.append(f"LINES {pairs.shape[0]} {3 * pairs.shape[0]}")
    lines += [f"2 {a} {b}" for a, b in pairs]
    if fields:
        lines.append(f"POINT_DATA {pos.shape[0]}")
        for name, values in fields.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (pos.shape[0],):
                raise ValueError(f"field {name!r} has shape {values.shape}, expected ({pos.shape[0]},)")
            lines.append(f"SCALARS {name.replace(' ', '_')} double 1")
            lines.append("LOOKUP_TABLE default")
            lines += [f"{v:.17g}" for v in values]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk_points(path) -> tuple[np.ndarray, dict]:
    """Minimal reader for files written by :func:`write_vtk` (points and scalar fields)."""
    tokens = Path(path).read_text().split("\n")
    i = 0
    points = None
    fields = {}
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            points = np.array([[float(t) for t in tokens[i + 1 + k].split()[:2]] for k in range(n)])
            i += n
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            n = points.shape[0]
            fields[name] = np.array([float(tokens[i + 2 + k]) for k in range(n)])
            i += n + 1
        i += 1
    return points, fields


def mesh_descriptor(lattice: Lattice) -> dict:
    """JSON-ready description: nodes, positions, neighbors, dual index, classes, dx, wraps."""
    return {
        "scheme": lattice.scheme,
        "domain": lattice.domain,
        "nodes": int(lattice.n_nodes),
        "positions": lattice.positions.tolist(),
        "neighbors": lattice.neighbors.tolist(),
        "dual_index": lattice.dual.tolist(),
        "classes": [lattice.class_names[c] for c in lattice.node_class] if lattice.uniform_classes else lattice.node_class.tolist(),
        "dx": float(lattice.dx),
        "wraps": None if lattice.wraps is None else lattice.wraps.tolist(),
    }


def write_mesh_json(path, lattice: Lattice) -> Path:
    return write_json(path, mesh_descriptor(lattice))

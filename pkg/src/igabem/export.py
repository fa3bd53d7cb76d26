"""File outputs: legacy ASCII VTK, convergence logs and potential tables."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

__all__ = [
    "LOG_COLUMNS",
    "export_vtk",
    "read_vtk",
    "write_log",
    "read_log",
    "write_potential_csv",
    "log_name",
]

LOG_COLUMNS = ("M", "error", "error_rho", "t_mat")


def _num(v) -> str:
    return repr(float(v))


def _surface_samples(d, n_sub):
    """Per-patch structured samples: points, magnitudes and quad cells."""
    g = np.linspace(0.0, 1.0, n_sub + 1)
    uu, vv = np.meshgrid(g, g, indexing="xy")
    u, v = uu.ravel(), vv.ravel()
    ij = np.arange((n_sub + 1) ** 2).reshape(n_sub + 1, n_sub + 1)
    quads = np.stack([ij[:-1, :-1], ij[:-1, 1:], ij[1:, 1:], ij[1:, :-1]], axis=-1).reshape(-1, 4)
    return u, v, quads


def export_vtk(d, rho, path, n_sub: int | None = None):
    """Write the surface and the density magnitude as legacy ASCII VTK.

    Each patch is tessellated into ``2**L * (P + 1)`` quads per direction.
    Point data is the density for real scalar spaces, its modulus for
    complex ones, and the Euclidean norm of the surface current for
    Maxwell. Values are written with full precision.
    """
    path = Path(path)
    n_sub = n_sub or d.n_per_dir * (d.degree + 1)
    u, v, quads = _surface_samples(d, n_sub)
    rho = np.asarray(rho)
    pts, vals, cells = [], [], []
    for p in range(d.n_patches):
        x = d.geometry.patches[p].evaluate(u, v, derivatives=False)
        val = d.evaluate_density(rho, np.full(u.shape, p), u, v)
        if d.is_vector:
            val = np.linalg.norm(val, axis=-1)
        elif np.iscomplexobj(val):
            val = np.abs(val)
        cells.append(quads + p * len(u))
        pts.append(x)
        vals.append(np.real(val))
    pts = np.concatenate(pts)
    vals = np.concatenate(vals)
    cells = np.concatenate(cells)
    lines = ["# vtk DataFile Version 3.0", "igabem density", "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(pts)} double"]
    lines += [" ".join(_num(c) for c in row) for row in pts]
    lines.append(f"CELLS {len(cells)} {5 * len(cells)}")
    lines += ["4 " + " ".join(str(int(i)) for i in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += ["9"] * len(cells)
    lines += [f"POINT_DATA {len(pts)}", "SCALARS density double 1", "LOOKUP_TABLE default"]
    lines += [_num(val) for val in vals]
    try:
        path.write_text("\n".join(lines) + "\n", encoding="ascii")
    except OSError as exc:
        raise OSError(f"cannot write VTK file {path}: {exc}") from exc
    return path


def read_vtk(path):
    """Read back points, quads and the density of :func:`export_vtk` files."""
    tokens = Path(path).read_text(encoding="ascii").split("\n")
    out = {}
    k = 0
    while k < len(tokens):
        line = tokens[k].strip()
        if line.startswith("POINTS"):
            n = int(line.split()[1])
            out["points"] = np.array([[float(t) for t in tokens[k + 1 + i].split()] for i in range(n)])
            k += n
        elif line.startswith("CELLS"):
            n = int(line.split()[1])
            out["cells"] = np.array([[int(t) for t in tokens[k + 1 + i].split()[1:]] for i in range(n)])
            k += n
        elif line.startswith("LOOKUP_TABLE"):
            n = len(out["points"])
            out["density"] = np.array([float(tokens[k + 1 + i]) for i in range(n)])
            k += n
        k += 1
    return out


def log_name(kind, degree: int) -> str:
    """``<Kind>_<P>.log`` as used by the plot sources."""
    name = kind if isinstance(kind, str) else kind.name
    return f"{name}_{degree}.log"


def write_log(rows, path):
    """Whitespace table ``M error error_rho t_mat``, 16 significant digits.

    ``rows`` holds tuples or mappings with those four fields.
    """
    path = Path(path)
    out = [" ".join(LOG_COLUMNS)]
    for row in rows:
        if isinstance(row, dict):
            row = [row[c] for c in LOG_COLUMNS]
        if len(row) != len(LOG_COLUMNS):
            raise ValueError(f"log row needs {len(LOG_COLUMNS)} fields, got {len(row)}")
        m, rest = int(row[0]), row[1:]
        out.append(" ".join([str(m)] + [f"{float(v):.15e}" if math.isfinite(float(v)) else "nan"
                                         for v in rest]))
    path.write_text("\n".join(out) + "\n", encoding="ascii")
    return path


def read_log(path):
    lines = Path(path).read_text(encoding="ascii").split("\n")
    header = lines[0].split()
    rows = [[float(t) for t in line.split()] for line in lines[1:] if line.strip()]
    return header, np.array(rows).reshape(len(rows), len(header))


def write_potential_csv(points, values, path):
    """Comma-separated ``x,y,z,re,im`` (scalar) or per-component re/im pairs."""
    points = np.asarray(points, dtype=float)
    values = np.asarray(values)
    if values.ndim == 1:
        names = ["re", "im"]
        vals = values[:, None]
    else:
        names = [f"{p}_{c}" for c in "xyz" for p in ("re", "im")]
        vals = values
    cols = [points]
    for j in range(vals.shape[1]):
        cols.append(np.real(vals[:, j:j + 1]))
        cols.append(np.imag(vals[:, j:j + 1]))
    table = np.hstack(cols)
    header = ",".join(["x", "y", "z"] + names)
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
    return Path(path)

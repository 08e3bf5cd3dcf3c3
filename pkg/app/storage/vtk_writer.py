"""
app.storage.vtk_writer — legacy ASCII VTK UNSTRUCTURED_GRID field dumps.

Every field is written at the mesh vertices (POINT_DATA); degree-2 fields
lose their edge values, which is enough for visual inspection.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict

import numpy as np

from app.fem.mesh import Mesh
from app.fem.spaces import Field

logger = logging.getLogger(__name__)

VTK_TRIANGLE = 5


def write_vtk(path: Path, mesh: Mesh, fields: Dict[str, Field], title: str = "chns") -> Path:
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{x:.16e} {y:.16e} 0.0" for x, y in mesh.vertices]
    lines.append(f"CELLS {mesh.n_cells} {4 * mesh.n_cells}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.cells]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += [str(VTK_TRIANGLE)] * mesh.n_cells
    if fields:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
    for name, f in fields.items():
        if f.mesh is not mesh:
            raise ValueError(f"field {name!r} lives on another mesh")
        vals = f.vertex_values()
        if vals.ndim == 1:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.16e}" for v in vals]
        else:
            lines.append(f"VECTORS {name} double")
            lines += [f"{a:.16e} {b:.16e} 0.0" for a, b in vals]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    logger.debug("wrote %s (%d cells, %d fields)", path, mesh.n_cells, len(fields))
    return path


def read_vtk_points(path: Path) -> np.ndarray:
    """Vertex coordinates of a file written by ``write_vtk``."""
    text = Path(path).read_text().splitlines()
    start = next(i for i, line in enumerate(text) if line.startswith("POINTS"))
    n = int(text[start].split()[1])
    return np.array([[float(t) for t in line.split()[:2]] for line in text[start + 1:start + 1 + n]])

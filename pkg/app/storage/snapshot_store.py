"""
app.storage.snapshot_store — versioned .npz archives of fields on nested meshes.

One archive holds the hierarchy root plus every distinct mesh the stored
fields live on (vertices, cells, bisection paths, level), so fields read back
keep their dof numbering and their ancestry.

Layout (``FORMAT_VERSION`` = 1):

    version, domain, root_vertices, root_cells
    mesh{m}_vertices, mesh{m}_cells, mesh{m}_paths, mesh{m}_offsets, mesh{m}_level
    field{k}_coeffs, field{k}_meta = [mesh index, degree, components, dirichlet]
    weights, labels, attrs (JSON)

Usage:
    from app.storage.snapshot_store import save_fields, load_fields

    save_fields(run_dir / "snapshots.npz", fields, weights=alpha)
    archive = load_fields(run_dir / "snapshots.npz")
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app.core.exceptions import ArtifactError
from app.fem.mesh import Mesh
from app.fem.spaces import Field, function_space

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(slots=True)
class FieldArchive:
    fields: List[Field]
    weights: Optional[np.ndarray] = None
    labels: List[str] = field(default_factory=list)
    attrs: Dict[str, Any] = field(default_factory=dict)

    @property
    def root(self) -> Mesh:
        return self.fields[0].mesh.hierarchy_root


def _encode_paths(paths: Sequence[tuple]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(p) for p in paths], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    flat = np.fromiter((b for p in paths for b in p), dtype=np.int64, count=int(offsets[-1]))
    return flat, offsets


def _decode_paths(flat: np.ndarray, offsets: np.ndarray) -> tuple:
    return tuple(tuple(int(b) for b in flat[offsets[k]:offsets[k + 1]]) for k in range(offsets.size - 1))


def save_fields(
    path: Path,
    fields: Sequence[Field],
    weights: Optional[np.ndarray] = None,
    labels: Optional[Sequence[str]] = None,
    attrs: Optional[Dict[str, Any]] = None,
) -> Path:
    if not fields:
        raise ValueError("nothing to save")
    root = fields[0].mesh.hierarchy_root
    meshes: List[Mesh] = []
    index: Dict[int, int] = {}
    data: Dict[str, np.ndarray] = {
        "version": np.array(FORMAT_VERSION),
        "domain": np.asarray(root.domain, dtype=np.float64),
        "root_vertices": root.vertices,
        "root_cells": root.cells,
    }
    for k, f in enumerate(fields):
        if f.mesh.hierarchy_root is not root:
            raise ValueError("all fields of one archive must share a hierarchy root")
        key = id(f.mesh)
        if key not in index:
            index[key] = len(meshes)
            meshes.append(f.mesh)
        s = f.space
        data[f"field{k}_coeffs"] = f.coeffs
        data[f"field{k}_meta"] = np.array([index[key], s.degree, s.components, int(s.dirichlet)])
    for m, mesh in enumerate(meshes):
        flat, offsets = _encode_paths(mesh.paths)
        data[f"mesh{m}_vertices"] = mesh.vertices
        data[f"mesh{m}_cells"] = mesh.cells
        data[f"mesh{m}_paths"] = flat
        data[f"mesh{m}_offsets"] = offsets
        data[f"mesh{m}_level"] = np.array(mesh.level)
    data["n_fields"] = np.array(len(fields))
    data["n_meshes"] = np.array(len(meshes))
    if weights is not None:
        data["weights"] = np.asarray(weights, dtype=np.float64)
    data["labels"] = np.array(list(labels) if labels is not None else [], dtype=str)
    data["attrs"] = np.array(json.dumps(attrs or {}, sort_keys=True))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **data)
    logger.debug("saved %d fields on %d meshes to %s", len(fields), len(meshes), path)
    return path


def load_fields(path: Path, root: Optional[Mesh] = None) -> FieldArchive:
    """
    Read an archive. Passing the ``root`` of a live hierarchy attaches the
    loaded meshes to it so loaded and live fields can be combined.
    """
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing snapshot archive {path}")
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"])
        if version != FORMAT_VERSION:
            raise ArtifactError(f"{path}: unsupported snapshot format version {version}")
        domain = tuple(float(c) for c in z["domain"])
        if root is None:
            rv, rc = z["root_vertices"], z["root_cells"]
            root = Mesh(vertices=rv, cells=rc, domain=domain, paths=tuple((k,) for k in range(rc.shape[0])))
        elif not np.array_equal(root.cells, z["root_cells"]):
            raise ArtifactError(f"{path}: archive does not belong to the given hierarchy")
        meshes: List[Mesh] = []
        for m in range(int(z["n_meshes"])):
            paths = _decode_paths(z[f"mesh{m}_paths"], z[f"mesh{m}_offsets"])
            if all(len(p) == 1 for p in paths) and len(paths) == root.n_cells:
                meshes.append(root)
                continue
            meshes.append(Mesh(
                vertices=z[f"mesh{m}_vertices"], cells=z[f"mesh{m}_cells"], domain=domain,
                paths=paths, level=int(z[f"mesh{m}_level"]), root=root,
            ))
        fields = []
        for k in range(int(z["n_fields"])):
            mi, degree, comps, dirichlet = (int(v) for v in z[f"field{k}_meta"])
            space = function_space(meshes[mi], degree, comps, bool(dirichlet))
            fields.append(Field(space, z[f"field{k}_coeffs"]))
        weights = z["weights"] if "weights" in z.files else None
        labels = [str(s) for s in z["labels"]]
        attrs = json.loads(str(z["attrs"]))
    return FieldArchive(fields, weights, labels, attrs)

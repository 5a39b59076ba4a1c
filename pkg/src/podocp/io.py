"""File formats: trajectories, bases and operators."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.io

from .ocp import Trajectory


def save_trajectory_csv(traj: Trajectory, path) -> Path:
    """One row per time level: ``t, c_0, ..., c_{n-1}``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([traj.times, traj.values])
    header = f"kind={traj.kind} k={traj.k!r}\nt," + ",".join(f"c{i}" for i in range(traj.n_dofs))
    np.savetxt(path, data, delimiter=",", header=header, fmt="%.17g")
    return path


def load_trajectory_csv(path) -> Trajectory:
    path = Path(path)
    with path.open() as fh:
        meta = dict(item.split("=", 1) for item in fh.readline().lstrip("# ").split())
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return Trajectory(data[:, 1:], float(meta["k"]), meta["kind"])


def write_dg_vtk(space, fields: dict, path) -> Path:
    """Legacy ASCII VTK of discontinuous fields: every triangle has its own corners."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mesh = space.mesh
    nt = mesh.n_elements
    corners = mesh.vertices[mesh.triangles].reshape(-1, 2)
    lines = ["# vtk DataFile Version 3.0", "podocp DG field", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {3 * nt} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in corners]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {3 * i} {3 * i + 1} {3 * i + 2}" for i in range(nt)]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    lines.append(f"POINT_DATA {3 * nt}")
    for name, coeffs in fields.items():
        vals = space.vertex_values(coeffs).ravel()
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in vals]
    path.write_text("\n".join(lines) + "\n")
    return path


def save_trajectory_vtk(space, traj: Trajectory, directory, stem=None, stride: int = 1) -> list:
    """VTK time series ``<stem>_<m>.vtk`` plus a ParaView ``.pvd`` collection."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or traj.kind
    paths = []
    for m in range(0, traj.N + 1, stride):
        paths.append(write_dg_vtk(space, {traj.kind: traj.values[m]}, directory / f"{stem}_{m:04d}.vtk"))
    entries = "\n".join(
        f'    <DataSet timestep="{m * traj.k:.17g}" file="{p.name}"/>'
        for m, p in zip(range(0, traj.N + 1, stride), paths)
    )
    (directory / f"{stem}.pvd").write_text(
        '<?xml version="1.0"?>\n<VTKFile type="Collection" version="0.1">\n  <Collection>\n'
        f"{entries}\n  </Collection>\n</VTKFile>\n"
    )
    return paths


def _basis_paths(path):
    p = Path(path)
    if p.suffix in (".npz", ".json"):
        p = p.with_suffix("")
    return p.parent / (p.name + ".npz"), p.parent / (p.name + ".json")


def save_basis(path, columns, singular_values=None, kind=None, parameter=None, method=None, **extra) -> Path:
    """Store basis columns in ``<path>.npz`` with metadata in ``<path>.json``."""
    npz, sidecar = _basis_paths(path)
    npz.parent.mkdir(parents=True, exist_ok=True)
    psi = np.asarray(getattr(columns, "psi", getattr(columns, "columns", columns)), dtype=float)
    s = getattr(columns, "singular_values", singular_values)
    arrays = {"columns": psi}
    if s is not None:
        arrays["singular_values"] = np.asarray(s, dtype=float)
    np.savez(npz, **arrays)
    meta = {
        "kind": getattr(columns, "kind", kind),
        "parameter": getattr(columns, "parameter", parameter),
        "method": getattr(columns, "method", method) or "BPOD",
        "n_columns": int(psi.shape[1]),
        "n_dofs": int(psi.shape[0]),
        "singular_values": None if s is None else [float(v) for v in np.asarray(s)[: psi.shape[1]]],
    }
    meta.update(extra)
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return npz


def load_basis(path):
    """Inverse of ``save_basis``; returns ``(columns, singular_values, metadata)``."""
    npz, sidecar = _basis_paths(path)
    with np.load(npz) as data:
        columns = data["columns"]
        s = data["singular_values"] if "singular_values" in data.files else None
    meta = json.loads(sidecar.read_text())
    return columns, s, meta


def export_matrix(matrix, path) -> Path:
    """Matrix Market export of an assembled operator."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(path), matrix)
    return path

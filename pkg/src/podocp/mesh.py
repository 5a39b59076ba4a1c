"""Triangulations of the unit square with edge topology."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# local edge e of triangle (a, b, c) runs between these local vertices
LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with interior/boundary edge tables.

    Interior edges are stored once, oriented as seen from the first
    element ``interior_elements[:, 0]``; ``interior_normals`` point out of
    that element. Boundary normals point out of the domain.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    interior_elements: np.ndarray = field(repr=False)
    interior_local: np.ndarray = field(repr=False)
    interior_vertices: np.ndarray = field(repr=False)
    interior_normals: np.ndarray = field(repr=False)
    interior_lengths: np.ndarray = field(repr=False)
    boundary_elements: np.ndarray = field(repr=False)
    boundary_local: np.ndarray = field(repr=False)
    boundary_vertices: np.ndarray = field(repr=False)
    boundary_normals: np.ndarray = field(repr=False)
    boundary_lengths: np.ndarray = field(repr=False)
    areas: np.ndarray = field(repr=False)
    diameters: np.ndarray = field(repr=False)

    @classmethod
    def from_triangles(cls, vertices, triangles) -> "Mesh":
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ValueError("triangles must have shape (nt, 3)")

        p = vertices[triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(areas <= 0):
            raise ValueError("triangles must be counter-clockwise with positive area")

        nt = len(triangles)
        # all element edges, oriented counter-clockwise w.r.t. their element
        ev = triangles[:, LOCAL_EDGES].reshape(-1, 2)
        elem = np.repeat(np.arange(nt), 3)
        local = np.tile(np.arange(3), nt)
        key = np.sort(ev, axis=1)
        _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise ValueError("non-manifold triangulation: edge shared by more than two triangles")

        order = np.argsort(inverse, kind="stable")
        sorted_ids = inverse[order]
        is_first = np.ones(len(order), dtype=bool)
        is_first[1:] = sorted_ids[1:] != sorted_ids[:-1]
        firsts = order[is_first]
        first_counts = counts[sorted_ids[is_first]]

        int_first = firsts[first_counts == 2]
        # the partner occurrence directly follows the first in sorted order
        pos = np.flatnonzero(is_first)[first_counts == 2]
        int_second = order[pos + 1]
        bnd = firsts[first_counts == 1]

        def geometry(idx):
            a = vertices[ev[idx, 0]]
            b = vertices[ev[idx, 1]]
            d = b - a
            length = np.hypot(d[:, 0], d[:, 1])
            normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
            return length, normal

        int_len, int_nrm = geometry(int_first)
        bnd_len, bnd_nrm = geometry(bnd)

        edge_len = np.linalg.norm(p[:, LOCAL_EDGES[:, 1]] - p[:, LOCAL_EDGES[:, 0]], axis=2)

        return cls(
            vertices=vertices,
            triangles=triangles,
            interior_elements=np.column_stack([elem[int_first], elem[int_second]]),
            interior_local=np.column_stack([local[int_first], local[int_second]]),
            interior_vertices=ev[int_first],
            interior_normals=int_nrm,
            interior_lengths=int_len,
            boundary_elements=elem[bnd],
            boundary_local=local[bnd],
            boundary_vertices=ev[bnd],
            boundary_normals=bnd_nrm,
            boundary_lengths=bnd_len,
            areas=areas,
            diameters=edge_len.max(axis=1),
        )

    @property
    def n_elements(self) -> int:
        return len(self.triangles)

    @property
    def n_interior_edges(self) -> int:
        return len(self.interior_elements)

    @property
    def n_boundary_edges(self) -> int:
        return len(self.boundary_elements)

    @property
    def h(self) -> float:
        """Largest element diameter."""
        return float(self.diameters.max())

    def interior_midpoints(self) -> np.ndarray:
        return self.vertices[self.interior_vertices].mean(axis=1)

    def boundary_midpoints(self) -> np.ndarray:
        return self.vertices[self.boundary_vertices].mean(axis=1)

    def element_normals(self) -> np.ndarray:
        """Outward unit normals of every local edge, shape (nt, 3, 2)."""
        p = self.vertices[self.triangles]
        d = p[:, LOCAL_EDGES[:, 1]] - p[:, LOCAL_EDGES[:, 0]]
        n = np.stack([d[..., 1], -d[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def element_edge_midpoints(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * (p[:, LOCAL_EDGES[:, 0]] + p[:, LOCAL_EDGES[:, 1]])

    def to_vtk(self, path, cell_data: dict | None = None) -> Path:
        """Write the mesh as a legacy ASCII VTK unstructured grid."""
        path = Path(path)
        nv, nt = len(self.vertices), self.n_elements
        lines = [
            "# vtk DataFile Version 3.0",
            "podocp mesh",
            "ASCII",
            "DATASET UNSTRUCTURED_GRID",
            f"POINTS {nv} double",
        ]
        lines += [f"{x:.17g} {y:.17g} 0" for x, y in self.vertices]
        lines.append(f"CELLS {nt} {4 * nt}")
        lines += [f"3 {a} {b} {c}" for a, b, c in self.triangles]
        lines.append(f"CELL_TYPES {nt}")
        lines += ["5"] * nt
        if cell_data:
            lines.append(f"CELL_DATA {nt}")
            for name, values in cell_data.items():
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.17g}" for v in np.asarray(values, dtype=float)]
        path.write_text("\n".join(lines) + "\n")
        return path


def build_uniform_mesh(n: int) -> Mesh:
    """Criss-cross triangulation of the unit square.

    Each of the ``n * n`` squares is cut along its (0,0)-(1,1) diagonal,
    giving ``2 n**2`` triangles.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"need at least one subdivision per side, got n={n!r}")
    n = int(n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper
    return Mesh.from_triangles(vertices, triangles)


@dataclass(frozen=True)
class EdgeClassification:
    """Inflow/outflow labels for a velocity field, decided at edge midpoints.

    ``boundary_inflow[e]`` is True when beta . n < 0 at the midpoint of
    boundary edge ``e``; ``element_inflow[K, e]`` marks local edge ``e`` of
    ``K`` as part of the element inflow boundary. Tangential edges
    (beta . n == 0) count as outflow.
    """

    boundary_inflow: np.ndarray
    element_inflow: np.ndarray
    boundary_flux: np.ndarray
    element_flux: np.ndarray

    @property
    def boundary_labels(self) -> list[str]:
        return ["inflow" if f else "outflow" for f in self.boundary_inflow]

    @property
    def inflow_edges(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_inflow)

    @property
    def outflow_edges(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_inflow)


def classify_edges(mesh: Mesh, beta) -> EdgeClassification:
    """Label boundary and element edges against the velocity field ``beta``.

    ``beta`` maps an array of points ``(..., 2)`` to velocities ``(..., 2)``.
    """
    bflux = np.einsum("ij,ij->i", _eval_field(beta, mesh.boundary_midpoints()), mesh.boundary_normals)
    mids = mesh.element_edge_midpoints()
    eflux = np.einsum("kej,kej->ke", _eval_field(beta, mids), mesh.element_normals())
    return EdgeClassification(
        boundary_inflow=bflux < 0,
        element_inflow=eflux < 0,
        boundary_flux=bflux,
        element_flux=eflux,
    )


def _eval_field(beta, x: np.ndarray) -> np.ndarray:
    out = np.asarray(beta(x), dtype=float)
    return np.broadcast_to(out, x.shape)

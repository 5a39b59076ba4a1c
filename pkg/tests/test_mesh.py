import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from podocp.mesh import build_uniform_mesh, classify_edges
from podocp.sipg import ConstantField, DGSpace, RotatingField


@pytest.mark.parametrize(
    "n, triangles, interior, boundary",
    [(1, 2, 1, 4), (8, 128, 176, 32), (40, 3200, 4720, 160)],
)
def test_uniform_mesh_counts(n, triangles, interior, boundary):
    mesh = build_uniform_mesh(n)
    assert mesh.n_elements == triangles
    assert mesh.n_interior_edges == interior
    assert mesh.n_boundary_edges == boundary


def test_p1_dof_count_desk():
    assert DGSpace(build_uniform_mesh(8)).n_dofs == 384


def test_rejects_empty_mesh():
    with pytest.raises(ValueError):
        build_uniform_mesh(0)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=1, max_value=12))
def test_mesh_invariants(n):
    mesh = build_uniform_mesh(n)
    assert abs(mesh.areas.sum() - 1.0) <= 1e-12
    assert np.all(mesh.areas > 0)
    # counter-clockwise orientation
    v = mesh.vertices[mesh.triangles]
    cross = (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1]) - (v[:, 1, 1] - v[:, 0, 1]) * (v[:, 2, 0] - v[:, 0, 0])
    assert np.all(cross > 0)
    # Euler: every edge counted once, interior edges shared by two elements
    assert mesh.n_interior_edges + mesh.n_boundary_edges == 3 * n * n + 2 * n
    assert 2 * mesh.n_interior_edges + mesh.n_boundary_edges == 3 * mesh.n_elements
    assert 0 < mesh.h < np.inf
    np.testing.assert_allclose(np.linalg.norm(mesh.interior_normals, axis=1), 1.0)
    np.testing.assert_allclose(np.linalg.norm(mesh.boundary_normals, axis=1), 1.0)


def test_interior_edges_have_opposite_element_normals():
    mesh = build_uniform_mesh(5)
    normals = mesh.element_normals()
    K, Ke = mesh.interior_elements.T
    eK, eKe = mesh.interior_local.T
    np.testing.assert_allclose(normals[K, eK], -normals[Ke, eKe], atol=1e-14)
    np.testing.assert_allclose(normals[K, eK], mesh.interior_normals, atol=1e-14)
    mids = mesh.element_edge_midpoints()
    np.testing.assert_allclose(mids[K, eK], mids[Ke, eKe], atol=1e-14)


def test_boundary_normals_point_outward():
    mesh = build_uniform_mesh(6)
    mid = mesh.boundary_midpoints()
    # stepping outward from a boundary midpoint leaves the unit square
    out = mid + 1e-3 * mesh.boundary_normals
    assert np.all(np.any((out < 0) | (out > 1), axis=1))


def test_constant_field_classification():
    mesh = build_uniform_mesh(4)
    cls = classify_edges(mesh, ConstantField(1.0, 0.0))
    mid = mesh.boundary_midpoints()
    left = np.isclose(mid[:, 0], 0.0)
    assert np.all(cls.boundary_inflow[left])
    assert not np.any(cls.boundary_inflow[~left])  # right, top and bottom are outflow
    assert set(cls.boundary_labels) == {"inflow", "outflow"}


def test_rotating_field_bottom_boundary():
    mesh = build_uniform_mesh(8)
    cls = classify_edges(mesh, RotatingField())
    mid = mesh.boundary_midpoints()
    bottom = np.isclose(mid[:, 1], 0.0)
    # beta . n = x - 1/2 on y = 0
    np.testing.assert_allclose(cls.boundary_flux[bottom], mid[bottom, 0] - 0.5, atol=1e-15)
    assert np.all(cls.boundary_inflow[bottom] == (mid[bottom, 0] < 0.5))


def test_zero_field_has_no_inflow():
    mesh = build_uniform_mesh(3)
    cls = classify_edges(mesh, ConstantField(0.0, 0.0))
    assert cls.inflow_edges.size == 0
    assert cls.outflow_edges.size == mesh.n_boundary_edges
    assert not cls.element_inflow.any()


def test_reversed_field_swaps_labels():
    mesh = build_uniform_mesh(7)
    a = classify_edges(mesh, RotatingField())
    b = classify_edges(mesh, -RotatingField())
    nz = a.boundary_flux != 0
    assert np.all(a.boundary_inflow[nz] != b.boundary_inflow[nz])
    nz = a.element_flux != 0
    assert np.all(a.element_inflow[nz] != b.element_inflow[nz])
    assert np.intersect1d(a.inflow_edges, a.outflow_edges).size == 0


def test_vtk_export(tmp_path):
    mesh = build_uniform_mesh(2)
    path = mesh.to_vtk(tmp_path / "mesh.vtk", {"area": mesh.areas})
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert "CELL_TYPES 8" in text
    assert text.count("5") >= 8

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from podocp.mesh import build_uniform_mesh
from podocp.sipg import (
    ConstantField,
    DGConfig,
    DGSpace,
    LagrangeBasis,
    RotatingField,
    assemble_convection,
    assemble_mass,
    assemble_penalty,
    assemble_sipg,
    assemble_sipg_epsilon_derivative,
    default_penalty,
    l2_error,
    l2_project,
    line_quadrature,
    triangle_quadrature,
)


@pytest.fixture(scope="module")
def space8():
    return DGSpace(build_uniform_mesh(8))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 8), st.integers(0, 8))
def test_triangle_quadrature_exactness(q, a, b):
    if a + b > 2 * q - 2:
        return
    x, w = triangle_quadrature(q)
    # int_T x^a y^b over the reference triangle = a! b! / (a + b + 2)!
    from math import factorial

    exact = factorial(a) * factorial(b) / factorial(a + b + 2)
    assert abs(np.sum(w * x[:, 0] ** a * x[:, 1] ** b) - exact) <= 1e-14


def test_line_quadrature_exactness():
    s, w = line_quadrature(3)
    for d in range(6):
        assert abs(np.sum(w * s**d) - 1.0 / (d + 1)) <= 1e-15


@pytest.mark.parametrize("degree", [0, 1, 2])
def test_lagrange_basis_is_nodal_partition_of_unity(degree):
    basis = LagrangeBasis(degree)
    x, _ = triangle_quadrature(4)
    np.testing.assert_allclose(basis.values(x).sum(axis=1), 1.0, atol=1e-13)
    np.testing.assert_allclose(basis.gradients(x).sum(axis=1), 0.0, atol=1e-12)


def test_p0_mass_is_element_area():
    space = DGSpace(build_uniform_mesh(1), degree=0)
    M = assemble_mass(space).toarray()
    np.testing.assert_allclose(M, np.diag(space.mesh.areas), atol=1e-15)


def test_mass_matrix_structure(space8):
    M = assemble_mass(space8)
    assert M.shape == (384, 384)
    dense = M.toarray()
    np.testing.assert_allclose(dense, dense.T, atol=1e-15)
    assert np.linalg.eigvalsh(dense).min() > 0
    blocks = dense.reshape(128, 3, 128, 3)
    off = blocks.copy()
    off[np.arange(128), :, np.arange(128), :] = 0
    assert np.abs(off).max() == 0
    sums = blocks[np.arange(128), :, np.arange(128), :].sum(axis=(1, 2))
    np.testing.assert_allclose(sums, space8.mesh.areas, rtol=1e-12)
    one = np.ones(space8.n_dofs)
    assert abs(one @ M @ one - 1.0) <= 1e-12


def test_projection_reproduces_polynomials(space8):
    np.testing.assert_allclose(l2_project(space8, 1.0), 1.0, atol=1e-12)
    c = l2_project(space8, lambda x, t: x[..., 0])
    assert l2_error(space8, c, lambda x, t: x[..., 0]) <= 1e-12


def test_projection_converges_at_second_order():
    g = lambda x, t: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
    errs = []
    for n in (8, 16):
        V = DGSpace(build_uniform_mesh(n))
        errs.append(l2_error(V, l2_project(V, g), g))
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_rotating_field_is_divergence_free(rng):
    beta = RotatingField()
    x = rng.random((50, 2))
    h = 1e-6
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])
    div = (beta(x + ex)[:, 0] - beta(x - ex)[:, 0] + beta(x + ey)[:, 1] - beta(x - ey)[:, 1]) / (2 * h)
    np.testing.assert_allclose(div, 0.0, atol=1e-9)


def test_pure_diffusion_is_symmetric_and_coercive():
    space = DGSpace(build_uniform_mesh(8))
    A = assemble_sipg(space, DGConfig(epsilon=1.0, beta=ConstantField(0.0, 0.0), r=0.0)).toarray()
    np.testing.assert_allclose(A, A.T, atol=1e-12)
    assert np.linalg.eigvalsh(0.5 * (A + A.T)).min() > 0


def test_constant_function_energy(space8):
    cfg = DGConfig(epsilon=1e-2)
    A = assemble_sipg(space8, cfg)
    one = np.ones(space8.n_dofs)
    # terms surviving for v = 1: reaction, the boundary penalty and the inflow convection flux
    n = 8
    reaction = cfg.r * 1.0
    boundary_penalty = cfg.penalty(1) * cfg.epsilon * 4 * n  # sum over edges of (1/h_E) |E|
    # |beta . n| on the inflow part of each side: int_0^1 max(0, 1/2 - t) dt = 1/8
    inflow = 4 * 0.125
    expected = reaction + boundary_penalty + inflow
    assert abs(one @ A @ one - expected) <= 1e-10


def test_penalty_enters_linearly(space8):
    cfg = DGConfig(epsilon=1e-2)
    sigma = cfg.penalty(1)
    A1 = assemble_sipg(space8, cfg)
    A2 = assemble_sipg(space8, DGConfig(epsilon=1e-2, sigma=2 * sigma))
    P = assemble_penalty(space8, scale=sigma * cfg.epsilon)
    assert spla.norm(A2 - A1 - P) <= 1e-12 * spla.norm(A1)


def test_default_penalty():
    assert default_penalty(1) == 6.0
    assert DGConfig().penalty(1) == 6.0


def test_rejects_nonpositive_diffusion():
    with pytest.raises(ValueError):
        DGConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        DGConfig(epsilon=-1.0)


def test_epsilon_derivative(space8):
    cfg = DGConfig(epsilon=1e-2)
    D = assemble_sipg_epsilon_derivative(space8, cfg)
    d = 1e-3
    diff = assemble_sipg(space8, cfg.with_epsilon(1e-2 + d)) - assemble_sipg(space8, cfg.with_epsilon(1e-2 - d))
    assert spla.norm(diff - 2 * d * D) <= 1e-12 * spla.norm(D)
    assert spla.norm(D - D.T) <= 1e-12 * spla.norm(D)
    D0 = assemble_sipg_epsilon_derivative(space8, DGConfig(epsilon=1.0, beta=ConstantField(0, 0), r=0.0))
    assert spla.norm(D - D0) <= 1e-14 * spla.norm(D)


def test_volume_only_derivative_is_broken_stiffness(space8):
    D = assemble_sipg_epsilon_derivative(space8, volume_only=True)
    one = np.ones(space8.n_dofs)
    np.testing.assert_allclose(D @ one, 0.0, atol=1e-12)


def test_transpose_is_reversed_convection(space8):
    cfg = DGConfig(epsilon=1e-2)
    A = assemble_sipg(space8, cfg)
    Ar = assemble_sipg(space8, DGConfig(epsilon=1e-2, beta=-cfg.beta))
    assert spla.norm(A.T - Ar) <= 1e-12 * spla.norm(A)


def test_upwind_convection_is_nonnegative(space8, rng):
    # with a divergence-free field the symmetric part of the upwind form is positive semi-definite
    C = assemble_convection(space8, RotatingField()).toarray()
    assert np.linalg.eigvalsh(0.5 * (C + C.T)).min() >= -1e-12


def test_sparsity_couples_only_neighbours(space8):
    A = assemble_sipg(space8, DGConfig()).tocoo()
    K = A.row // 3
    L = A.col // 3
    mesh = space8.mesh
    pairs = {tuple(sorted(p)) for p in mesh.interior_elements.tolist()}
    for a, b in zip(K.tolist(), L.tolist()):
        assert a == b or tuple(sorted((a, b))) in pairs

"""Discontinuous Galerkin operators: mass matrix, SIPG + upwind form, loads.

The bilinear form assembled by :func:`assemble_sipg` is

    a_h(y, v) = sum_K int_K eps grad y . grad v + (beta . grad y) v + r y v
              - sum_E int_E {eps grad y}.[v] + {eps grad v}.[y] - (sigma eps / h_E) [y].[v]
              + sum_K int_{dK^- \\ Gamma^-} (beta . n)(y^e - y) v
              - sum_K int_{dK^- cap Gamma^-} (beta . n) y v

with ``(A)_ij = a_h(phi_j, phi_i)``. Upwinding is decided pointwise at the
edge quadrature nodes, so ``A(beta)^T == A(-beta)`` holds exactly for
divergence-free fields.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh


# Reference element and quadrature ===========================================
def triangle_quadrature(n_points: int):
    """Collapsed Gauss-Legendre rule on the reference triangle.

    Exact for polynomials of total degree ``2 * n_points - 2``. Weights sum
    to the reference area 1/2.
    """
    s, w = np.polynomial.legendre.leggauss(n_points)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    a, b = np.meshgrid(s, s, indexing="ij")
    wa, wb = np.meshgrid(w, w, indexing="ij")
    xi = a.ravel()
    eta = (b * (1.0 - a)).ravel()
    weights = (wa * wb * (1.0 - a)).ravel()
    return np.column_stack([xi, eta]), weights


def line_quadrature(n_points: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    s, w = np.polynomial.legendre.leggauss(n_points)
    return 0.5 * (s + 1.0), 0.5 * w


def _monomial_exponents(degree):
    return [(i, j) for total in range(degree + 1) for j in range(total + 1) for i in [total - j]]


def _lagrange_nodes(degree):
    if degree == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    nodes = [(i / degree, j / degree) for j in range(degree + 1) for i in range(degree + 1 - j)]
    if degree == 1:
        # vertex order of the triangle: (0,0), (1,0), (0,1)
        nodes = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    return np.array(nodes)


class LagrangeBasis:
    """Nodal P^p basis on the reference triangle (0,0), (1,0), (0,1)."""

    def __init__(self, degree: int):
        if degree < 0:
            raise ValueError("polynomial degree must be nonnegative")
        self.degree = degree
        self.exponents = np.array(_monomial_exponents(degree))
        self.nodes = _lagrange_nodes(degree)
        vander = self._monomials(self.nodes)
        # columns of coef give nodal basis functions in the monomial basis
        self.coef = np.linalg.inv(vander)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    def _monomials(self, xi):
        ex = self.exponents
        return xi[..., 0, None] ** ex[:, 0] * xi[..., 1, None] ** ex[:, 1]

    def _monomial_grads(self, xi):
        ex = self.exponents
        x, y = xi[..., 0, None], xi[..., 1, None]
        px = np.where(ex[:, 0] > 0, ex[:, 0] * x ** np.maximum(ex[:, 0] - 1, 0), 0.0) * y ** ex[:, 1]
        py = x ** ex[:, 0] * np.where(ex[:, 1] > 0, ex[:, 1] * y ** np.maximum(ex[:, 1] - 1, 0), 0.0)
        return np.stack([px, py], axis=-1)

    def values(self, xi):
        return self._monomials(np.asarray(xi)) @ self.coef

    def gradients(self, xi):
        g = self._monomial_grads(np.asarray(xi))
        return np.einsum("...mk,mi->...ik", g, self.coef)


# Velocity fields ============================================================
@dataclass(frozen=True)
class RotatingField:
    """Solid-body rotation about ``center``: beta = scale * (y - cy, -(x - cx))."""

    center: tuple = (0.5, 0.5)
    scale: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        cx, cy = self.center
        return self.scale * np.stack([x[..., 1] - cy, -(x[..., 0] - cx)], axis=-1)

    def __neg__(self):
        return RotatingField(self.center, -self.scale)


@dataclass(frozen=True)
class ConstantField:
    vx: float = 0.0
    vy: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape)
        out[..., 0] = self.vx
        out[..., 1] = self.vy
        return out

    def __neg__(self):
        return ConstantField(-self.vx, -self.vy)


def evaluate(g, x, t=0.0):
    """Evaluate a space-time function ``g(x, t)`` (or a constant) at points ``x``."""
    x = np.asarray(x, dtype=float)
    if callable(g):
        out = g(x, t)
    else:
        out = g
    return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1])


# DG space ===================================================================
class DGSpace:
    """Discontinuous P^p space on a triangulation.

    Degrees of freedom are numbered element by element, so
    ``dof_map[K] = K * local_dim + arange(local_dim)``.
    """

    def __init__(self, mesh: Mesh, degree: int = 1, volume_points: int | None = None,
                 edge_points: int | None = None):
        self.mesh = mesh
        self.degree = int(degree)
        self.basis = LagrangeBasis(self.degree)
        self.local_dim = self.basis.dim
        self.n_dofs = mesh.n_elements * self.local_dim
        self.dof_map = np.arange(self.n_dofs).reshape(mesh.n_elements, self.local_dim)

        self.volume_points = volume_points or self.degree + 3
        self.edge_points = edge_points or self.degree + 2
        self.ref_points, self.ref_weights = triangle_quadrature(self.volume_points)
        self.line_points, self.line_weights = line_quadrature(self.edge_points)

        p = mesh.vertices[mesh.triangles]
        self.origin = p[:, 0]
        self.jacobian = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        self.det = np.linalg.det(self.jacobian)
        self.inv_jacobian = np.linalg.inv(self.jacobian)
        self._cache = {}

    def __repr__(self):
        return f"DGSpace(n_elements={self.mesh.n_elements}, degree={self.degree}, n_dofs={self.n_dofs})"

    # quadrature data ---------------------------------------------------
    @cached_property
    def quad_points(self) -> np.ndarray:
        """Physical volume quadrature points, shape (nt, nq, 2)."""
        return self.origin[:, None, :] + np.einsum("kij,qj->kqi", self.jacobian, self.ref_points)

    @cached_property
    def quad_weights(self) -> np.ndarray:
        return self.ref_weights[None, :] * np.abs(self.det)[:, None]

    @cached_property
    def phi(self) -> np.ndarray:
        return self.basis.values(self.ref_points)

    @cached_property
    def grad_phi(self) -> np.ndarray:
        """Physical gradients of the local basis, shape (nt, nq, nl, 2)."""
        ref = self.basis.gradients(self.ref_points)
        return np.einsum("kji,qlj->kqli", self.inv_jacobian, ref)

    def eval_at(self, elements, x):
        """Basis values and physical gradients of ``elements`` at points ``x``.

        ``x`` has shape (ne, nq, 2); returns arrays (ne, nq, nl) and
        (ne, nq, nl, 2).
        """
        inv = self.inv_jacobian[elements]
        xi = np.einsum("eij,eqj->eqi", inv, x - self.origin[elements][:, None, :])
        values = self.basis.values(xi)
        grads = np.einsum("eji,eqlj->eqli", inv, self.basis.gradients(xi))
        return values, grads

    @cached_property
    def mass_blocks(self) -> np.ndarray:
        return np.einsum("kq,qi,qj->kij", self.quad_weights, self.phi, self.phi)

    # helpers -----------------------------------------------------------
    def block_matrix(self, blocks, dofs=None) -> sp.csr_matrix:
        """Scatter dense local blocks (ne, m, m) into a global sparse matrix."""
        if dofs is None:
            dofs = self.dof_map
        m = dofs.shape[1]
        rows = np.repeat(dofs, m, axis=1).ravel()
        cols = np.tile(dofs, (1, m)).ravel()
        mat = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(self.n_dofs, self.n_dofs))
        return mat.tocsr()

    def function_values(self, coefficients) -> np.ndarray:
        """Values of a DG function at the volume quadrature points."""
        c = np.asarray(coefficients)[self.dof_map]
        return np.einsum("qi,ki->kq", self.phi, c)

    def vertex_values(self, coefficients) -> np.ndarray:
        """Per-element vertex values, shape (nt, 3)."""
        c = np.asarray(coefficients)[self.dof_map]
        corners = self.basis.values(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
        return c @ corners.T


@dataclass(frozen=True)
class DGConfig:
    """Coefficients of the diffusion-convection-reaction operator."""

    epsilon: float = 1e-2
    beta: object = RotatingField()
    r: float = 1.0
    sigma: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"diffusion coefficient must be positive, got {self.epsilon}")
        if self.r < 0:
            raise ValueError("reaction coefficient must be nonnegative")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("penalty parameter must be positive")

    def penalty(self, degree: int) -> float:
        return self.sigma if self.sigma is not None else default_penalty(degree)

    def with_epsilon(self, epsilon: float) -> "DGConfig":
        return DGConfig(epsilon=epsilon, beta=self.beta, r=self.r, sigma=self.sigma)


def default_penalty(degree: int) -> float:
    # P0 has no gradient terms; any positive penalty is stable
    return 3.0 * max(degree, 1) * (max(degree, 1) + 1)


# Face traces ================================================================
@dataclass
class _Faces:
    dofs: np.ndarray      # (ne, m) global dofs touched by the face
    points: np.ndarray    # (ne, nq, 2)
    weights: np.ndarray   # (ne, nq), include edge length
    normals: np.ndarray   # (ne, 2)
    lengths: np.ndarray   # (ne,)
    values: np.ndarray    # (ne, nq, m)
    dnormal: np.ndarray   # (ne, nq, m) normal derivative along `normals`
    sign: np.ndarray      # (m,) jump sign: +1 on the first element, -1 on the neighbour


def _face_points(space, vertex_pairs, lengths):
    v = space.mesh.vertices
    a, b = v[vertex_pairs[:, 0]], v[vertex_pairs[:, 1]]
    s = space.line_points
    x = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    w = space.line_weights[None, :] * lengths[:, None]
    return x, w


def _interior_faces(space: DGSpace) -> _Faces:
    if "interior" in space._cache:
        return space._cache["interior"]
    mesh = space.mesh
    K, Ke = mesh.interior_elements.T
    x, w = _face_points(space, mesh.interior_vertices, mesh.interior_lengths)
    n = mesh.interior_normals
    vK, gK = space.eval_at(K, x)
    vE, gE = space.eval_at(Ke, x)
    nl = space.local_dim
    faces = _Faces(
        dofs=np.concatenate([space.dof_map[K], space.dof_map[Ke]], axis=1),
        points=x,
        weights=w,
        normals=n,
        lengths=mesh.interior_lengths,
        values=np.concatenate([vK, vE], axis=-1),
        dnormal=np.concatenate([np.einsum("eqlj,ej->eql", gK, n), np.einsum("eqlj,ej->eql", gE, n)], axis=-1),
        sign=np.concatenate([np.ones(nl), -np.ones(nl)]),
    )
    space._cache["interior"] = faces
    return faces


def _boundary_faces(space: DGSpace) -> _Faces:
    if "boundary" in space._cache:
        return space._cache["boundary"]
    mesh = space.mesh
    K = mesh.boundary_elements
    x, w = _face_points(space, mesh.boundary_vertices, mesh.boundary_lengths)
    n = mesh.boundary_normals
    vK, gK = space.eval_at(K, x)
    faces = _Faces(
        dofs=space.dof_map[K],
        points=x,
        weights=w,
        normals=n,
        lengths=mesh.boundary_lengths,
        values=vK,
        dnormal=np.einsum("eqlj,ej->eql", gK, n),
        sign=np.ones(space.local_dim),
    )
    space._cache["boundary"] = faces
    return faces


# Assembly ===================================================================
def assemble_mass(space: DGSpace) -> sp.csr_matrix:
    """Block-diagonal mass matrix ``(M)_ij = int phi_j phi_i``."""
    return space.block_matrix(space.mass_blocks)


def assemble_stiffness(space: DGSpace) -> sp.csr_matrix:
    """Broken volume stiffness ``sum_K int_K grad phi_j . grad phi_i``."""
    if "stiffness" not in space._cache:
        blocks = np.einsum("kq,kqid,kqjd->kij", space.quad_weights, space.grad_phi, space.grad_phi)
        space._cache["stiffness"] = space.block_matrix(blocks)
    return space._cache["stiffness"]


def assemble_consistency(space: DGSpace) -> sp.csr_matrix:
    """Symmetric SIPG face terms for unit diffusion: -{grad y}.[v] - {grad v}.[y]."""
    if "consistency" not in space._cache:
        mats = []
        for faces, avg in ((_interior_faces(space), 0.5), (_boundary_faces(space), 1.0)):
            jump = faces.values * faces.sign
            half = -avg * np.einsum("eq,eqi,eqj->eij", faces.weights, jump, faces.dnormal)
            blocks = half + half.transpose(0, 2, 1)
            mats.append(space.block_matrix(blocks, faces.dofs))
        space._cache["consistency"] = mats[0] + mats[1]
    return space._cache["consistency"]


def assemble_penalty(space: DGSpace, scale: float = 1.0) -> sp.csr_matrix:
    """Jump penalty ``sum_E (scale / h_E) int_E [y].[v]`` over all edges."""
    if "penalty" not in space._cache:
        mats = []
        for faces in (_interior_faces(space), _boundary_faces(space)):
            jump = faces.values * faces.sign
            blocks = np.einsum("eq,eqi,eqj->eij", faces.weights / faces.lengths[:, None], jump, jump)
            mats.append(space.block_matrix(blocks, faces.dofs))
        space._cache["penalty"] = mats[0] + mats[1]
    return scale * space._cache["penalty"]


def assemble_convection(space: DGSpace, beta) -> sp.csr_matrix:
    """Volume convection plus upwind face terms."""
    bq = _field(beta, space.quad_points)
    adv = np.einsum("kqd,kqjd->kqj", bq, space.grad_phi)
    blocks = np.einsum("kq,qi,kqj->kij", space.quad_weights, space.phi, adv)
    volume = space.block_matrix(blocks)

    nl = space.local_dim
    faces = _interior_faces(space)
    bn = np.einsum("eqd,ed->eq", _field(beta, faces.points), faces.normals)
    jump = faces.values * faces.sign          # y_K - y_Ke
    into_first = faces.weights * np.where(bn < 0, bn, 0.0)
    into_second = faces.weights * np.where(bn > 0, -bn, 0.0)
    blocks = np.zeros((len(bn), 2 * nl, 2 * nl))
    # first element upstream side: (beta.n_K)(y_Ke - y_K) v_K
    blocks[:, :nl, :] = -np.einsum("eq,eqi,eqj->eij", into_first, faces.values[..., :nl], jump)
    # neighbour is upstream: (beta.n_Ke)(y_K - y_Ke) v_Ke with n_Ke = -n_K
    blocks[:, nl:, :] = np.einsum("eq,eqi,eqj->eij", into_second, faces.values[..., nl:], jump)
    interior = space.block_matrix(blocks, faces.dofs)

    faces = _boundary_faces(space)
    bn = np.einsum("eqd,ed->eq", _field(beta, faces.points), faces.normals)
    inflow = faces.weights * np.where(bn < 0, bn, 0.0)
    blocks = -np.einsum("eq,eqi,eqj->eij", inflow, faces.values, faces.values)
    boundary = space.block_matrix(blocks, faces.dofs)
    return volume + interior + boundary


def assemble_sipg(space: DGSpace, cfg: DGConfig) -> sp.csr_matrix:
    """Matrix of the SIPG + upwind form, ``(A)_ij = a_h(phi_j, phi_i)``."""
    if not cfg.epsilon > 0:
        raise ValueError("diffusion coefficient must be positive")
    A = cfg.epsilon * assemble_sipg_epsilon_derivative(space, cfg)
    A = A + assemble_convection(space, cfg.beta)
    if cfg.r:
        A = A + cfg.r * assemble_mass(space)
    return A.tocsr()


def assemble_sipg_epsilon_derivative(space: DGSpace, cfg: DGConfig | None = None,
                                     volume_only: bool = False) -> sp.csr_matrix:
    """``dA/d(epsilon)``: broken stiffness plus the epsilon-linear face terms.

    With ``volume_only`` only the broken stiffness is returned, the
    discrete counterpart of the continuous ``(grad y, grad v)`` term.
    """
    S = assemble_stiffness(space)
    if volume_only:
        return S.copy()
    sigma = cfg.penalty(space.degree) if cfg is not None else default_penalty(space.degree)
    return (S + assemble_consistency(space) + assemble_penalty(space, sigma)).tocsr()


def _field(beta, x):
    return np.broadcast_to(np.asarray(beta(x), dtype=float), x.shape)


# Loads and projections ======================================================
def load_vector(space: DGSpace, g, t: float = 0.0) -> np.ndarray:
    """``int g(., t) phi_i`` for every basis function."""
    gq = evaluate(g, space.quad_points, t)
    local = np.einsum("kq,kq,qi->ki", space.quad_weights, gq, space.phi)
    return local.ravel()


def l2_project(space: DGSpace, g, t: float = 0.0) -> np.ndarray:
    """Coefficients of the elementwise L2 projection of ``g(., t)``."""
    rhs = load_vector(space, g, t).reshape(space.mesh.n_elements, space.local_dim)
    return np.linalg.solve(space.mass_blocks, rhs[..., None])[..., 0].ravel()


def l2_error(space: DGSpace, coefficients, g, t: float = 0.0) -> float:
    """``||u_h - g(., t)||_{L2}`` by volume quadrature."""
    diff = space.function_values(coefficients) - evaluate(g, space.quad_points, t)
    return float(np.sqrt(np.sum(space.quad_weights * diff**2)))

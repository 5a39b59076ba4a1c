"""Mass-weighted proper orthogonal decomposition.

The snapshot matrix ``W`` is weighted with the Cholesky factor of the mass
matrix, ``M = L L^T``: ``W~ = L^T W = U S V^T`` and the basis coefficients
solve ``L^T Psi = U_l``, so that ``Psi^T M Psi = I``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ocp import LinearQuadraticOCP, Trajectory, optimize

SNAPSHOT_KINDS = ("Y", "P", "YP")
_KIND_ALIASES = {"Y": "Y", "P": "P", "YP": "YP", "Y∪P": "YP", "YUP": "YP", "Y+P": "YP"}


def normalize_kind(kind: str) -> str:
    try:
        return _KIND_ALIASES[str(kind).upper()]
    except KeyError:
        raise ValueError(f"unknown snapshot kind {kind!r}; expected one of {SNAPSHOT_KINDS}") from None


class RankError(ValueError):
    """Requested more modes than the snapshot set supports."""

    def __init__(self, requested, achievable):
        super().__init__(f"requested {requested} POD modes but the snapshot matrix has rank {achievable}")
        self.requested = requested
        self.achievable = achievable


# Mass factor ================================================================
class MassFactor:
    """Lower-triangular ``L`` with ``M = L L^T``.

    Block-diagonal mass matrices (DG) are factored block by block; any
    other SPD matrix falls back to a dense Cholesky factorization.
    """

    def __init__(self, mass, block_size: int | None = None):
        self.n = mass.shape[0]
        self.block_size = block_size
        if block_size:
            blocks = _diagonal_blocks(mass, block_size)
            self.blocks = np.linalg.cholesky(blocks)
            self._dense = None
        else:
            M = mass.toarray() if sp.issparse(mass) else np.asarray(mass, dtype=float)
            self._dense = la.cholesky(M, lower=True)
            self.blocks = None

    @property
    def lower(self):
        if self.blocks is not None:
            return sp.block_diag(list(self.blocks), format="csr")
        return self._dense

    def apply_transpose(self, X):
        """``L^T X``."""
        X = np.asarray(X, dtype=float)
        if self.blocks is not None:
            nb, bs = len(self.blocks), self.block_size
            Xb = X.reshape(nb, bs, -1)
            return np.einsum("bji,bjc->bic", self.blocks, Xb).reshape(X.shape)
        return self._dense.T @ X

    def solve_transpose(self, X):
        """``L^{-T} X``."""
        X = np.asarray(X, dtype=float)
        if self.blocks is not None:
            nb, bs = len(self.blocks), self.block_size
            Xb = X.reshape(nb, bs, -1)
            LT = np.transpose(self.blocks, (0, 2, 1))
            return np.linalg.solve(LT, Xb).reshape(X.shape)
        return la.solve_triangular(self._dense, X, lower=True, trans="T")

    def reconstruct(self):
        L = self.lower
        return L @ L.T


def _diagonal_blocks(mass, bs):
    A = sp.coo_matrix(mass)
    if A.shape[0] % bs:
        raise ValueError("matrix size is not a multiple of the block size")
    rb, cb = A.row // bs, A.col // bs
    if np.any(rb != cb):
        raise ValueError("mass matrix is not block diagonal with the given block size")
    blocks = np.zeros((A.shape[0] // bs, bs, bs))
    np.add.at(blocks, (rb, A.row % bs, A.col % bs), A.data)
    return blocks


def mass_factor(setup_or_mass, block_size=None) -> MassFactor:
    """Cholesky factor of the mass matrix of an ``OCPSetup`` (or a raw matrix)."""
    space = getattr(setup_or_mass, "space", None)
    if space is not None:
        return MassFactor(setup_or_mass.mass, block_size=space.local_dim)
    return MassFactor(setup_or_mass, block_size=block_size)


# Snapshots ==================================================================
@dataclass(frozen=True)
class SnapshotMatrix:
    """Snapshots as columns: ``W[:, i]`` is the DoF vector of snapshot ``i``."""

    W: np.ndarray
    kind: str
    parameter: float | None = None

    @property
    def n_snapshots(self) -> int:
        return self.W.shape[1]


def build_snapshots(y, p=None, kind="Y", parameter=None) -> SnapshotMatrix:
    """Collect every time level of ``y`` and/or ``p`` into a snapshot matrix.

    For ``kind="YP"`` the state columns come first.
    """
    kind = normalize_kind(kind)
    Y = _levels(y)
    P = _levels(p) if p is not None else None
    if kind == "Y":
        W = Y.T
    elif P is None:
        raise ValueError(f"snapshot kind {kind!r} needs the adjoint trajectory")
    elif kind == "P":
        W = P.T
    else:
        if Y.shape[1] != P.shape[1]:
            raise ValueError("state and adjoint trajectories live in different spaces")
        W = np.concatenate([Y.T, P.T], axis=1)
    return SnapshotMatrix(np.ascontiguousarray(W), kind, parameter)


def _levels(x):
    if x is None:
        return None
    return np.asarray(getattr(x, "values", x), dtype=float)


# POD ========================================================================
@dataclass(frozen=True)
class PODBasis:
    """Retained POD modes and the SVD data needed for their sensitivities."""

    psi: np.ndarray
    singular_values: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W_tilde: np.ndarray
    mass_factor: MassFactor
    kind: str = "Y"
    parameter: float | None = None
    rank: int = 0

    @property
    def n_modes(self) -> int:
        return self.psi.shape[1]

    @property
    def retained_singular_values(self) -> np.ndarray:
        return self.singular_values[: self.n_modes]

    def energy(self) -> np.ndarray:
        return energy_ratio(self.singular_values)


def energy_ratio(singular_values) -> np.ndarray:
    """``E(l) = sum_{i<=l} s_i^2 / sum_i s_i^2`` for every ``l``."""
    s2 = np.asarray(singular_values, dtype=float) ** 2
    total = s2.sum()
    if total == 0:
        raise ValueError("all singular values are zero")
    E = np.minimum(np.cumsum(s2) / total, 1.0)
    E[-1] = 1.0
    return E


def select_rank(singular_values, gamma: float) -> int:
    """Smallest ``l`` whose energy ratio reaches ``1 - gamma``."""
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    E = energy_ratio(singular_values)
    return int(np.searchsorted(E, 1.0 - gamma, side="left") + 1)


def numerical_rank(singular_values, shape) -> int:
    s = np.asarray(singular_values)
    if s.size == 0 or s[0] == 0:
        return 0
    tol = s[0] * max(shape) * np.finfo(float).eps
    return int(np.sum(s > tol))


def compute_pod(W, mf: MassFactor, n_modes: int | None = None, gamma: float | None = None,
                kind=None, parameter=None) -> PODBasis:
    """Mass-weighted POD of the snapshot matrix ``W`` (columns = snapshots).

    Exactly one of ``n_modes`` (fixed rank) and ``gamma`` (energy
    threshold) selects the number of modes. Each mode is signed so its
    largest-magnitude coefficient is positive.
    """
    if isinstance(W, SnapshotMatrix):
        kind = W.kind if kind is None else kind
        parameter = W.parameter if parameter is None else parameter
        W = W.W
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise ValueError("snapshot matrix must be two-dimensional")
    if (n_modes is None) == (gamma is None):
        raise ValueError("give exactly one of n_modes and gamma")
    if not np.any(W):
        raise RankError(n_modes or 1, 0)

    W_tilde = mf.apply_transpose(W)
    U, s, Vt = la.svd(W_tilde, full_matrices=False, lapack_driver="gesdd")
    d = numerical_rank(s, W_tilde.shape)
    l = select_rank(s[:d], gamma) if n_modes is None else int(n_modes)
    if l < 1:
        raise ValueError("need at least one mode")
    if l > d:
        raise RankError(l, d)

    U_l = U[:, :l].copy()
    V_l = Vt[:l].T.copy()
    psi = mf.solve_transpose(U_l)
    flip = np.sign(psi[np.argmax(np.abs(psi), axis=0), np.arange(l)])
    flip[flip == 0] = 1.0
    return PODBasis(
        psi=psi * flip,
        singular_values=s,
        U=U_l * flip,
        V=V_l * flip,
        W_tilde=W_tilde,
        mass_factor=mf,
        kind=normalize_kind(kind) if kind is not None else "Y",
        parameter=parameter,
        rank=d,
    )


def projection_residual(W, psi, mass) -> float:
    """``sum_i ||w_i - sum_j (w_i, psi_j)_M psi_j||_M^2``."""
    W = np.asarray(W, dtype=float)
    R = W - psi @ (psi.T @ (mass @ W))
    return float(np.sum(R * (mass @ R)))


def m_orthonormalize(Phi, mass) -> np.ndarray:
    """Modified Gram-Schmidt in the ``M`` inner product."""
    Q = np.array(Phi, dtype=float, copy=True)
    for j in range(Q.shape[1]):
        for i in range(j):
            Q[:, j] -= (Q[:, i] @ (mass @ Q[:, j])) * Q[:, i]
        nrm = np.sqrt(Q[:, j] @ (mass @ Q[:, j]))
        if nrm == 0:
            raise ValueError(f"column {j} is linearly dependent on the previous ones")
        Q[:, j] /= nrm
    return Q


# Estimator ==================================================================
class POD(TransformerMixin, BaseEstimator):
    """Mass-weighted POD as a scikit-learn transformer.

    Rows of ``X`` are snapshots (DoF vectors), following the
    ``(n_samples, n_features)`` convention.

    Parameters
    ----------
    n_modes : int, optional
        Fixed number of modes.
    gamma : float, optional
        Energy threshold; the rank is the smallest ``l`` with
        ``E(l) >= 1 - gamma``. Used when ``n_modes`` is None.
    mass : array or sparse matrix, optional
        SPD weight matrix. Identity when omitted.
    block_size : int, optional
        Size of the diagonal blocks of ``mass`` (DG local dimension).

    Attributes
    ----------
    components_ : ndarray of shape (n_modes_, n_features)
        M-orthonormal modes.
    singular_values_ : ndarray
    n_modes_ : int
    basis_ : PODBasis
    """

    def __init__(self, n_modes=None, gamma=1e-2, mass=None, block_size=None):
        self.n_modes = n_modes
        self.gamma = gamma
        self.mass = mass
        self.block_size = block_size

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        mass = self.mass if self.mass is not None else sp.identity(X.shape[1], format="csr")
        if mass.shape != (X.shape[1], X.shape[1]):
            raise ValueError(f"mass matrix shape {mass.shape} does not match {X.shape[1]} features")
        self.mass_ = mass
        mf = MassFactor(mass, block_size=self.block_size if self.mass is not None else 1)
        gamma = None if self.n_modes is not None else self.gamma
        self.basis_ = compute_pod(X.T, mf, n_modes=self.n_modes, gamma=gamma)
        self.components_ = self.basis_.psi.T
        self.singular_values_ = self.basis_.singular_values
        self.n_modes_ = self.basis_.n_modes
        self.explained_energy_ = energy_ratio(self.singular_values_)[self.n_modes_ - 1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        return np.asarray(self.mass_ @ X.T).T @ self.components_.T

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        Z = check_array(Z, dtype=np.float64)
        return Z @ self.components_


# Reduced model ==============================================================
class ReducedModel(LinearQuadraticOCP):
    """Reduced optimality system in the coordinates of the columns of ``basis``.

    The reduced mass ``Phi^T M Phi`` is assembled exactly, so the basis need
    not be M-orthonormal. Data are M-orthogonally projected.
    """

    def __init__(self, setup: LinearQuadraticOCP, basis: np.ndarray, mass_r, operator_r,
                 source, target, initial):
        self.setup = setup
        self.basis = basis
        super().__init__(mass_r, operator_r, setup.k, setup.N, setup.alpha, source, target, initial)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def lift(self, coefficients) -> np.ndarray:
        """Full-space coefficients of reduced trajectories, shape (N + 1, n)."""
        return np.asarray(coefficients) @ self.basis.T


def project_model(setup: LinearQuadraticOCP, basis, orthonormalize: bool = False,
                  max_condition: float = 1e12) -> ReducedModel:
    """Project ``setup`` onto the span of the columns of ``basis``."""
    Phi = np.asarray(getattr(basis, "columns", getattr(basis, "psi", basis)), dtype=float)
    if Phi.ndim != 2 or Phi.shape[0] != setup.n_dofs:
        raise ValueError(f"basis must have shape ({setup.n_dofs}, L)")
    if orthonormalize:
        Phi = m_orthonormalize(Phi, setup.mass)
    MPhi = np.asarray(setup.mass @ Phi)
    mass_r = Phi.T @ MPhi
    mass_r = 0.5 * (mass_r + mass_r.T)
    ev = np.linalg.eigvalsh(mass_r)
    if ev[0] <= ev[-1] / max_condition:
        raise np.linalg.LinAlgError(
            f"reduced mass matrix is numerically singular (condition {ev[-1] / max(ev[0], 1e-300):.3e})"
        )
    operator_r = Phi.T @ np.asarray(setup.operator @ Phi)

    def project(X):
        return np.linalg.solve(mass_r, (np.asarray(X) @ MPhi).T).T

    return ReducedModel(setup, Phi, mass_r, operator_r, project(setup.source),
                        project(setup.target), project(setup.initial[None, :])[0])


def solve_reduced_ocp(rm: ReducedModel, tol: float = 1e-8, max_iter: int = 50):
    """Optimize the reduced system and lift state, control and adjoint.

    Returns ``(y, u, p, stats)`` with full-space trajectories.
    """
    start = time.perf_counter()
    a, c, b, stats = optimize(rm, tol=tol, max_iter=max_iter)
    k = rm.k
    y = Trajectory(rm.lift(a.values), k, "state")
    u = Trajectory(rm.lift(c.values), k, "control")
    p = Trajectory(rm.lift(b.values), k, "adjoint")
    stats.wall_time = time.perf_counter() - start
    return y, u, p, stats

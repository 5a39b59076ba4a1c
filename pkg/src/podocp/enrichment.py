"""Parameter-robust bases built from a nominal POD basis.

* ``extrapolate``: first-order Taylor step of the modes in the parameter.
* ``expand``: modes and their sensitivities side by side.
* ``saim``: interpolation of the principal angles between two anchor bases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .pod import MassFactor, PODBasis

ENRICHMENT_METHODS = ("BPOD", "ExtPOD", "ExpPOD", "SAIM")
DEPENDENCE_TOL = 1e-10


class DependentColumnsError(ValueError):
    """Basis columns are numerically linearly dependent."""

    def __init__(self, columns, smallest):
        super().__init__(
            f"basis columns {list(columns)} are numerically dependent on the preceding ones "
            f"(smallest singular value of the normalized Gram matrix {smallest:.3e})"
        )
        self.columns = list(columns)
        self.smallest = smallest


@dataclass(frozen=True)
class EnrichedBasis:
    """Coefficient matrix of a (possibly non-orthonormal) reduced basis.

    Attributes
    ----------
    columns : ndarray of shape (n_dofs, L)
    method : str
        One of ``BPOD``, ``ExtPOD``, ``ExpPOD``, ``SAIM``.
    sources : tuple of float
        Parameters the basis was built from.
    target : float or None
        Parameter the basis is meant for.
    """

    columns: np.ndarray
    method: str
    sources: tuple = ()
    target: float | None = None

    def __post_init__(self):
        if self.method not in ENRICHMENT_METHODS:
            raise ValueError(f"unknown basis method {self.method!r}")

    @property
    def n_columns(self) -> int:
        return self.columns.shape[1]


def _psi(basis):
    return np.asarray(getattr(basis, "psi", basis), dtype=float)


def _mass_of(basis, mass):
    if mass is not None:
        return mass
    mf = getattr(basis, "mass_factor", None)
    return mf.reconstruct() if mf is not None else None


def check_independence(columns, mass=None, tol=DEPENDENCE_TOL):
    """Raise ``DependentColumnsError`` if the normalized M-Gram matrix is near-singular.

    Returns the smallest singular value of the Gram matrix of the
    columns scaled to unit M-norm.
    """
    C = np.asarray(columns, dtype=float)
    MC = C if mass is None else np.asarray(mass @ C)
    G = C.T @ MC
    d = np.sqrt(np.clip(np.diag(G), 0.0, None))
    zero = np.flatnonzero(d == 0)
    if zero.size:
        raise DependentColumnsError(zero, 0.0)
    G = G / np.outer(d, d)
    smallest = la.svdvals(G)[-1]
    if smallest >= tol:
        return smallest
    # locate the offenders: columns whose pivot in a Cholesky sweep collapses
    bad = []
    kept = []
    for j in range(G.shape[0]):
        if kept:
            g = G[np.ix_(kept, kept)]
            c = G[kept, j]
            pivot = G[j, j] - c @ np.linalg.solve(g, c)
        else:
            pivot = G[j, j]
        if pivot < tol:
            bad.append(j)
        else:
            kept.append(j)
    raise DependentColumnsError(bad or [G.shape[0] - 1], smallest)


def baseline(basis: PODBasis) -> EnrichedBasis:
    """The nominal POD basis wrapped as an enriched basis."""
    par = getattr(basis, "parameter", None)
    return EnrichedBasis(_psi(basis).copy(), "BPOD", (par,) if par is not None else (), par)


def extrapolate(basis, psi_mu, delta_mu: float, mass=None, check: bool = True) -> EnrichedBasis:
    """First-order Taylor step ``Psi + delta_mu * Psi_mu``."""
    Psi = _psi(basis)
    Psi_mu = np.asarray(getattr(psi_mu, "Psi_mu", psi_mu), dtype=float)
    if Psi_mu.shape != Psi.shape:
        raise ValueError(f"basis sensitivity has shape {Psi_mu.shape}, basis has {Psi.shape}")
    cols = Psi + delta_mu * Psi_mu
    if check:
        check_independence(cols, _mass_of(basis, mass))
    par = getattr(basis, "parameter", None)
    target = par + delta_mu if par is not None else None
    return EnrichedBasis(cols, "ExtPOD", (par,) if par is not None else (), target)


def expand(basis, psi_mu, mass=None, check: bool = True) -> EnrichedBasis:
    """Append the basis sensitivities to the basis, ``[Psi | Psi_mu]``."""
    Psi = _psi(basis)
    Psi_mu = np.asarray(getattr(psi_mu, "Psi_mu", psi_mu), dtype=float)
    if Psi_mu.shape != Psi.shape:
        raise ValueError(f"basis sensitivity has shape {Psi_mu.shape}, basis has {Psi.shape}")
    cols = np.concatenate([Psi, Psi_mu], axis=1)
    if check:
        check_independence(cols, _mass_of(basis, mass))
    par = getattr(basis, "parameter", None)
    return EnrichedBasis(cols, "ExpPOD", (par,) if par is not None else (), None)


# Subspace angles =============================================================
def principal_vectors(Psi1, Psi2, mass=None):
    """Principal angles and vectors between two orthonormal bases.

    Returns ``(theta, U, V, R, s)`` with ``U = Psi1 @ U~`` and
    ``V = Psi2 @ V~`` from ``Psi1^T M Psi2 = U~ S~ V~^T``, the residuals
    ``R = V - U cos(theta)`` and their M-norms ``s = sin(theta)``. Angles
    come from both the cosine and the sine, so they stay accurate near zero.
    """
    M2 = Psi2 if mass is None else np.asarray(mass @ Psi2)
    Ut, c, Vth = la.svd(Psi1.T @ M2)
    c = np.clip(c, -1.0, 1.0)
    U = Psi1 @ Ut
    V = Psi2 @ Vth.T
    R = V - U * c
    MR = R if mass is None else np.asarray(mass @ R)
    s = np.sqrt(np.clip(np.einsum("ij,ij->j", R, MR), 0.0, None))
    theta = np.arctan2(s, c)
    return theta, U, V, R, s


def saim(Psi1, Psi2, mu1: float, mu2: float, muN: float, mass=None, euclidean: bool = False,
         zero_tol: float = 1e-12) -> EnrichedBasis:
    """Interpolate between two bases along their principal angles.

    Parameters
    ----------
    Psi1, Psi2 : ndarray of shape (n_dofs, l)
        M-orthonormal bases at the anchors ``mu1`` and ``mu2``.
    muN : float
        Target parameter, ``mu1 <= muN <= mu2``.
    mass : matrix, optional
        Inner product weight. Ignored when ``euclidean`` is set.

    Returns
    -------
    EnrichedBasis
        Column ``j`` is ``u_j cos(t theta_j) + w_j sin(t theta_j)``, where
        ``t = (muN - mu1) / (mu2 - mu1)`` and ``w_j`` is the unit direction
        of ``v_j`` orthogonal to ``u_j``. Columns with a zero angle keep
        ``u_j``.
    """
    Psi1 = _psi(Psi1)
    Psi2 = _psi(Psi2)
    if Psi1.shape != Psi2.shape:
        raise ValueError(f"anchor bases differ in shape: {Psi1.shape} vs {Psi2.shape}")
    lo, hi = min(mu1, mu2), max(mu1, mu2)
    if not lo <= muN <= hi or mu1 == mu2:
        raise ValueError(f"target {muN} is not between the anchors {mu1} and {mu2}")
    W = None if euclidean else mass
    theta, U, V, R, s = principal_vectors(Psi1, Psi2, W)
    t = (muN - mu1) / (mu2 - mu1)
    thetaN = t * theta
    nonzero = s > zero_tol
    Wdir = np.zeros_like(R)
    Wdir[:, nonzero] = R[:, nonzero] / s[nonzero]
    cols = U * np.cos(thetaN) + Wdir * np.sin(thetaN)
    return EnrichedBasis(cols, "SAIM", (float(mu1), float(mu2)), float(muN))


def subspace_angles(A, B, mass=None):
    """Principal angles (descending) between ``span(A)`` and ``span(B)`` in the M inner product."""
    A = _psi(A)
    B = _psi(B)
    if mass is not None:
        mf = mass if isinstance(mass, MassFactor) else MassFactor(mass)
        A, B = mf.apply_transpose(A), mf.apply_transpose(B)
    return la.subspace_angles(A, B)

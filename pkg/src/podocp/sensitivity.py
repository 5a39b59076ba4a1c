"""Sensitivities of the optimal solution and of the POD basis w.r.t. diffusion.

Two routes give trajectory sensitivities: the sensitivity optimality system
(the derivative of the discrete optimality system, solved with the same
Newton-CG driver) and centred finite differences of two full optimizations.
Trajectory sensitivities are then pushed through the weighted SVD to get
basis sensitivities.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .ocp import LinearQuadraticOCP, Trajectory, optimize
from .pod import PODBasis, SnapshotMatrix

METHODS = ("CSE", "FD")


@dataclass(frozen=True)
class SensitivityTriple:
    """Derivatives of the optimal state, adjoint and control w.r.t. ``mu``."""

    s_y: Trajectory
    s_p: Trajectory
    s_u: Trajectory
    mu: float
    method: str
    delta_mu: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown sensitivity method {self.method!r}")


# Trajectory sensitivities ===================================================
def sensitivity_problem(setup, y, p, D=None, volume_only=False) -> LinearQuadraticOCP:
    """Linear-quadratic problem whose optimum is the sensitivity triple.

    The data derivatives vanish (source, target and initial state do not
    depend on the diffusion), so only the operator derivative ``D`` drives
    the system.
    """
    y = getattr(y, "values", y)
    p = getattr(p, "values", p)
    if D is None:
        D = setup.epsilon_derivative(volume_only=volume_only)
    half = 0.5 * setup.k
    Dy = np.asarray((D @ y.T).T)
    DTp = np.asarray((D.T @ p.T).T)
    state_load = -half * (Dy[:-1] + Dy[1:])
    adjoint_load = -half * (DTp[:-1] + DTp[1:])
    return LinearQuadraticOCP(setup.mass, setup.operator, setup.k, setup.N, setup.alpha,
                              state_load=state_load, adjoint_load=adjoint_load)


def solve_cse(setup, y, u, p, volume_only=False, tol=1e-10, D=None) -> SensitivityTriple:
    """Solve the sensitivity optimality system at the optimum ``(y, u, p)``.

    Parameters
    ----------
    setup : OCPSetup
    y, u, p : Trajectory
        Converged optimal triple at ``setup.epsilon``.
    volume_only : bool
        Differentiate only the broken stiffness term instead of the full
        SIPG operator.
    D : sparse matrix, optional
        Operator derivative overriding the one from ``setup``.
    """
    problem = sensitivity_problem(setup, y, p, D=D, volume_only=volume_only)
    sy, su, sp_, _ = optimize(problem, tol=tol)
    return SensitivityTriple(
        s_y=sy.copy(kind="state_sensitivity"),
        s_p=sp_.copy(kind="adjoint_sensitivity"),
        s_u=su.copy(kind="control_sensitivity"),
        mu=float(getattr(setup, "epsilon", np.nan)),
        method="CSE",
    )


def default_increment(mu0: float) -> float:
    return mu0 / 20.0


def solve_fd(factory, mu0: float, delta_mu: float | None = None, tol=1e-10, jobs: int = 1,
             return_solutions: bool = False):
    """Centred-difference sensitivities from optimizations at ``mu0 +- delta_mu``.

    Parameters
    ----------
    factory : callable
        ``factory(mu)`` returns the problem setup at parameter ``mu``.
    delta_mu : float, optional
        Increment, ``mu0 / 20`` by default.
    jobs : int
        Run the two optimizations in parallel threads when 2.
    return_solutions : bool
        Also return the ``(y, u, p)`` triples at ``mu0 + delta_mu`` and
        ``mu0 - delta_mu``.
    """
    delta_mu = default_increment(mu0) if delta_mu is None else float(delta_mu)
    if not delta_mu > 0:
        raise ValueError("delta_mu must be positive")
    if not mu0 - delta_mu > 0:
        raise ValueError(f"mu0 - delta_mu = {mu0 - delta_mu} is not an admissible parameter")

    def run(mu):
        y, u, p, stats = optimize(factory(mu), tol=tol)
        if not stats.converged:
            raise RuntimeError(f"optimizer did not converge at mu = {mu}: {stats.message}")
        return y, u, p

    params = (mu0 + delta_mu, mu0 - delta_mu)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            plus, minus = pool.map(run, params)
    else:
        plus, minus = map(run, params)

    def diff(a, b, kind):
        return Trajectory((a.values - b.values) / (2.0 * delta_mu), a.k, kind)

    triple = SensitivityTriple(
        s_y=diff(plus[0], minus[0], "state_sensitivity"),
        s_p=diff(plus[2], minus[2], "adjoint_sensitivity"),
        s_u=diff(plus[1], minus[1], "control_sensitivity"),
        mu=float(mu0),
        method="FD",
        delta_mu=delta_mu,
    )
    return (triple, plus, minus) if return_solutions else triple


# Basis sensitivities ========================================================
@dataclass(frozen=True)
class SVDSensitivity:
    """First-order sensitivities of the retained SVD factors and POD modes."""

    W_tilde_mu: np.ndarray
    lambda_mu: np.ndarray
    sigma_mu: np.ndarray
    sigma_dagger_mu: np.ndarray
    V_l_mu: np.ndarray
    U_l_mu: np.ndarray
    Psi_mu: np.ndarray


def _check_simple(s, rel_gap):
    gaps = np.abs(np.diff(s)) / s[0]
    bad = np.flatnonzero(gaps < rel_gap)
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"singular values {i + 1} and {i + 2} are clustered (relative gap {gaps[i]:.2e}); "
            "their sensitivities are not defined"
        )


def svd_sensitivities(basis: PODBasis, W_mu, rel_gap: float = 1e-6, rcond: float = 1e-10) -> SVDSensitivity:
    """Differentiate the retained part of the weighted SVD.

    ``W_mu`` is the snapshot sensitivity matrix (same layout as the
    snapshots of ``basis``). With ``B = W~^T W~`` the eigenvalue and
    right-vector sensitivities follow from the differentiated eigenproblem;
    the singular system for each right vector is solved in the least-squares
    sense and its null direction removed by the normalization condition.
    """
    if isinstance(W_mu, SnapshotMatrix):
        W_mu = W_mu.W
    W_mu = np.asarray(W_mu, dtype=float)
    W_t = basis.W_tilde
    if W_mu.shape != W_t.shape:
        raise ValueError(f"W_mu has shape {W_mu.shape}, snapshots have shape {W_t.shape}")
    l = basis.n_modes
    s = basis.singular_values[:l]
    retained = basis.singular_values[: min(l + 1, basis.rank)]
    _check_simple(retained, rel_gap)

    V, U = basis.V, basis.U
    Wt_mu = basis.mass_factor.apply_transpose(W_mu)
    B = W_t.T @ W_t
    B_mu = Wt_mu.T @ W_t
    B_mu = B_mu + B_mu.T
    lam = s**2
    lam_mu = np.einsum("ij,ik,kj->j", V, B_mu, V)

    I = np.eye(B.shape[0])
    V_mu = np.empty_like(V)
    for j in range(l):
        rhs = -(B_mu @ V[:, j] - lam_mu[j] * V[:, j])
        sol = la.lstsq(B - lam[j] * I, rhs, cond=rcond * lam[0])[0]
        V_mu[:, j] = sol - (sol @ V[:, j]) * V[:, j]

    sigma_mu = lam_mu / (2.0 * s)
    sd_mu = -sigma_mu / s**2
    U_mu = (Wt_mu @ V) / s + (W_t @ V_mu) / s + (W_t @ V) * sd_mu
    Psi_mu = basis.mass_factor.solve_transpose(U_mu)
    return SVDSensitivity(Wt_mu, lam_mu, sigma_mu, sd_mu, V_mu, U_mu, Psi_mu)


def eigenvalue_sensitivities(W_tilde, W_tilde_mu, n=None):
    """Eigenvalues of ``B = W~^T W~`` and their sensitivities, leading ``n``.

    Returns ``(lambda, lambda_mu)``; used for spectrum reports where every
    mode, not only the retained ones, is of interest.
    """
    _, s, Vt = la.svd(W_tilde, full_matrices=False)
    n = len(s) if n is None else min(n, len(s))
    V = Vt[:n].T
    WV = W_tilde @ V
    lam_mu = 2.0 * np.einsum("ij,ij->j", W_tilde_mu @ V, WV)
    return s[:n] ** 2, lam_mu


def align_signs(reference, other):
    """Flip columns of ``other`` to have nonnegative dot products with ``reference``."""
    d = np.einsum("ij,ij->j", reference, other)
    flip = np.where(d < 0, -1.0, 1.0)
    return other * flip

"""Fully discrete optimal control of the diffusion-convection-reaction equation.

State and adjoint are advanced with Crank-Nicolson. Time integrals of
the cost and the control inner product use the same rule as the time
stepping, pairing interval averages::

    <a, b> = k * sum_m abar_m^T M bbar_m,   abar_m = (a_m + a_{m+1}) / 2

With this pairing the Crank-Nicolson adjoint is the exact discrete
adjoint, ``<dy(du), y - y_d> = -<du, p>``, so ``alpha u - p`` is the exact
gradient of the discrete cost. Controls live at every time level; the
pairing only sees interval averages, and after optimization the
per-level control is taken from the optimality condition ``alpha u = p``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .newton import OptimizeStats, newton_cg
from .sipg import (
    DGConfig,
    DGSpace,
    assemble_mass,
    assemble_sipg,
    assemble_sipg_epsilon_derivative,
    l2_project,
)

KINDS = ("state", "adjoint", "control", "state_sensitivity", "adjoint_sensitivity", "control_sensitivity")


@dataclass
class Trajectory:
    """DoF vectors on a uniform time grid, ``values[m]`` at ``t_m = m k``."""

    values: np.ndarray
    k: float
    kind: str = "state"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("trajectory values must have shape (N + 1, n_dofs)")
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_dofs(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.k * np.arange(self.N + 1)

    def copy(self, values=None, kind=None) -> "Trajectory":
        return Trajectory(self.values.copy() if values is None else values, self.k, kind or self.kind)


class _Factor:
    """LU factorization of a sparse or dense square matrix, reusable for transposed solves."""

    def __init__(self, mat):
        self.sparse = sp.issparse(mat)
        if self.sparse:
            self.lu = spla.splu(sp.csc_matrix(mat))
        else:
            self.lu = la.lu_factor(np.asarray(mat))

    def solve(self, b, transpose=False):
        if self.sparse:
            return self.lu.solve(b, trans="T" if transpose else "N")
        return la.lu_solve(self.lu, b, trans=1 if transpose else 0)


class LinearQuadraticOCP:
    """Crank-Nicolson optimality system for given mass and operator matrices.

    ``source`` and ``target`` are coefficient trajectories of shape
    (N + 1, n); ``state_load`` / ``adjoint_load`` are optional extra
    right-hand sides per time step, shape (N, n), already tested against
    the basis (they enter the sensitivity system).
    """

    def __init__(self, mass, operator, k, N, alpha, source=None, target=None, initial=None,
                 state_load=None, adjoint_load=None):
        if not alpha > 0:
            raise ValueError(f"regularization alpha must be positive, got {alpha}")
        if int(N) != N or N < 1:
            raise ValueError("need at least one time step")
        if not k > 0:
            raise ValueError("time step must be positive")
        self.mass = mass
        self.operator = operator
        self.k = float(k)
        self.N = int(N)
        self.alpha = float(alpha)
        n = mass.shape[0]
        self.n_dofs = n
        zeros = np.zeros((self.N + 1, n))
        self.source = zeros if source is None else np.asarray(source, dtype=float)
        self.target = zeros if target is None else np.asarray(target, dtype=float)
        self.initial = np.zeros(n) if initial is None else np.asarray(initial, dtype=float)
        self.state_load = state_load
        self.adjoint_load = adjoint_load
        for name in ("source", "target"):
            if getattr(self, name).shape != (self.N + 1, n):
                raise ValueError(f"{name} must have shape {(self.N + 1, n)}")
        half = 0.5 * self.k * operator
        self._lhs = _Factor(mass + half)
        self._rhs_op = mass - half
        self._rhs_op_T = (mass - half).T

    @property
    def T(self) -> float:
        return self.k * self.N

    # matrix helpers ----------------------------------------------------
    def mass_apply(self, X):
        return np.asarray((self.mass @ np.asarray(X).T).T)

    def inner(self, a, b) -> float:
        """Interval-average (Crank-Nicolson) pairing of two trajectories."""
        abar = 0.5 * (a[:-1] + a[1:])
        bbar = 0.5 * (b[:-1] + b[1:])
        return float(self.k * np.sum(abar * self.mass_apply(bbar)))

    def trapezoid_inner(self, a, b) -> float:
        w = np.full(self.N + 1, self.k)
        w[0] = w[-1] = 0.5 * self.k
        return float(np.sum(w[:, None] * a * self.mass_apply(b)))

    # sweeps ------------------------------------------------------------
    def _state_rhs(self, u, homogeneous):
        forcing = u if homogeneous else self.source + u
        Mf = self.mass_apply(forcing)
        rhs = 0.5 * self.k * (Mf[:-1] + Mf[1:])
        if not homogeneous and self.state_load is not None:
            rhs = rhs + self.state_load
        return rhs

    def _adjoint_rhs(self, y, homogeneous):
        e = y if homogeneous else y - self.target
        Me = self.mass_apply(e)
        rhs = -0.5 * self.k * (Me[:-1] + Me[1:])
        if not homogeneous and self.adjoint_load is not None:
            rhs = rhs + self.adjoint_load
        return rhs

    def state(self, u, homogeneous=False) -> np.ndarray:
        """Forward sweep ``(M + k/2 A) y_{m+1} = (M - k/2 A) y_m + rhs_m``."""
        u = np.asarray(u, dtype=float)
        rhs = self._state_rhs(u, homogeneous)
        y = np.empty((self.N + 1, self.n_dofs))
        y[0] = 0.0 if homogeneous else self.initial
        for m in range(self.N):
            y[m + 1] = self._lhs.solve(self._rhs_op @ y[m] + rhs[m])
            if not np.all(np.isfinite(y[m + 1])):
                raise np.linalg.LinAlgError(f"state solve failed at time step {m + 1}")
        return y

    def adjoint(self, y, homogeneous=False) -> np.ndarray:
        """Backward sweep ``(M + k/2 A^T) p_m = (M - k/2 A^T) p_{m+1} + rhs_m``, ``p_N = 0``."""
        y = np.asarray(y, dtype=float)
        rhs = self._adjoint_rhs(y, homogeneous)
        p = np.empty((self.N + 1, self.n_dofs))
        p[-1] = 0.0
        for m in range(self.N - 1, -1, -1):
            p[m] = self._lhs.solve(self._rhs_op_T @ p[m + 1] + rhs[m], transpose=True)
            if not np.all(np.isfinite(p[m])):
                raise np.linalg.LinAlgError(f"adjoint solve failed at time step {m}")
        return p

    # optimization pieces -----------------------------------------------
    def cost(self, y, u) -> float:
        e = y - self.target
        return 0.5 * self.inner(e, e) + 0.5 * self.alpha * self.inner(u, u)

    def _adjoint_offset(self):
        # adjoint response to the extra adjoint load alone; its pairing with u
        # is the linear term that makes alpha u - p a true gradient
        if self.adjoint_load is None:
            return None
        if not hasattr(self, "_offset"):
            p = np.empty((self.N + 1, self.n_dofs))
            p[-1] = 0.0
            for m in range(self.N - 1, -1, -1):
                p[m] = self._lhs.solve(self._rhs_op_T @ p[m + 1] + self.adjoint_load[m], transpose=True)
            self._offset = p
        return self._offset

    def objective(self, u) -> float:
        J = self.cost(self.state(u), u)
        offset = self._adjoint_offset()
        if offset is not None:
            J -= self.inner(offset, u)
        return J

    def gradient(self, u) -> np.ndarray:
        p = self.adjoint(self.state(u))
        return self.alpha * u - p

    def hessp(self, du) -> np.ndarray:
        dy = self.state(du, homogeneous=True)
        dp = self.adjoint(dy, homogeneous=True)
        return self.alpha * du - dp

    def zero_trajectory(self) -> np.ndarray:
        return np.zeros((self.N + 1, self.n_dofs))


# Public functional API =======================================================
def _traj(problem, values, kind):
    return Trajectory(values, problem.k, kind)


def _values(x):
    return x.values if isinstance(x, Trajectory) else np.asarray(x, dtype=float)


def solve_state(setup: LinearQuadraticOCP, u) -> Trajectory:
    """Crank-Nicolson state trajectory for control ``u``."""
    u = _values(u)
    if u.shape != (setup.N + 1, setup.n_dofs):
        raise ValueError(f"control must have shape {(setup.N + 1, setup.n_dofs)}, got {u.shape}")
    return _traj(setup, setup.state(u), "state")


def solve_adjoint(setup: LinearQuadraticOCP, y) -> Trajectory:
    """Backward Crank-Nicolson adjoint driven by ``y - y_d``."""
    y = _values(y)
    if y.shape != (setup.N + 1, setup.n_dofs):
        raise ValueError(f"state must have shape {(setup.N + 1, setup.n_dofs)}, got {y.shape}")
    return _traj(setup, setup.adjoint(y), "adjoint")


def cost(setup: LinearQuadraticOCP, y, u) -> float:
    """Tracking-type cost ``int 1/2 ||y - y_d||^2 + alpha/2 ||u||^2 dt``."""
    return setup.cost(_values(y), _values(u))


def reduced_gradient(setup: LinearQuadraticOCP, u) -> Trajectory:
    return _traj(setup, setup.gradient(_values(u)), "control")


def hessian_vector(setup: LinearQuadraticOCP, du) -> Trajectory:
    return _traj(setup, setup.hessp(_values(du)), "control")


def optimize(setup: LinearQuadraticOCP, u_init=None, tol=1e-8, max_iter=50, cg_tol=None,
             cg_maxiter=200):
    """Newton-CG with Armijo line search on the reduced cost.

    Returns ``(y, u, p, stats)``; the state and adjoint are recomputed at
    the returned control, which is set from ``alpha u = p``.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    u0 = setup.zero_trajectory() if u_init is None else _values(u_init)
    cache = {}

    def fun(u):
        y = setup.state(u)
        cache["u"], cache["y"] = u, y
        J = setup.cost(y, u)
        offset = setup._adjoint_offset()
        return J - setup.inner(offset, u) if offset is not None else J

    def grad(u):
        y = cache["y"] if "u" in cache and np.array_equal(cache["u"], u) else setup.state(u)
        return setup.alpha * u - setup.adjoint(y)

    start = time.perf_counter()
    u, stats = newton_cg(fun, grad, lambda x, d: setup.hessp(d), u0, setup.inner, tol=tol,
                         max_iter=max_iter, cg_tol=cg_tol, cg_maxiter=cg_maxiter)
    if stats.iterations > 0:
        p = setup.adjoint(setup.state(u))
        u = p / setup.alpha
    y = setup.state(u)
    p = setup.adjoint(y)
    stats.wall_time = time.perf_counter() - start
    return _traj(setup, y, "state"), _traj(setup, u, "control"), _traj(setup, p, "adjoint"), stats


class OptimalityResidual(NamedTuple):
    state: float
    adjoint: float
    gradient: float


def optimality_residual(setup: LinearQuadraticOCP, y, u, p) -> OptimalityResidual:
    """Relative residuals of the three discrete optimality equations."""
    y, u, p = _values(y), _values(u), _values(p)
    E = setup.mass + 0.5 * setup.k * setup.operator

    lhs = np.asarray((E @ y[1:].T).T)
    rhs = np.asarray((setup._rhs_op @ y[:-1].T).T) + setup._state_rhs(u, False)
    r_state = _relative(lhs - rhs, lhs, rhs) + _relative(y[0] - setup.initial, y[0], setup.initial)

    lhs = np.asarray((E.T @ p[:-1].T).T)
    rhs = np.asarray((setup._rhs_op_T @ p[1:].T).T) + setup._adjoint_rhs(y, False)
    r_adj = _relative(lhs - rhs, lhs, rhs) + float(np.linalg.norm(p[-1]))

    g = setup.alpha * u - p
    r_grad = np.sqrt(setup.trapezoid_inner(g, g)) / (1.0 + np.sqrt(setup.trapezoid_inner(u, u)))
    return OptimalityResidual(float(r_state), float(r_adj), float(r_grad))


def _relative(res, a, b):
    scale = np.linalg.norm(a) + np.linalg.norm(b)
    r = np.linalg.norm(res)
    return float(r / scale) if scale > 0 else float(r)


# PDE setup ===================================================================
class OCPSetup(LinearQuadraticOCP):
    """Discrete optimal control problem on a DG space.

    Parameters
    ----------
    space : DGSpace
    cfg : DGConfig
    alpha : float
        Control cost weight.
    T : float
        Final time.
    N : int
        Number of Crank-Nicolson steps.
    f, y_d, y0 : callable or float
        Source, desired state (functions of ``(x, t)``) and initial
        state, projected onto the DG space at every time level.
    """

    def __init__(self, space: DGSpace, cfg: DGConfig, alpha=1.0, T=1.0, N=60, f=1.0, y_d=1.0,
                 y0=0.0, mass=None, operator=None):
        self.space = space
        self.cfg = cfg
        self.data = dict(f=f, y_d=y_d, y0=y0)
        if int(N) != N or N < 1 or not T > 0:
            raise ValueError(f"need N >= 1 steps and T > 0, got N={N}, T={T}")
        k = T / N
        times = k * np.arange(N + 1)
        mass = assemble_mass(space) if mass is None else mass
        operator = assemble_sipg(space, cfg) if operator is None else operator
        source = _project_series(space, f, times)
        target = _project_series(space, y_d, times)
        initial = l2_project(space, y0, 0.0)
        super().__init__(mass, operator, k, N, alpha, source, target, initial)

    @property
    def epsilon(self) -> float:
        return self.cfg.epsilon

    def with_epsilon(self, epsilon: float) -> "OCPSetup":
        """Same problem at another diffusion coefficient (mass and data reused)."""
        other = object.__new__(OCPSetup)
        other.space = self.space
        other.cfg = self.cfg.with_epsilon(epsilon)
        other.data = self.data
        LinearQuadraticOCP.__init__(other, self.mass, assemble_sipg(self.space, other.cfg), self.k,
                                    self.N, self.alpha, self.source, self.target, self.initial)
        return other

    def epsilon_derivative(self, volume_only=False):
        return assemble_sipg_epsilon_derivative(self.space, self.cfg, volume_only=volume_only)


def _project_series(space, g, times):
    if not callable(g):
        one = l2_project(space, g, 0.0)
        return np.tile(one, (len(times), 1))
    return np.stack([l2_project(space, g, t) for t in times])

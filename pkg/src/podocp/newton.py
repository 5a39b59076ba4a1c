"""Inexact Newton-CG with Armijo backtracking in a user-supplied inner product."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizeStats:
    iterations: int = 0
    cost_history: list = field(default_factory=list)
    gradient_norm_history: list = field(default_factory=list)
    cg_iterations: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    wall_time: float = 0.0
    converged: bool = False
    message: str = ""


def conjugate_gradient(hessp, rhs, inner, rtol, maxiter=200):
    """Solve ``H x = rhs`` for an ``inner``-self-adjoint positive operator.

    Returns ``(x, iterations, negative_curvature)``.
    """
    x = np.zeros_like(rhs)
    r = rhs.copy()
    d = r.copy()
    rr = inner(r, r)
    stop = rtol**2 * rr
    if rr == 0.0:
        return x, 0, False
    for it in range(1, maxiter + 1):
        Hd = hessp(d)
        dHd = inner(d, Hd)
        if dHd <= 0.0:
            return (x if it > 1 else rhs.copy()), it, True
        step = rr / dHd
        x = x + step * d
        r = r - step * Hd
        rr_new = inner(r, r)
        if rr_new <= stop:
            return x, it, False
        d = r + (rr_new / rr) * d
        rr = rr_new
    return x, maxiter, False


def newton_cg(fun, grad, hessp, x0, inner, tol=1e-8, max_iter=50, cg_tol=None,
              cg_maxiter=200, c1=1e-4, shrink=0.5, max_backtrack=40):
    """Minimize ``fun`` by inexact Newton steps with Armijo backtracking.

    Parameters
    ----------
    fun, grad : callable
        Objective value and its gradient (Riesz representative w.r.t. ``inner``).
    hessp : callable
        ``hessp(x, d)``, Hessian applied to ``d`` at ``x``.
    inner : callable
        Inner product used for norms, CG and the Armijo slope.
    tol : float
        Stop when ``||g|| / (1 + ||x||) <= tol``.
    cg_tol : float, optional
        Fixed relative CG tolerance. By default the forcing term
        ``min(0.5, sqrt(||g|| / (1 + ||x||)))`` is used.

    Returns
    -------
    x : ndarray
    stats : OptimizeStats
    """
    start = time.perf_counter()
    norm = lambda v: float(np.sqrt(max(inner(v, v), 0.0)))
    stats = OptimizeStats()
    x = np.array(x0, dtype=float, copy=True)
    J = fun(x)
    g = grad(x)
    stats.cost_history.append(J)

    for it in range(max_iter + 1):
        rel = norm(g) / (1.0 + norm(x))
        stats.gradient_norm_history.append(rel)
        if not np.isfinite(rel):
            stats.message = "non-finite gradient"
            break
        if rel <= tol:
            stats.converged = True
            stats.message = "gradient tolerance reached"
            break
        if it == max_iter:
            stats.message = "maximum number of iterations reached"
            break

        eta = cg_tol if cg_tol is not None else min(0.5, np.sqrt(rel))
        d, n_cg, negative = conjugate_gradient(lambda v: hessp(x, v), -g, inner, eta, cg_maxiter)
        stats.cg_iterations.append(n_cg)
        slope = inner(g, d)
        if negative or slope >= 0.0:
            d = -g
            slope = -inner(g, g)

        t = 1.0
        for _ in range(max_backtrack):
            J_trial = fun(x + t * d)
            if J_trial <= J + c1 * t * slope:
                break
            t *= shrink
        else:
            stats.message = "line search failed"
            break
        x = x + t * d
        J = J_trial
        g = grad(x)
        stats.iterations += 1
        stats.step_lengths.append(t)
        stats.cost_history.append(J)

    stats.wall_time = time.perf_counter() - start
    return x, stats

import numpy as np
import pytest

from podocp.mesh import build_uniform_mesh
from podocp.ocp import (
    LinearQuadraticOCP,
    OCPSetup,
    Trajectory,
    cost,
    hessian_vector,
    optimality_residual,
    optimize,
    reduced_gradient,
    solve_adjoint,
    solve_state,
)
from podocp.sipg import ConstantField, DGConfig, DGSpace, assemble_sipg, l2_project


def _random(setup, rng):
    return rng.standard_normal((setup.N + 1, setup.n_dofs))


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros(5), 0.1)
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 5)), 0.1, kind="velocity")
    t = Trajectory(np.zeros((4, 2)), 0.25, "adjoint")
    assert (t.N, t.n_dofs) == (3, 2)
    np.testing.assert_allclose(t.times, [0, 0.25, 0.5, 0.75])


def test_setup_validation(tiny_setup):
    space = tiny_setup.space
    with pytest.raises(ValueError):
        OCPSetup(space, DGConfig(), alpha=0.0, N=4)
    with pytest.raises(ValueError):
        OCPSetup(space, DGConfig(), N=0)
    assert abs(tiny_setup.k * tiny_setup.N - 1.0) <= 1e-15


def test_shape_errors(tiny_setup):
    with pytest.raises(ValueError):
        solve_state(tiny_setup, np.zeros((tiny_setup.N, tiny_setup.n_dofs)))
    with pytest.raises(ValueError):
        solve_adjoint(tiny_setup, np.zeros((tiny_setup.N + 1, 3)))


def test_zero_data_gives_zero_state(tiny_setup):
    zero = OCPSetup(tiny_setup.space, tiny_setup.cfg, N=6, f=0.0, y_d=0.0)
    y = solve_state(zero, zero.zero_trajectory())
    assert np.abs(y.values).max() == 0.0


def test_adjoint_vanishes_on_target(tiny_setup):
    p = solve_adjoint(tiny_setup, tiny_setup.target)
    assert np.abs(p.values).max() <= 1e-14
    assert p.kind == "adjoint"


def test_adjoint_terminal_value_is_zero(tiny_setup, rng):
    p = solve_adjoint(tiny_setup, _random(tiny_setup, rng))
    assert np.all(p.values[-1] == 0.0)


def test_discrete_adjoint_identity(tiny_setup, rng):
    # with the adjoint driven by -(y - y_d) the pairing carries a minus sign
    y = _random(tiny_setup, rng)
    p = tiny_setup.adjoint(y)
    du = _random(tiny_setup, rng)
    dy = tiny_setup.state(du, homogeneous=True)
    lhs = tiny_setup.inner(dy, y - tiny_setup.target)
    rhs = -tiny_setup.inner(du, p)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_gradient_matches_central_differences(tiny_setup, rng):
    u = _random(tiny_setup, rng)
    g = reduced_gradient(tiny_setup, u).values
    J = lambda w: cost(tiny_setup, tiny_setup.state(w), w)
    delta = 1e-4
    for _ in range(10):
        v = _random(tiny_setup, rng)
        fd = (J(u + delta * v) - J(u - delta * v)) / (2 * delta)
        assert abs(fd - tiny_setup.inner(g, v)) <= 1e-6 * abs(fd)


def test_gradient_nonzero_for_inconsistent_pair(tiny_setup, rng):
    # u built from the adjoint of a state that does not solve the state equation at u
    y = _random(tiny_setup, rng)
    u = tiny_setup.adjoint(y) / tiny_setup.alpha
    g = reduced_gradient(tiny_setup, u).values
    assert np.abs(g).max() > 1e-3


@pytest.mark.parametrize("shift, control, expected", [(0.0, 0.0, 0.0), (1.0, 0.0, 0.5), (0.0, 1.0, 0.5)])
def test_cost_examples(tiny_setup, shift, control, expected):
    y = tiny_setup.target + shift
    u = np.full_like(y, control)
    assert abs(cost(tiny_setup, y, u) - expected) <= 1e-10


def test_hessian_zero_symmetric_coercive(tiny_setup, rng):
    H = lambda v: hessian_vector(tiny_setup, v).values
    assert np.abs(H(tiny_setup.zero_trajectory())).max() == 0.0
    for _ in range(3):
        v, w = _random(tiny_setup, rng), _random(tiny_setup, rng)
        a, b = tiny_setup.inner(H(v), w), tiny_setup.inner(v, H(w))
        assert abs(a - b) <= 1e-10 * abs(a)
        assert tiny_setup.inner(H(v), v) >= tiny_setup.alpha * tiny_setup.inner(v, v)


def test_reversed_field_adjoint_is_reversed_state(tiny_setup, rng):
    cfg = tiny_setup.cfg
    y = _random(tiny_setup, rng)
    p = tiny_setup.adjoint(y)
    # state sweep with -beta, driven by -(y - y_d) run backwards in time
    A_rev = assemble_sipg(tiny_setup.space, DGConfig(epsilon=cfg.epsilon, beta=-cfg.beta, r=cfg.r))
    rev = LinearQuadraticOCP(tiny_setup.mass, A_rev, tiny_setup.k, tiny_setup.N, tiny_setup.alpha,
                             source=-(y - tiny_setup.target)[::-1])
    z = rev.state(rev.zero_trajectory())
    np.testing.assert_allclose(z[::-1], p, atol=1e-12 * np.abs(p).max())


def test_single_step_is_near_identity():
    space = DGSpace(build_uniform_mesh(4))
    g = lambda x, t: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
    diffs = []
    for eps in (1e-6, 1e-8):
        cfg = DGConfig(epsilon=eps, beta=ConstantField(0.0, 0.0), r=0.0)
        setup = OCPSetup(space, cfg, N=1, T=0.1, f=0.0, y_d=0.0, y0=g)
        y = setup.state(setup.zero_trajectory())
        d = y[1] - y[0]
        diffs.append(np.sqrt(d @ setup.mass @ d))
    # O(k eps): scales linearly in eps
    assert diffs[0] <= 0.1 * 1e-6 * 100
    assert abs(diffs[0] / diffs[1] - 100.0) <= 1.0


def test_zero_data_converges_immediately(tiny_setup):
    zero = OCPSetup(tiny_setup.space, tiny_setup.cfg, N=6, f=0.0, y_d=0.0)
    y, u, p, stats = optimize(zero)
    assert stats.iterations == 0 and stats.converged
    assert np.abs(u.values).max() == 0.0
    assert cost(zero, y, u) == 0.0
    assert all(r == 0.0 for r in optimality_residual(zero, y, u, p))


def test_optimize_desk(desk_setup, desk_solution):
    y, u, p, stats = desk_solution
    assert stats.converged
    assert stats.gradient_norm_history[-1] <= 1e-10
    assert np.all(np.isfinite(stats.gradient_norm_history))
    assert np.all(np.diff(stats.cost_history) <= 1e-14)  # Armijo descent
    assert np.all(p.values[-1] == 0.0)
    g = reduced_gradient(desk_setup, u).values
    norm = lambda a: np.sqrt(desk_setup.trapezoid_inner(a, a))
    assert norm(g) / (1 + norm(u.values)) <= 1e-8
    res = optimality_residual(desk_setup, y, u, p)
    assert max(res) <= 1e-8, res


def test_one_newton_step_with_exact_cg(tiny_setup):
    _, _, _, stats = optimize(tiny_setup, tol=1e-300, max_iter=1, cg_tol=1e-13)
    g0, g1 = stats.gradient_norm_history[:2]
    assert g1 <= 1e-6 * g0
    assert stats.step_lengths == [1.0]


def test_iteration_cap_flags_nonconvergence(tiny_setup):
    _, _, _, stats = optimize(tiny_setup, max_iter=0)
    assert not stats.converged
    assert "maximum" in stats.message
    with pytest.raises(ValueError):
        optimize(tiny_setup, tol=0.0)


def test_residual_reacts_to_control_perturbation(desk_setup, desk_solution):
    y, u, p, _ = desk_solution
    before = optimality_residual(desk_setup, y, u, p).gradient
    bumped = u.values.copy()
    bumped[:, 0] += 1.0
    after = optimality_residual(desk_setup, y, bumped, p).gradient
    e = np.zeros_like(bumped)
    e[:, 0] = desk_setup.alpha
    norm = lambda a: np.sqrt(desk_setup.trapezoid_inner(a, a))
    # the gradient residual grows by alpha times the M-weighted size of the bump
    expected = norm(e) / (1 + norm(bumped))
    assert before <= 1e-8
    assert abs(after - expected) <= 1e-6 * expected

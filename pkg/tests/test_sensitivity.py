import numpy as np
import pytest
import scipy.sparse as sp

from podocp.ocp import LinearQuadraticOCP, optimize
from podocp.pod import MassFactor, build_snapshots, compute_pod, mass_factor
from podocp.sensitivity import (
    SensitivityTriple,
    align_signs,
    default_increment,
    eigenvalue_sensitivities,
    solve_cse,
    solve_fd,
    svd_sensitivities,
)


@pytest.fixture(scope="module")
def cse(desk_setup, desk_solution):
    y, u, p, _ = desk_solution
    return solve_cse(desk_setup, y, u, p)


@pytest.fixture(scope="module")
def perturbed(desk_setup):
    """Optimal triples at mu0 +- 1e-4."""
    mu0, d = desk_setup.epsilon, 1e-4
    out = {}
    for mu in (mu0 + d, mu0 - d):
        y, u, p, _ = optimize(desk_setup.with_epsilon(mu), tol=1e-10)
        out[mu] = (y, p)
    return d, out


def test_zero_derivative_gives_zero_triple(desk_setup, desk_solution):
    y, u, p, _ = desk_solution
    D = sp.csr_matrix(desk_setup.mass.shape)
    t = solve_cse(desk_setup, y, u, p, D=D)
    for traj in (t.s_y, t.s_p, t.s_u):
        assert np.abs(traj.values).max() == 0.0
    assert t.method == "CSE" and t.mu == desk_setup.epsilon


def test_cse_structure(desk_setup, cse):
    assert cse.s_y.kind == "state_sensitivity"
    assert np.all(cse.s_p.values[-1] == 0.0)
    np.testing.assert_allclose(desk_setup.alpha * cse.s_u.values, cse.s_p.values, atol=0)
    assert np.abs(cse.s_y.values).max() > 0
    assert np.all(cse.s_y.values[0] == 0.0)


def test_triple_rejects_unknown_method(cse):
    with pytest.raises(ValueError):
        SensitivityTriple(cse.s_y, cse.s_p, cse.s_u, 0.01, "adjoint")


def test_fd_exact_on_linear_family(tiny_setup):
    # the optimum is linear in the target, so y*(mu) = mu y*(1)
    base = tiny_setup.target

    def factory(mu):
        return LinearQuadraticOCP(tiny_setup.mass, tiny_setup.operator, tiny_setup.k, tiny_setup.N,
                                  tiny_setup.alpha, target=mu * base)

    y1, u1, p1, _ = optimize(factory(1.0), tol=1e-12)
    for d in (0.5, 1e-2):
        t = solve_fd(factory, 2.0, d, tol=1e-12)
        np.testing.assert_allclose(t.s_y.values, y1.values, atol=1e-9 * np.abs(y1.values).max())
        np.testing.assert_allclose(t.s_p.values, p1.values, atol=1e-9 * np.abs(p1.values).max())
        assert t.delta_mu == d and t.method == "FD"


def test_fd_threads_match_serial(tiny_setup):
    factory = tiny_setup.with_epsilon
    a = solve_fd(factory, 5e-2, 1e-3)
    b = solve_fd(factory, 5e-2, 1e-3, jobs=2)
    np.testing.assert_array_equal(a.s_y.values, b.s_y.values)


def test_fd_rejects_bad_increment(tiny_setup):
    with pytest.raises(ValueError):
        solve_fd(tiny_setup.with_epsilon, 1e-2, 0.0)
    with pytest.raises(ValueError):
        solve_fd(tiny_setup.with_epsilon, 1e-2, 1e-2)
    assert default_increment(1e-2) == 5e-4


def test_zero_snapshot_sensitivity(desk_setup, desk_solution):
    y, _, p, _ = desk_solution
    basis = compute_pod(build_snapshots(y, p, "YP"), mass_factor(desk_setup), n_modes=4)
    s = svd_sensitivities(basis, np.zeros_like(basis.W_tilde))
    for a in (s.lambda_mu, s.sigma_mu, s.V_l_mu, s.U_l_mu, s.Psi_mu):
        assert np.abs(a).max() == 0.0


def test_scaling_family(rng):
    # W(mu) = (1 + mu) W0 at mu = 0
    M = np.diag(rng.uniform(1, 2, 40))
    W0 = rng.standard_normal((40, 12))
    basis = compute_pod(W0, MassFactor(M), n_modes=5)
    s = svd_sensitivities(basis, W0)
    sig = basis.retained_singular_values
    np.testing.assert_allclose(s.lambda_mu, 2 * sig**2, rtol=1e-10)
    np.testing.assert_allclose(s.sigma_mu, sig, rtol=1e-10)
    assert np.abs(s.V_l_mu).max() <= 1e-10
    assert np.abs(s.Psi_mu).max() <= 1e-10 * np.abs(basis.psi).max()


def test_clustered_values_rejected():
    W = np.eye(10)[:, :4] * np.array([3.0, 2.0, 2.0, 1.0])
    basis = compute_pod(W, MassFactor(np.eye(10)), n_modes=2)
    with pytest.raises(ValueError, match="clustered"):
        svd_sensitivities(basis, W)
    with pytest.raises(ValueError):
        svd_sensitivities(basis, W[:, :3])


@pytest.mark.parametrize("kind", ["Y", "P", "YP"])
def test_basis_sensitivity_invariants(desk_setup, desk_solution, cse, kind):
    y, _, p, _ = desk_solution
    basis = compute_pod(build_snapshots(y, p, kind), mass_factor(desk_setup), n_modes=5)
    s = svd_sensitivities(basis, build_snapshots(cse.s_y, cse.s_p, kind))
    np.testing.assert_allclose(s.sigma_mu, s.lambda_mu / (2 * basis.retained_singular_values), rtol=1e-14)
    assert np.abs(np.einsum("ij,ij->j", basis.V, s.V_l_mu)).max() <= 1e-10
    LT = basis.mass_factor.apply_transpose(s.Psi_mu)
    assert np.linalg.norm(LT - s.U_l_mu) <= 1e-10 * np.linalg.norm(s.U_l_mu)
    G = s.Psi_mu.T @ desk_setup.mass @ basis.psi
    sym = G + G.T
    assert np.abs(np.diag(sym)).max() <= 1e-8 * np.abs(G).max()


def test_eigenvalue_route_matches(desk_setup, desk_solution, cse):
    y, _, p, _ = desk_solution
    basis = compute_pod(build_snapshots(y, p, "YP"), mass_factor(desk_setup), n_modes=5)
    s = svd_sensitivities(basis, build_snapshots(cse.s_y, cse.s_p, "YP"))
    lam, lam_mu = eigenvalue_sensitivities(basis.W_tilde, s.W_tilde_mu, n=5)
    np.testing.assert_allclose(lam, basis.retained_singular_values**2, rtol=1e-12)
    np.testing.assert_allclose(lam_mu, s.lambda_mu, rtol=1e-9)


def test_basis_sensitivity_against_finite_differences(desk_setup, desk_solution, cse, perturbed):
    y, _, p, _ = desk_solution
    d, sols = perturbed
    mu0 = desk_setup.epsilon
    mf = mass_factor(desk_setup)
    l = 4
    basis = compute_pod(build_snapshots(y, p, "YP"), mf, n_modes=l)
    s = svd_sensitivities(basis, build_snapshots(cse.s_y, cse.s_p, "YP"))
    plus = compute_pod(build_snapshots(*sols[mu0 + d], "YP"), mf, n_modes=l).psi
    minus = compute_pod(build_snapshots(*sols[mu0 - d], "YP"), mf, n_modes=l).psi
    fd = (align_signs(basis.psi, plus) - align_signs(basis.psi, minus)) / (2 * d)
    rel = np.linalg.norm(fd - s.Psi_mu, axis=0) / np.linalg.norm(fd, axis=0)
    assert rel.max() <= 1e-3, rel


def test_align_signs():
    A = np.eye(3)
    B = np.diag([1.0, -1.0, 2.0])
    np.testing.assert_array_equal(align_signs(A, B), np.diag([1.0, 1.0, 2.0]))


def test_lambda_mu_ordering(desk_setup, desk_solution, cse):
    # sensitivities decay like the eigenvalues
    y, _, p, _ = desk_solution
    basis = compute_pod(build_snapshots(y, p, "YP"), mass_factor(desk_setup), n_modes=5)
    s = svd_sensitivities(basis, build_snapshots(cse.s_y, cse.s_p, "YP"))
    assert np.all(np.diff(np.abs(s.lambda_mu)) < 0), s.lambda_mu

import math
import dataclasses

import numpy as np
import pytest

from tlsekit import kron_tools as kt
from tlsekit.tlse_core import TlseProblem, SolverOptions, solve, solve_with_decomposition, solve_single_dim, tls_solve
from tlsekit.problem_gen import gen_consistent, gen_uniform, random_orthogonal
from tlsekit.conditioning import (
    ConditionOptions,
    build_factors,
    frechet_matrix,
    directional_derivative,
    kappa_abs,
    kappa_rel,
    kappa_bounds,
    relative_upper,
    mixed_componentwise,
    mixed_componentwise_from_K,
    mixed_componentwise_upper,
    single_dim_kappa,
    single_dim_closed_K,
    tls_factors,
    tls_kappa_abs,
    condition_report,
)
from tlsekit.utils import SizeCapError, SizeCapWarning

from conftest import factors_for


def central_difference(problem, t, direction, h=1e-6):
    options = SolverOptions(requested_t=t)
    n = problem.n
    plus = solve(problem.perturbed(h * direction[:, :n], h * direction[:, n:]), options).X
    minus = solve(problem.perturbed(-h * direction[:, :n], -h * direction[:, n:]), options).X
    return (plus - minus) / (2 * h)


@pytest.mark.parametrize("t", [6, 4, 3])
def test_frechet_matrix_matches_finite_differences(small_problem, t):
    factors = factors_for(small_problem, t)
    K = frechet_matrix(factors)
    assert K.shape == (6 * 2, 12 * 8)
    direction = np.random.default_rng(t).standard_normal((12, 8))
    fd = central_difference(small_problem, t, direction)
    np.testing.assert_allclose(
        kt.unvec(K @ kt.vec(direction), 6, 2), fd, rtol=1e-5, atol=1e-6 * np.abs(fd).max()
    )


def test_directional_derivative_is_matrix_free_K(small_problem):
    factors = factors_for(small_problem)
    direction = np.random.default_rng(0).standard_normal((12, 8))
    K = frechet_matrix(factors)
    np.testing.assert_allclose(
        directional_derivative(factors, direction[:, :6], direction[:, 6:]),
        kt.unvec(K @ kt.vec(direction), 6, 2),
        atol=1e-10,
    )


def test_pinv_and_identity_forms_of_A2_agree(small_problem):
    factors = factors_for(small_problem)
    np.testing.assert_allclose(factors.A2, factors.A2_identity, atol=1e-10)


def test_kappa_abs_is_norm_of_K(small_problem):
    factors = factors_for(small_problem)
    K = frechet_matrix(factors)
    assert kappa_abs(factors) == pytest.approx(np.linalg.norm(K, 2), rel=1e-10)


def test_matrix_free_kappa_matches_explicit(small_problem):
    factors = factors_for(small_problem)
    explicit = kappa_abs(factors)
    matfree = kappa_abs(factors, "matrix-free", ConditionOptions(power_tol=1e-12))
    assert matfree == pytest.approx(explicit, rel=1e-6)


def test_unknown_kappa_mode(small_problem):
    with pytest.raises(ValueError, match="mode"):
        kappa_abs(factors_for(small_problem), "sketch")


def test_MN_assembly_equals_K(small_problem):
    factors = factors_for(small_problem, t=4)
    np.testing.assert_allclose(factors.M @ factors.N, frechet_matrix(factors), atol=1e-10)


def test_sandwich_bounds(small_problem, tiny_problem):
    for problem in (small_problem, tiny_problem):
        factors = factors_for(problem)
        bounds = kappa_bounds(factors.decomp, factors.solution)
        kappa = kappa_abs(factors)
        assert bounds.lower is not None
        assert bounds.lower <= kappa * (1 + 1e-12)
        assert kappa <= bounds.upper * (1 + 1e-12)
        assert bounds.rho_AC_1 >= 1 and bounds.rho_AC_2 >= 1


def test_lower_bound_only_at_full_rank_index(small_problem):
    factors = factors_for(small_problem, t=4)
    bounds = kappa_bounds(factors.decomp, factors.solution)
    assert bounds.lower is None
    assert kappa_abs(factors) <= bounds.upper


def test_k_zero_has_unit_gap_factor(small_problem):
    factors = factors_for(small_problem, t=2)
    assert kappa_bounds(factors.decomp, factors.solution).eta_k_sigma == 1.0


def test_mixed_componentwise_upper_bounds(small_problem):
    for t in (6, 4):
        factors = factors_for(small_problem, t)
        exact = mixed_componentwise(factors)
        upper = mixed_componentwise_upper(factors)
        assert exact.m <= upper.m * (1 + 1e-12)
        assert exact.c <= upper.c * (1 + 1e-12)
        assert exact.m <= exact.c * (1 + 1e-12)


def test_componentwise_zero_entry_convention():
    problem = TlseProblem.unconstrained(np.ones((1, 1)), np.ones((1, 1)))
    X = np.array([[1.0], [0.0]])
    result = mixed_componentwise_from_K(np.eye(2), problem, X)
    assert result.c == np.inf
    assert result.m == pytest.approx(1.0)


def test_relative_condition(small_problem):
    factors = factors_for(small_problem)
    kappa = kappa_abs(factors)
    expected = kappa * np.linalg.norm(small_problem.LH) / np.linalg.norm(factors.X)
    assert kappa_rel(factors) == pytest.approx(expected)
    bounds = kappa_bounds(factors.decomp, factors.solution)
    assert math.isnan(relative_upper(bounds, small_problem, np.zeros((6, 2))))


def test_condition_numbers_invariant_to_null_basis(small_problem):
    rotation = random_orthogonal(6, np.random.default_rng(9))
    base = factors_for(small_problem)
    decomp, solution = solve_with_decomposition(small_problem, basis_rotation=rotation)
    rotated = build_factors(decomp, solution)
    assert kappa_abs(rotated) == pytest.approx(kappa_abs(base), rel=1e-9)
    assert mixed_componentwise(rotated).m == pytest.approx(mixed_componentwise(base).m, rel=1e-8)


def test_condition_numbers_invariant_to_singular_vector_signs(small_problem):
    base = factors_for(small_problem)
    decomp = base.decomp
    signs = np.where(np.arange(decomp.sigma.size) % 3 == 0, -1.0, 1.0)
    flipped = dataclasses.replace(decomp, U=decomp.U * signs, V_tilde=decomp.V_tilde * signs)
    factors = build_factors(flipped, base.solution)
    np.testing.assert_allclose(frechet_matrix(factors), frechet_matrix(base), atol=1e-10)


def test_unconstrained_matches_tls_formulas(unconstrained_problem):
    factors = factors_for(unconstrained_problem)
    L, H = unconstrained_problem.L, unconstrained_problem.H
    np.testing.assert_allclose(frechet_matrix(factors), tls_factors(L, H, factors.t).K, atol=1e-10)
    assert kappa_abs(factors) == pytest.approx(tls_kappa_abs(L, H, factors.t), rel=1e-10)


def test_single_rhs_closed_form(single_rhs_problem):
    factors = factors_for(single_rhs_problem)
    aux = solve_single_dim(single_rhs_problem)
    closed = single_dim_closed_K(single_rhs_problem, aux)
    K = frechet_matrix(factors)
    np.testing.assert_allclose(closed.K, K, atol=1e-9 * np.abs(K).max())
    assert single_dim_kappa(factors.decomp, factors.solution) == pytest.approx(kappa_abs(factors), rel=1e-10)


def test_explicit_blocks_respect_cap(small_problem):
    factors = factors_for(small_problem, cap=50)
    assert not factors.fits_cap
    with pytest.raises(SizeCapError):
        frechet_matrix(factors)
    # the matrix-free path still works
    assert directional_derivative(factors, np.ones((12, 6)), np.ones((12, 2))).shape == (6, 2)


def test_condition_report_under_cap(small_problem):
    report = condition_report(small_problem, options=ConditionOptions(power_tol=1e-12))
    assert report.methods["kappa_abs"] == "explicit-kron"
    assert report.dual_path_gap < 1e-6
    assert report.kappa_abs_lower <= report.kappa_abs <= report.kappa_abs_upper
    assert report.m <= report.m_upper * (1 + 1e-12)
    assert report.to_dict()["dual_path_gap"] == report.dual_path_gap


def test_condition_report_single_rhs_cross_check(single_rhs_problem):
    report = condition_report(single_rhs_problem)
    assert report.methods["closed_form"] == "closed-form-d1"
    assert report.closed_form_gap < 1e-8


def test_condition_report_above_cap(small_problem):
    with pytest.warns(SizeCapWarning):
        report = condition_report(small_problem, options=ConditionOptions(explicit_cap=50))
    assert report.kappa_abs_explicit is None
    assert report.m is None and report.c is None
    assert report.methods["m"] == "skipped (size cap)"
    assert report.kappa_abs == report.kappa_abs_matfree
    assert report.m_upper > 0


def test_closed_form_with_zero_residual():
    problem, X_star = gen_consistent(2, 10, 5, 1, seed=4)
    aux = solve_single_dim(problem)
    closed = single_dim_closed_K(problem, aux)
    assert np.abs(closed.u).max() <= 1e-10
    assert np.abs(closed.T2).max() <= 1e-10
    np.testing.assert_allclose(
        closed.T1, -np.hstack([closed.C_A_pinv, aux.K_cal @ problem.A.T]), atol=1e-10
    )
    K = frechet_matrix(factors_for(problem))
    np.testing.assert_allclose(closed.K, K, atol=1e-9 * np.abs(K).max())
    direction = np.random.default_rng(0).standard_normal((12, 6))
    fd = central_difference(problem, problem.n, direction)
    np.testing.assert_allclose(closed.K @ kt.vec(direction), kt.vec(fd), rtol=1e-5, atol=1e-6 * np.abs(fd).max())


@pytest.mark.parametrize("seed", range(3))
def test_closed_form_with_square_constraints(seed):
    problem = gen_uniform(4, 10, 4, 1, seed=seed)
    aux = solve_single_dim(problem)
    closed = single_dim_closed_K(problem, aux)
    rng = np.random.default_rng(seed)
    for _ in range(3):
        direction = rng.standard_normal((14, 5))
        fd = central_difference(problem, problem.n, direction)
        np.testing.assert_allclose(
            closed.K @ kt.vec(direction), kt.vec(fd), rtol=1e-5, atol=1e-6 * np.abs(fd).max()
        )


def test_mixed_componentwise_invariant_to_row_scaling(small_problem):
    alpha, beta = 3.0, 0.25
    scaled = TlseProblem(
        A=alpha * small_problem.A,
        B=alpha * small_problem.B,
        C=beta * small_problem.C,
        D=beta * small_problem.D,
    )
    for t in (6, 4):
        base, other = factors_for(small_problem, t), factors_for(scaled, t)
        np.testing.assert_allclose(other.X, base.X, atol=1e-10)
        a, b = mixed_componentwise(base), mixed_componentwise(other)
        assert b.m == pytest.approx(a.m, rel=1e-8)
        assert b.c == pytest.approx(a.c, rel=1e-8)


# seeded sweeps over small random instances

SWEEP_DIMS = [(2, 10, 6, 2), (1, 8, 4, 1), (3, 12, 8, 2), (2, 9, 5, 2)]
SINGLE_RHS_DIMS = [(2, 10, 5, 1), (1, 8, 4, 1), (3, 12, 8, 1), (2, 9, 6, 1)]
TLS_DIMS = [(9, 4, 2), (8, 3, 1), (12, 5, 2), (10, 4, 1)]


def sweep_problem(seed, dims=SWEEP_DIMS):
    return gen_uniform(*dims[seed % len(dims)], seed=seed)


@pytest.mark.parametrize("seed", range(100))
def test_sandwich_bounds_sweep_full_rank_index(seed):
    problem = sweep_problem(seed)
    factors = factors_for(problem, t=problem.n)
    bounds = kappa_bounds(factors.decomp, factors.solution)
    kappa = kappa_abs(factors)
    assert bounds.lower <= kappa * (1 + 1e-10)
    assert kappa <= bounds.upper * (1 + 1e-10)


@pytest.mark.parametrize("seed", range(100))
def test_upper_bound_sweep_smaller_rank_index(seed):
    problem = sweep_problem(seed)
    t = problem.p + seed % (problem.n - problem.p)
    factors = factors_for(problem, t=t)
    bounds = kappa_bounds(factors.decomp, factors.solution)
    assert bounds.lower is None
    assert kappa_abs(factors) <= bounds.upper * (1 + 1e-10)


@pytest.mark.parametrize("seed", range(100))
def test_mixed_componentwise_sweep(seed):
    problem = sweep_problem(seed)
    t = problem.p + seed % (problem.n - problem.p + 1)
    factors = factors_for(problem, t=t)
    K = frechet_matrix(factors)
    np.testing.assert_allclose(factors.M @ factors.N, K, atol=1e-10 * np.abs(K).max())
    exact, upper = mixed_componentwise(factors), mixed_componentwise_upper(factors)
    assert exact.m <= upper.m * (1 + 1e-10)
    assert exact.c <= upper.c * (1 + 1e-10)


@pytest.mark.parametrize("seed", range(50))
def test_single_rhs_closed_form_sweep(seed):
    problem = sweep_problem(seed, SINGLE_RHS_DIMS)
    K = frechet_matrix(factors_for(problem, t=problem.n))
    closed = single_dim_closed_K(problem, solve_single_dim(problem)).K
    assert np.abs(K - closed).max() <= 1e-10 * np.abs(K).max()


@pytest.mark.parametrize("seed", range(50))
def test_unconstrained_sweep_matches_tls(seed):
    q, n, d = TLS_DIMS[seed % len(TLS_DIMS)]
    rng = np.random.default_rng(seed)
    problem = TlseProblem.unconstrained(rng.uniform(size=(q, n)), rng.uniform(size=(q, d)))
    L, H = problem.L, problem.H
    factors = factors_for(problem)
    X = tls_solve(L, H, factors.t)
    np.testing.assert_allclose(factors.X, X, rtol=1e-10, atol=1e-12)
    assert kappa_abs(factors) == pytest.approx(tls_kappa_abs(L, H, factors.t), rel=1e-10)
    ours = mixed_componentwise(factors)
    reference = mixed_componentwise_from_K(tls_factors(L, H, factors.t).K, problem, X)
    assert ours.m == pytest.approx(reference.m, rel=1e-10)
    assert ours.c == pytest.approx(reference.c, rel=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_dual_path_sweep(seed):
    problem = sweep_problem(seed)
    report = condition_report(problem, options=ConditionOptions(seed=seed))
    assert report.power_converged
    assert report.dual_path_gap <= 1e-6
    K_norm = np.linalg.norm(frechet_matrix(factors_for(problem, t=report.t)), 2)
    assert report.kappa_abs_explicit == pytest.approx(K_norm, rel=1e-6)
    assert report.kappa_abs_matfree == pytest.approx(K_norm, rel=1e-6)

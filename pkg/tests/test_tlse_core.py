import dataclasses

import numpy as np
import pytest

from tlsekit import kron_tools as kt
from tlsekit.tlse_core import (
    TlseProblem,
    SolverOptions,
    validate,
    factorize,
    select_rank,
    solve,
    solve_with_decomposition,
    solution_from_decomposition,
    tls_solve,
    lse_solve,
    wtls_solve,
    solve_single_dim,
)
from tlsekit.problem_gen import gen_uniform, gen_consistent, random_orthogonal
from tlsekit.utils import InfeasibleProblemError, ValidationError, GateWarning

from conftest import problem_with_spectrum


def test_validate_example_dimensions():
    report = validate(gen_uniform(10, 40, 40, 5, seed=0))
    assert report.passed, report.reasons
    assert report.sigma_min_C > 0


def test_validate_repeated_constraint_row(small_problem):
    C = small_problem.C.copy()
    C[1] = C[0]
    D = small_problem.D.copy()
    D[1] = D[0]
    report = validate(dataclasses.replace(small_problem, C=C, D=D))
    assert not report.passed
    assert "constraint matrix rank-deficient" in report.reasons


def test_validate_not_overdetermined():
    rng = np.random.default_rng(0)
    report = validate(TlseProblem.unconstrained(rng.uniform(size=(4, 4)), rng.uniform(size=(4, 1))))
    assert not report.passed
    assert any("not overdetermined" in r for r in report.reasons)


def test_validate_too_few_rows():
    rng = np.random.default_rng(0)
    report = validate(TlseProblem.unconstrained(rng.uniform(size=(5, 4)), rng.uniform(size=(5, 2))))
    assert any("too few data rows" in r for r in report.reasons)


def test_validate_shape_and_finiteness(small_problem):
    bad = dataclasses.replace(small_problem, B=small_problem.B[:-1])
    assert any("dimension mismatch" in r for r in validate(bad).reasons)

    A = small_problem.A.copy()
    A[0, 0] = np.nan
    report = validate(dataclasses.replace(small_problem, A=A))
    assert report.reasons == ["non-finite entries"]
    with pytest.raises(ValidationError, match="non-finite"):
        report.raise_for_failure()


def test_vector_inputs_become_matrices():
    rng = np.random.default_rng(0)
    problem = TlseProblem(
        A=rng.uniform(size=(8, 3)), B=rng.uniform(size=8), C=rng.uniform(size=3), D=np.ones(1)
    )
    assert (problem.p, problem.q, problem.n, problem.d) == (1, 8, 3, 1)


def test_solution_satisfies_constraints(small_problem):
    sol = solve(small_problem)
    assert sol.X.shape == (6, 2)
    assert sol.k == 4 and sol.t == 6
    assert sol.constraint_residual < 1e-10
    assert sol.consistency_residual < 1e-10
    # corrected data is consistent too
    np.testing.assert_allclose(sol.A_corr @ sol.X, sol.B_corr, atol=1e-10)
    assert sol.correction_norm == pytest.approx(np.linalg.norm(sol.sigma[sol.k :]))


def test_summary_fields(small_problem):
    summary = solve(small_problem).summary()
    assert set(summary) == {"x_t", "k", "t", "sigma", "residuals"}
    assert set(summary["residuals"]) == {"constraint", "consistency", "correction_norm"}


def test_solution_invariant_to_null_basis(small_problem):
    base = solve(small_problem)
    rotation = random_orthogonal(6, np.random.default_rng(4))
    _, rotated = solve_with_decomposition(small_problem, basis_rotation=rotation)
    np.testing.assert_allclose(rotated.X, base.X, atol=1e-10)


def test_solution_invariant_to_singular_vector_signs(small_problem):
    decomp, base = solve_with_decomposition(small_problem)
    signs = np.where(np.arange(decomp.sigma.size) % 2, -1.0, 1.0)
    flipped = dataclasses.replace(decomp, U=decomp.U * signs, V_tilde=decomp.V_tilde * signs)
    np.testing.assert_allclose(solution_from_decomposition(flipped).X, base.X, atol=1e-12)


def test_factorize_orthogonality(small_problem):
    decomp = factorize(small_problem)
    Q = np.hstack([decomp.Q1, decomp.Q2])
    np.testing.assert_allclose(Q.T @ Q, np.eye(8), atol=1e-12)
    np.testing.assert_allclose(small_problem.C_tilde @ decomp.Q2, 0.0, atol=1e-12)
    assert np.all(np.diff(decomp.sigma) <= 0)


def test_select_rank_out_of_range(small_problem):
    decomp = factorize(small_problem)
    with pytest.raises(InfeasibleProblemError) as info:
        select_rank(decomp, requested_t=7)
    assert info.value.gate == "range"


def test_k_zero_needs_constraints(small_problem, unconstrained_problem):
    assert select_rank(factorize(small_problem), requested_t=2) == 0
    with pytest.raises(InfeasibleProblemError):
        select_rank(factorize(unconstrained_problem), requested_t=0)


def test_requested_t_without_gap():
    problem = problem_with_spectrum([5.0, 3.0, 3.0, 1.0], q=6, n=3)
    with pytest.raises(InfeasibleProblemError) as info:
        solve(problem, SolverOptions(requested_t=2))
    assert info.value.gate == "gap"


def test_gap_failure_falls_back_to_smaller_k():
    problem = problem_with_spectrum([5.0, 4.0, 2.0, 2.0], q=6, n=3)
    with pytest.warns(GateWarning, match="falling back"):
        sol = solve(problem)
    assert sol.k == 2


def test_no_admissible_k():
    # the smallest singular direction is pure A, so V22 vanishes for every k
    V = np.eye(4)[:, [3, 1, 2, 0]]
    problem = problem_with_spectrum([4.0, 3.0, 2.0, 1.0], q=6, n=3, V=V)
    with pytest.raises(InfeasibleProblemError) as info:
        solve(problem)
    assert info.value.gate == "rank"


def test_unconstrained_reduces_to_tls(unconstrained_problem):
    sol = solve(unconstrained_problem)
    X = tls_solve(unconstrained_problem.A, unconstrained_problem.B, sol.t)
    np.testing.assert_allclose(sol.X, X, atol=1e-12)


def test_consistent_data_recovers_lse_solution():
    problem, X_star = gen_consistent(2, 12, 5, 2, seed=1)
    sol = solve(problem)
    np.testing.assert_allclose(sol.X, X_star, atol=1e-9)
    np.testing.assert_allclose(lse_solve(problem.A, problem.B, problem.C, problem.D), X_star, atol=1e-9)


def test_lse_solve_satisfies_constraint():
    problem, _ = gen_consistent(2, 12, 5, 1, seed=2, noise=0.1)
    X = lse_solve(problem.A, problem.B, problem.C, problem.D)
    np.testing.assert_allclose(problem.C @ X, problem.D, atol=1e-12)


def test_wtls_approaches_tlse(small_problem):
    sol = solve(small_problem)
    X_eps = wtls_solve(small_problem, 1e-6, t=sol.t)
    assert np.linalg.norm(X_eps - sol.X) <= 1e-8


def test_wtls_error_shrinks_quadratically(small_problem):
    sol = solve(small_problem)
    errors = [np.linalg.norm(wtls_solve(small_problem, eps, t=sol.t) - sol.X) for eps in (1e-2, 1e-3, 1e-4)]
    scaled = [e / eps**2 for e, eps in zip(errors, (1e-2, 1e-3, 1e-4))]
    assert max(scaled) <= 10 * min(scaled)


def test_single_dim_matches_general_solver(single_rhs_problem):
    sol = solve(single_rhs_problem)
    aux = solve_single_dim(single_rhs_problem)
    np.testing.assert_allclose(aux.x_n, sol.X[:, 0], atol=1e-10)
    np.testing.assert_allclose(aux.r, single_rhs_problem.A @ aux.x_n - single_rhs_problem.B[:, 0])
    assert aux.rho == pytest.approx(np.sqrt(1 + aux.x_n @ aux.x_n))
    np.testing.assert_allclose(single_rhs_problem.C @ aux.K_cal, 0.0, atol=1e-10)


def test_single_dim_rejects_matrix_rhs(small_problem):
    with pytest.raises(ValidationError):
        solve_single_dim(small_problem)


def test_x_c_is_minimum_norm_constraint_solution(single_rhs_problem):
    aux = solve_single_dim(single_rhs_problem)
    expected = kt.pinv(single_rhs_problem.C) @ single_rhs_problem.D[:, 0]
    np.testing.assert_allclose(aux.x_C, expected)


@pytest.mark.parametrize("t", [4, 3, 2])
def test_minimum_norm_among_null_space_solutions(small_problem, t):
    decomp, sol = solve_with_decomposition(small_problem, SolverOptions(requested_t=t))
    V12, V22 = decomp.V12, decomp.V22
    P = np.eye(decomp.r) - kt.pinv(V22) @ V22
    rng = np.random.default_rng(t)
    for _ in range(20):
        X = sol.X + V12 @ P @ rng.standard_normal((decomp.r, 2))
        # still solves the corrected system and the constraints
        np.testing.assert_allclose(sol.A_hat @ X, sol.B_hat, atol=1e-10)
        np.testing.assert_allclose(small_problem.C @ X, small_problem.D, atol=1e-10)
        assert np.linalg.norm(X) >= np.linalg.norm(sol.X) * (1 - 1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_single_dim_with_square_constraints(seed):
    problem = gen_uniform(4, 10, 4, 1, seed=seed)
    aux = solve_single_dim(problem)
    expected = np.linalg.solve(problem.C, problem.D[:, 0])
    np.testing.assert_allclose(aux.x_n, expected, rtol=1e-10)
    np.testing.assert_array_equal(aux.K_cal, 0.0)
    np.testing.assert_allclose(solve(problem).X[:, 0], expected, rtol=1e-10)
    np.testing.assert_allclose(lse_solve(problem.A, problem.B, problem.C, problem.D)[:, 0], expected, rtol=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_single_dim_on_consistent_data_is_lse(seed):
    problem, X_star = gen_consistent(2, 10, 5, 1, seed=seed)
    aux = solve_single_dim(problem)
    assert aux.sigma_next <= 1e-12 * np.linalg.norm(problem.A_tilde)
    lse = lse_solve(problem.A, problem.B, problem.C, problem.D)[:, 0]
    np.testing.assert_allclose(aux.x_n, lse, atol=1e-9)
    np.testing.assert_allclose(aux.x_n, X_star[:, 0], atol=1e-9)
    np.testing.assert_allclose(aux.r, 0.0, atol=1e-9)

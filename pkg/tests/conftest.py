import gin
import numpy as np
import pytest

from tlsekit.tlse_core import TlseProblem, SolverOptions, solve_with_decomposition
from tlsekit.conditioning import ConditionOptions, build_factors
from tlsekit.problem_gen import gen_uniform, random_orthogonal


@pytest.fixture(autouse=True)
def clean_gin():
    gin.clear_config()
    yield
    gin.clear_config()


@pytest.fixture
def small_problem() -> TlseProblem:
    # (p, q, n, d) = (2, 10, 6, 2)
    return gen_uniform(2, 10, 6, 2, seed=11)


@pytest.fixture
def tiny_problem() -> TlseProblem:
    return gen_uniform(1, 6, 3, 2, seed=5)


@pytest.fixture
def single_rhs_problem() -> TlseProblem:
    return gen_uniform(2, 10, 5, 1, seed=3)


@pytest.fixture
def unconstrained_problem() -> TlseProblem:
    rng = np.random.default_rng(8)
    return TlseProblem.unconstrained(rng.uniform(size=(9, 4)), rng.uniform(size=(9, 2)))


def factors_for(problem: TlseProblem, t=None, cap=10_000):
    decomp, solution = solve_with_decomposition(problem, SolverOptions(requested_t=t))
    return build_factors(decomp, solution, ConditionOptions(explicit_cap=cap))


def problem_with_spectrum(s, q, n, V=None, seed=0) -> TlseProblem:
    """
    Unconstrained problem whose [A B] has singular values `s` and right
    singular vectors V (random when omitted).
    """
    rng = np.random.default_rng(seed)
    s = np.asarray(s, dtype=float)
    U = random_orthogonal(q, rng)[:, : len(s)]
    V = random_orthogonal(len(s), rng) if V is None else V
    AB = (U * s) @ V.T
    return TlseProblem.unconstrained(AB[:, :n], AB[:, n:])

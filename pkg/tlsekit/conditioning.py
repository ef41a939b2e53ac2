"""
Condition numbers of the minimum-norm TLSE solution.

The first-order map vec([dL dH]) -> vec(dX_t) is K = (H1 + H2) G Z-hat, with
G = D^{-1} [I_t (x) S~2^T, S1 (x) I_r] and D diagonal. `ConditionFactors`
keeps the small dense blocks those Kronecker products are built from; the
explicit Kronecker matrices are only formed on demand, under a size cap.
"""

import math
import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import gin
import numpy as np
import scipy.linalg as la

from . import kron_tools as kt
from . import matfree
from .tlse_core import (
    TlseProblem,
    TlseDecomposition,
    TlseSolution,
    SingleDimAuxiliaries,
    SolverOptions,
    solve_with_decomposition,
    solve_single_dim,
)
from .utils import (
    InfeasibleProblemError,
    ValidationError,
    SizeCapWarning,
    divide_with_convention,
    tlse_warning,
)


@gin.configurable
@dataclass
class ConditionOptions:
    explicit_cap: int = kt.DEFAULT_EXPLICIT_CAP
    power_tol: float = 1e-8
    max_iter: int = 5000
    seed: int = 0
    pinv_tol: Optional[float] = None


def _norm2(M: np.ndarray) -> float:
    return float(la.norm(M, 2)) if M.size else 0.0


@dataclass(eq=False)
class ConditionFactors:
    decomp: TlseDecomposition
    solution: TlseSolution
    cap: int = kt.DEFAULT_EXPLICIT_CAP
    pinv_tol: Optional[float] = None

    def __post_init__(self):
        dc = self.decomp
        self.problem = dc.problem
        self.n, self.d, self.p, self.q = dc.n, dc.d, dc.p, dc.q
        self.k, self.t, self.r = dc.k, dc.t, dc.r
        self.X = self.solution.X

        self.S1 = dc.S1
        self.sigma2 = dc.sigma2
        self.tau = np.r_[np.zeros(self.p), np.ones(self.k)]
        # Den[j, i] = s_i^2 - tau_i * sigma~_{k+j}^2, so vec(Den) is diag(D)
        self.Den = self.S1[None, :] ** 2 - self.tau[None, :] * self.sigma2[:, None] ** 2
        if self.Den.size and self.Den.min() <= 0:
            raise InfeasibleProblemError(
                "gap", "non-positive entry in the diagonal denominator D"
            )

        self.AC = dc.AC_pinv
        self.P_bold = np.vstack([np.eye(self.p), np.zeros((self.q, self.p))])
        self.Q_bold = np.vstack([-self.AC.T, np.eye(self.q)])
        self.QU1 = self.Q_bold @ dc.U1
        self.QU2 = self.Q_bold @ dc.U2
        self.QU2S2 = self.QU2 * self.sigma2
        self.PUC_QU1 = np.hstack([self.P_bold @ dc.U_C, self.QU1])
        self.PUC_QU1_S1 = self.PUC_QU1 * self.S1
        self.zero_V1 = np.hstack([np.zeros((self.n + self.d, self.p)), dc.V1_bar])
        self.V2_bar = dc.V2_bar
        self.W0 = np.diag(self.tau)

        V22 = dc.V22
        self.V22_pinv = kt.pinv(V22, self.pinv_tol)
        self.V22V22T_inv = la.inv(V22 @ V22.T)
        self.F_V22 = np.eye(self.r) - self.V22_pinv @ V22
        # vec(dX) = vec(A1 Y B1 + A2 Y^T B2) for the r x t workspace Y
        self.A1 = dc.V12 @ self.F_V22
        self.B1 = dc.V_hat21.T @ self.V22V22T_inv
        self.A2 = kt.pinv(dc.V_hat11, self.pinv_tol).T
        self.A2_identity = dc.V_hat11 + self.X @ dc.V_hat21
        self.B2 = self.V22_pinv

        # R R^T = [P U_C, Q U~1]^T [P U_C, Q U~1]
        self.R = np.eye(self.t)
        self.R[self.p :, : self.p] = -dc.U1.T @ self.AC @ dc.U_C
        self.RtS1 = self.R.T * self.S1

    @property
    def D_diag(self) -> np.ndarray:
        return kt.vec(self.Den)

    @property
    def fits_cap(self) -> bool:
        return (self.n + self.d) * (self.p + self.q) <= self.cap

    def _check_cap(self):
        kt.check_size_cap(
            self.n + self.d, self.p + self.q, self.cap, "Kronecker operand product"
        )

    @cached_property
    def H1(self) -> np.ndarray:
        self._check_cap()
        return kt.kron(self.V22V22T_inv @ self.decomp.V_hat21, self.A1)

    @cached_property
    def H2(self) -> np.ndarray:
        self._check_cap()
        return kt.kron(self.B2.T, self.A2) @ kt.vec_permutation(self.r, self.t)

    @cached_property
    def G(self) -> np.ndarray:
        self._check_cap()
        block = np.hstack(
            [
                kt.kron(np.eye(self.t), np.diag(self.sigma2)),
                kt.kron(np.diag(self.S1), np.eye(self.r)),
            ]
        )
        return block / self.D_diag[:, None]

    @cached_property
    def Z_hat(self) -> np.ndarray:
        self._check_cap()
        return np.vstack(
            [
                kt.kron(self.zero_V1.T, self.QU2.T),
                kt.vec_permutation(self.t, self.r)
                @ kt.kron(self.V2_bar.T, self.PUC_QU1.T),
            ]
        )

    @cached_property
    def Z_bar(self) -> np.ndarray:
        self._check_cap()
        return la.block_diag(
            kt.kron(self.W0, self.QU2.T), kt.kron(self.R, np.eye(self.r))
        )

    @cached_property
    def N1(self) -> np.ndarray:
        self._check_cap()
        return kt.kron(self.zero_V1.T, self.QU2S2.T)

    @cached_property
    def N2(self) -> np.ndarray:
        self._check_cap()
        return kt.vec_permutation(self.t, self.r) @ kt.kron(
            self.V2_bar.T, self.PUC_QU1_S1.T
        )

    @property
    def N(self) -> np.ndarray:
        return self.N1 + self.N2

    @property
    def M(self) -> np.ndarray:
        # (H1 + H2) D^{-1}, D^{-1} applied as a column scaling
        return (self.H1 + self.H2) / self.D_diag[None, :]

    @property
    def H_breve(self) -> np.ndarray:
        return (self.H1 + self.H2) @ self.G @ self.Z_bar


def build_factors(
    decomp: TlseDecomposition,
    solution: TlseSolution,
    options: Optional[ConditionOptions] = None,
) -> ConditionFactors:
    options = options or ConditionOptions()
    assert decomp.k == solution.k, "decomposition and solution disagree on k"
    return ConditionFactors(
        decomp=decomp, solution=solution, cap=options.explicit_cap, pinv_tol=options.pinv_tol
    )


def frechet_matrix(factors: ConditionFactors) -> np.ndarray:
    """
    Explicit K = (H1 + H2) G Z-hat, shape nd x (p+q)(n+d).
    """
    return (factors.H1 + factors.H2) @ (factors.G @ factors.Z_hat)


def directional_derivative(
    factors: ConditionFactors, dL: np.ndarray, dH: np.ndarray
) -> np.ndarray:
    """
    unvec(K vec([dL dH])) without forming K.
    """
    f = factors
    delta = np.hstack([dL, dH])
    assert delta.shape == (f.p + f.q, f.n + f.d), "perturbation has the wrong shape"
    W1 = f.QU2.T @ delta @ f.zero_V1
    W2 = f.V2_bar.T @ delta.T @ f.PUC_QU1
    Y = (f.sigma2[:, None] * W1 + W2 * f.S1[None, :]) / f.Den
    return f.A1 @ Y @ f.B1 + f.A2_identity @ Y.T @ f.B2


def kappa_abs(
    factors: ConditionFactors,
    mode: str = "explicit",
    options: Optional[ConditionOptions] = None,
) -> float:
    """
    Absolute normwise condition number ||(H1 + H2) G Z-bar||_2.
    """
    options = options or ConditionOptions()
    if mode == "explicit":
        return _norm2(factors.H_breve)
    elif mode == "matrix-free":
        result = matfree.power_kappa_abs(
            matfree.BreveOperator(factors),
            tol=options.power_tol,
            max_iter=options.max_iter,
            seed=options.seed,
        )
        return result.estimate
    else:
        raise ValueError(f"Unrecognized kappa_abs mode `{mode}`")


def kappa_rel(factors: ConditionFactors, kappa: Optional[float] = None) -> float:
    """
    kappa_abs * ||[L H]||_F / ||X_t||_F; NaN when X_t = 0.
    """
    x_norm = np.linalg.norm(factors.X)
    if x_norm == 0:
        return math.nan
    if kappa is None:
        kappa = kappa_abs(factors)
    return kappa * np.linalg.norm(factors.problem.LH) / x_norm


@dataclass
class KappaBounds:
    upper: float
    lower: Optional[float]
    rho_AC_1: float
    rho_AC_2: float
    eta_k_sigma: float
    x_norm2_sq: float


def kappa_bounds(decomp: TlseDecomposition, solution: TlseSolution) -> KappaBounds:
    """
    Compact bounds on kappa_abs. The lower bound only exists for k = n - p.
    """
    problem = decomp.problem
    C_t = problem.C_tilde
    AC = decomp.AC_pinv
    rho1 = 1.0 + _norm2(C_t) + _norm2(AC @ C_t)
    rho2 = 1.0 + _norm2(kt.pinv(C_t)) + _norm2(AC)

    k = decomp.k
    eta = 1.0
    if k > 0:
        a, b = decomp.sigma[k - 1], decomp.sigma[k]
        eta = max(1.0, math.sqrt(a**2 + b**2) / (a**2 - b**2))

    x2 = _norm2(solution.X) ** 2
    lower = None
    if k == decomp.n - decomp.p:
        lower = eta / (_norm2(decomp.V_hat11) * _norm2(decomp.V22) * rho1)
    return KappaBounds(
        upper=(1.0 + x2) * rho2 * eta,
        lower=lower,
        rho_AC_1=rho1,
        rho_AC_2=rho2,
        eta_k_sigma=eta,
        x_norm2_sq=x2,
    )


def relative_upper(bounds: KappaBounds, problem: TlseProblem, X: np.ndarray) -> float:
    x_norm = np.linalg.norm(X)
    if x_norm == 0:
        return math.nan
    return bounds.upper * np.linalg.norm(problem.LH) / x_norm


@dataclass
class MixedComponentwise:
    m: float
    c: float


def mixed_componentwise_from_K(
    K: np.ndarray, problem: TlseProblem, X: np.ndarray
) -> MixedComponentwise:
    num = np.abs(K) @ kt.vec(np.abs(problem.LH))
    x_abs = kt.vec(np.abs(X))
    x_max = x_abs.max()
    m = num.max() / x_max if x_max > 0 else math.nan
    c = float(divide_with_convention(num, x_abs).max())
    return MixedComponentwise(m=float(m), c=c)


def mixed_componentwise(factors: ConditionFactors) -> MixedComponentwise:
    """
    Mixed and componentwise condition numbers from the M N = K assembly.
    Zero entries of X_t follow xi/0 = 0 if xi = 0 and +inf otherwise.
    """
    return mixed_componentwise_from_K(factors.M @ factors.N, factors.problem, factors.X)


def mixed_componentwise_upper(factors: ConditionFactors) -> MixedComponentwise:
    """
    Kronecker-free upper bounds m^u and c^u.
    """
    f = factors
    LH_abs = np.abs(f.problem.LH)
    upsilon = (
        np.abs(f.QU2S2).T @ LH_abs @ np.abs(f.zero_V1)
        + np.abs(f.V2_bar).T @ LH_abs.T @ np.abs(f.PUC_QU1_S1)
    )
    Y = upsilon / f.Den
    num = np.abs(f.A2) @ Y.T @ np.abs(f.B2) + np.abs(f.A1) @ Y @ np.abs(f.B1)
    x_abs = np.abs(f.X)
    x_max = x_abs.max()
    m_upper = num.max() / x_max if x_max > 0 else math.nan
    c_upper = float(divide_with_convention(num, x_abs).max())
    return MixedComponentwise(m=float(m_upper), c=c_upper)


def single_dim_kappa(
    decomp: TlseDecomposition,
    solution: TlseSolution,
    options: Optional[ConditionOptions] = None,
) -> float:
    """
    Compact kappa_abs for d = 1:
    ||(V^21 (x) (V12 + x V22) + (V^11 + x V^21) (x) V22) G Z-bar||_2 / ||V22||^2.
    """
    if decomp.d != 1:
        raise ValidationError(["single-dimensional condition number requires d = 1"])
    factors = build_factors(decomp, solution, options)
    x = solution.X
    V22 = decomp.V22
    H = kt.kron(decomp.V_hat21, decomp.V12 + x @ V22) + kt.kron(
        decomp.V_hat11 + x @ decomp.V_hat21, V22
    )
    H = H / np.sum(V22**2)
    return _norm2(H @ factors.G @ factors.Z_bar)


@dataclass
class SingleDimClosedForm:
    T1: np.ndarray
    T2: np.ndarray
    G_of_x: np.ndarray
    u: np.ndarray
    C_A_pinv: np.ndarray

    @property
    def K(self) -> np.ndarray:
        return self.T1 @ self.G_of_x - self.T2


def single_dim_closed_K(
    problem: TlseProblem, aux: SingleDimAuxiliaries
) -> SingleDimClosedForm:
    """
    K = T1 G(x_n) - T2 for d = 1 and k = n - p.
    """
    if problem.d != 1:
        raise ValidationError(["closed-form K requires d = 1"])
    A, C = problem.A, problem.C
    n, pq = problem.n, problem.p + problem.q
    x, r, K_cal = aux.x_n, aux.r, aux.K_cal

    AC = problem.A_tilde @ kt.pinv(problem.C_tilde)
    u = np.concatenate([-AC.T @ r, r])
    C_A_pinv = (np.eye(n) - K_cal @ A.T @ A) @ kt.pinv(C)
    T1 = 2.0 / aux.rho**2 * np.outer(K_cal @ x, u) - np.hstack([C_A_pinv, K_cal @ A.T])
    T2 = K_cal @ kt.kron(np.hstack([np.eye(n), np.zeros((n, 1))]), u[None, :])
    G_of_x = kt.kron(np.r_[x, -1.0][None, :], np.eye(pq))
    return SingleDimClosedForm(T1=T1, T2=T2, G_of_x=G_of_x, u=u, C_A_pinv=C_A_pinv)


@dataclass
class TlsFactors:
    H1: np.ndarray
    H2: np.ndarray
    D: np.ndarray
    Z: np.ndarray

    @property
    def K(self) -> np.ndarray:
        return (self.H1 + self.H2) @ self.D @ self.Z


def tls_factors(
    L: np.ndarray, H: np.ndarray, t: int, pinv_tol: Optional[float] = None
) -> TlsFactors:
    """
    First-order factors of the unconstrained multidimensional TLS solution,
    built directly from the SVD of [L H].
    """
    n, d = L.shape[1], H.shape[1]
    r = n + d - t
    U, s, Vt = la.svd(np.hstack([L, H]), full_matrices=False)
    V = Vt.T
    U1, U2 = U[:, :t], U[:, t:]
    S1, S2 = s[:t], s[t:]
    V11, V12, V21, V22 = V[:n, :t], V[:n, t:], V[n:, :t], V[n:, t:]
    V22p = kt.pinv(V22, pinv_tol)
    F = np.eye(r) - V22p @ V22

    H1 = kt.kron(la.inv(V22 @ V22.T) @ V21, V12 @ F)
    H2 = kt.kron(V22p.T, kt.pinv(V11, pinv_tol).T) @ kt.vec_permutation(r, t)
    den = kt.vec(S1[None, :] ** 2 - S2[:, None] ** 2)
    Dm = np.hstack([kt.kron(np.eye(t), np.diag(S2)), kt.kron(np.diag(S1), np.eye(r))])
    Dm = Dm / den[:, None]
    Z = np.vstack(
        [
            kt.kron(V[:, :t].T, U2.T),
            kt.vec_permutation(t, r) @ kt.kron(V[:, t:].T, U1.T),
        ]
    )
    return TlsFactors(H1=H1, H2=H2, D=Dm, Z=Z)


def tls_kappa_abs(L: np.ndarray, H: np.ndarray, t: int) -> float:
    f = tls_factors(L, H, t)
    return _norm2((f.H1 + f.H2) @ f.D)


@dataclass
class ConditionReport:
    kappa_abs: float
    kappa_rel: float
    kappa_abs_upper: float
    kappa_abs_lower: Optional[float]
    kappa_rel_upper: float
    m: Optional[float]
    c: Optional[float]
    m_upper: float
    c_upper: float
    rho_AC_1: float
    rho_AC_2: float
    eta_k_sigma: float
    x_norm2_sq: float
    k: int
    t: int
    kappa_abs_explicit: Optional[float] = None
    kappa_abs_matfree: Optional[float] = None
    power_iterations: int = 0
    power_converged: bool = True
    closed_form_gap: Optional[float] = None
    methods: dict[str, str] = field(default_factory=dict)

    @property
    def dual_path_gap(self) -> Optional[float]:
        if self.kappa_abs_explicit is None or self.kappa_abs_matfree is None:
            return None
        return abs(self.kappa_abs_explicit - self.kappa_abs_matfree) / max(
            self.kappa_abs_explicit, np.finfo(float).tiny
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["dual_path_gap"] = self.dual_path_gap
        return out


def condition_report(
    problem: TlseProblem,
    solver_options: Optional[SolverOptions] = None,
    options: Optional[ConditionOptions] = None,
) -> ConditionReport:
    """
    Solve, then fill every condition number and bound. Explicit Kronecker
    formulas are used under the size cap; above it kappa_abs comes from the
    matrix-free power method and m, c are skipped.
    """
    options = options or ConditionOptions()
    decomp, solution = solve_with_decomposition(problem, solver_options)
    factors = build_factors(decomp, solution, options)
    methods = {}

    power = matfree.power_kappa_abs(
        matfree.BreveOperator(factors),
        tol=options.power_tol,
        max_iter=options.max_iter,
        seed=options.seed,
    )
    kappa_mf = power.estimate
    kappa_ex = m = c = closed_gap = None
    if factors.fits_cap:
        kappa_ex = kappa_abs(factors, "explicit")
        mc = mixed_componentwise(factors)
        m, c = mc.m, mc.c
        methods["kappa_abs"] = "explicit-kron"
        methods["m"] = methods["c"] = "explicit-kron"
        if problem.d == 1 and decomp.k == problem.n - problem.p:
            try:
                aux = solve_single_dim(problem, solver_options)
            except InfeasibleProblemError as e:
                tlse_warning(f"closed-form K cross-check skipped: {e}")
            else:
                K = frechet_matrix(factors)
                closed = single_dim_closed_K(problem, aux).K
                closed_gap = float(np.abs(closed - K).max() / np.abs(K).max())
                methods["closed_form"] = "closed-form-d1"
    else:
        tlse_warning(
            "explicit path skipped (size cap); kappa_abs from power iteration",
            SizeCapWarning,
        )
        methods["kappa_abs"] = "matrix-free"
        methods["m"] = methods["c"] = "skipped (size cap)"

    kappa = kappa_ex if kappa_ex is not None else kappa_mf
    bounds = kappa_bounds(decomp, solution)
    upper = mixed_componentwise_upper(factors)
    methods["bounds"] = "compact"
    return ConditionReport(
        kappa_abs=kappa,
        kappa_rel=kappa_rel(factors, kappa),
        kappa_abs_upper=bounds.upper,
        kappa_abs_lower=bounds.lower,
        kappa_rel_upper=relative_upper(bounds, problem, solution.X),
        m=m,
        c=c,
        m_upper=upper.m,
        c_upper=upper.c,
        rho_AC_1=bounds.rho_AC_1,
        rho_AC_2=bounds.rho_AC_2,
        eta_k_sigma=bounds.eta_k_sigma,
        x_norm2_sq=bounds.x_norm2_sq,
        k=decomp.k,
        t=decomp.t,
        kappa_abs_explicit=kappa_ex,
        kappa_abs_matfree=kappa_mf,
        power_iterations=power.iterations,
        power_converged=power.converged,
        closed_form_gap=closed_gap,
        methods=methods,
    )

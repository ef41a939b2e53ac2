"""
Validation, factorization and solution of the multidimensional total least
squares problem with linear equality constraints

    min ||[E F]||_F  subject to  (A + E) X = B + F,  C X = D.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import gin
import numpy as np
import scipy.linalg as la

from . import kron_tools as kt
from .utils import (
    ValidationError,
    InfeasibleProblemError,
    GateWarning,
    tlse_warning,
)


@dataclass(frozen=True)
class TlseProblem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in "ABCD":
            M = np.asarray(getattr(self, name), dtype=float)
            if M.ndim == 1:
                # vectors: right-hand sides are columns, coefficient rows are rows
                M = M[:, None] if name in "BD" else M[None, :]
            object.__setattr__(self, name, M)

    @classmethod
    def unconstrained(cls, A: np.ndarray, B: np.ndarray):
        B = np.asarray(B, dtype=float)
        d = B.shape[1] if B.ndim == 2 else 1
        return cls(A=A, B=B, C=np.zeros((0, np.shape(A)[1])), D=np.zeros((0, d)))

    @classmethod
    def from_stacked(cls, L: np.ndarray, H: np.ndarray, p: int):
        # constraint rows on top, data rows below
        return cls(A=L[p:], B=H[p:], C=L[:p], D=H[:p])

    @property
    def q(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[1]

    @property
    def A_tilde(self) -> np.ndarray:
        return np.hstack([self.A, self.B])

    @property
    def C_tilde(self) -> np.ndarray:
        return np.hstack([self.C, self.D])

    @property
    def L(self) -> np.ndarray:
        return np.vstack([self.C, self.A])

    @property
    def H(self) -> np.ndarray:
        return np.vstack([self.D, self.B])

    @property
    def LH(self) -> np.ndarray:
        return np.hstack([self.L, self.H])

    def perturbed(self, dL: np.ndarray, dH: np.ndarray) -> "TlseProblem":
        return TlseProblem.from_stacked(self.L + dL, self.H + dH, self.p)


@gin.configurable
@dataclass
class SolverOptions:
    gap_tol: float = 1e-8
    rank_tol: float = 1e-8
    pinv_tol: Optional[float] = None
    constraint_rank_tol: float = 1e-12
    requested_t: Optional[int] = None


@dataclass
class ValidationReport:
    passed: bool
    reasons: list[str] = field(default_factory=list)
    sigma_min_C: float = float("nan")

    def raise_for_failure(self):
        if not self.passed:
            raise ValidationError(self.reasons)


def validate(problem: TlseProblem, tol: float = 1e-12) -> ValidationReport:
    """
    Check the standing assumptions: consistent shapes, an overdetermined stacked
    system (p + q > n), finite entries and a constraint matrix C of full row rank p
    (sigma_min(C) > tol * sigma_max(C)).
    """
    A, B, C, D = problem.A, problem.B, problem.C, problem.D
    reasons = []
    if any(M.ndim != 2 for M in (A, B, C, D)):
        return ValidationReport(False, ["inputs must be matrices"])
    q, n = A.shape
    p, d = C.shape[0], B.shape[1]
    if B.shape[0] != q:
        reasons.append(f"dimension mismatch: B has {B.shape[0]} rows, A has {q}")
    if C.shape[1] != n:
        reasons.append(f"dimension mismatch: C has {C.shape[1]} columns, A has {n}")
    if D.shape != (p, d):
        reasons.append(f"dimension mismatch: D is {D.shape}, expected {(p, d)}")
    if d < 1:
        reasons.append("no right-hand side columns (d = 0)")
    if p > n:
        reasons.append(f"more constraints than unknowns (p={p} > n={n})")
    if p + q <= n:
        reasons.append(f"not overdetermined (p+q={p + q} <= n={n})")
    elif q < n + d - p:
        reasons.append("too few data rows for the skinny SVD (q < n + d - p)")
    if reasons:
        return ValidationReport(False, reasons)

    if not all(np.isfinite(M).all() for M in (A, B, C, D)):
        return ValidationReport(False, ["non-finite entries"])

    sigma_min = float("nan")
    if p > 0:
        s = la.svdvals(C)
        sigma_min = float(s[-1])
        if s[-1] <= tol * s[0]:
            reasons.append("constraint matrix rank-deficient")
    return ValidationReport(not reasons, reasons, sigma_min)


@dataclass(frozen=True)
class TlseDecomposition:
    """
    QR of C~^T, skinny SVD of A~ Q~2 and skinny SVD of C~. The partitioned
    blocks (V-bar, V-hat, U~1/U~2, ...) become available once a rank index
    `k` is attached with `with_rank`.
    """

    problem: TlseProblem
    Q1: np.ndarray
    Q2: np.ndarray
    U: np.ndarray
    sigma: np.ndarray
    V_tilde: np.ndarray
    U_C: np.ndarray
    S_C: np.ndarray
    V_C: np.ndarray
    AC_pinv: np.ndarray
    k: Optional[int] = None

    def with_rank(self, k: int) -> "TlseDecomposition":
        return dataclasses.replace(self, k=k)

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def d(self) -> int:
        return self.problem.d

    @property
    def p(self) -> int:
        return self.problem.p

    @property
    def q(self) -> int:
        return self.problem.q

    @property
    def V_bar(self) -> np.ndarray:
        return self.Q2 @ self.V_tilde

    def _require_k(self) -> int:
        assert self.k is not None, "select a rank index first (`with_rank`)"
        return self.k

    @property
    def t(self) -> int:
        return self.p + self._require_k()

    @property
    def r(self) -> int:
        # n + d - t
        return self.n + self.d - self.t

    @property
    def U1(self):
        return self.U[:, : self._require_k()]

    @property
    def U2(self):
        return self.U[:, self._require_k() :]

    @property
    def sigma1(self):
        return self.sigma[: self._require_k()]

    @property
    def sigma2(self):
        return self.sigma[self._require_k() :]

    @property
    def V1_bar(self):
        return self.V_bar[:, : self._require_k()]

    @property
    def V2_bar(self):
        return self.V_bar[:, self._require_k() :]

    @property
    def V11(self):
        return self.V1_bar[: self.n]

    @property
    def V21(self):
        return self.V1_bar[self.n :]

    @property
    def V12(self):
        return self.V2_bar[: self.n]

    @property
    def V22(self):
        return self.V2_bar[self.n :]

    @property
    def V_hat1(self):
        return np.hstack([self.V_C, self.V1_bar])

    @property
    def V_hat11(self):
        return self.V_hat1[: self.n]

    @property
    def V_hat21(self):
        return self.V_hat1[self.n :]

    @property
    def S1(self):
        return np.concatenate([self.S_C, self.sigma1])


def factorize(
    problem: TlseProblem,
    tol: float = 1e-12,
    basis_rotation: Optional[np.ndarray] = None,
) -> TlseDecomposition:
    """
    Q~ from the full QR of C~^T, the skinny SVD of A~ Q~2 and the skinny SVD
    of C~. `basis_rotation` right-multiplies Q~2 by an orthogonal matrix
    (any orthonormal null basis gives the same solution).
    """
    validate(problem, tol).raise_for_failure()
    A_t, C_t = problem.A_tilde, problem.C_tilde
    p, nd = C_t.shape

    if p > 0:
        Q, _ = la.qr(C_t.T)
        Q1, Q2 = Q[:, :p], Q[:, p:]
        U_C, S_C, V_Ct = la.svd(C_t, full_matrices=False)
        V_C = V_Ct.T
    else:
        Q1, Q2 = np.zeros((nd, 0)), np.eye(nd)
        U_C, S_C, V_C = np.zeros((0, 0)), np.zeros(0), np.zeros((nd, 0))
    if basis_rotation is not None:
        assert basis_rotation.shape == (nd - p, nd - p)
        Q2 = Q2 @ basis_rotation

    U, sigma, Vt = la.svd(A_t @ Q2, full_matrices=False)
    return TlseDecomposition(
        problem=problem,
        Q1=Q1,
        Q2=Q2,
        U=U,
        sigma=sigma,
        V_tilde=Vt.T,
        U_C=U_C,
        S_C=S_C,
        V_C=V_C,
        AC_pinv=A_t @ kt.pinv(C_t),
    )


def _gap_ok(sigma: np.ndarray, k: int, gap_tol: float) -> bool:
    if k == 0:
        return True
    return sigma[k - 1] - sigma[k] > gap_tol * sigma[0]


def _rank_ok(decomp: TlseDecomposition, k: int, rank_tol: float) -> bool:
    V22 = decomp.with_rank(k).V22
    return la.svdvals(V22)[decomp.d - 1] > rank_tol


def select_rank(
    decomp: TlseDecomposition,
    requested_t: Optional[int] = None,
    gap_tol: float = 1e-8,
    rank_tol: float = 1e-8,
) -> int:
    """
    Pick the rank index k (t = p + k). A requested t is checked against both
    gates; otherwise k = n - p, falling back to the largest smaller k that
    passes both.
    """
    n, p = decomp.n, decomp.p
    k_min = 0 if p >= 1 else 1
    k_max = n - p

    if requested_t is not None:
        k = requested_t - p
        if not k_min <= k <= k_max:
            raise InfeasibleProblemError(
                "range", f"requested t={requested_t} outside [{p + k_min}, {n}]"
            )
        if not _gap_ok(decomp.sigma, k, gap_tol):
            raise InfeasibleProblemError(
                "gap", f"sigma_{k} and sigma_{k + 1} of A~Q~2 are not separated"
            )
        if not _rank_ok(decomp, k, rank_tol):
            raise InfeasibleProblemError(
                "rank", f"bottom-right block V22 loses row rank at t={requested_t}"
            )
        return k

    first_failure = None
    for k in range(k_max, k_min - 1, -1):
        if not _gap_ok(decomp.sigma, k, gap_tol):
            first_failure = first_failure or "gap"
            continue
        if not _rank_ok(decomp, k, rank_tol):
            first_failure = first_failure or "rank"
            continue
        if k < k_max:
            tlse_warning(
                f"C(k) fails at k = n - p = {k_max}; falling back to k = {k}",
                GateWarning,
            )
        return k
    raise InfeasibleProblemError(
        first_failure or "range", "no admissible rank index k in [0, n - p]"
    )


@dataclass(frozen=True)
class TlseSolution:
    X: np.ndarray
    A_hat: np.ndarray
    B_hat: np.ndarray
    A_corr: np.ndarray
    B_corr: np.ndarray
    constraint_residual: float
    consistency_residual: float
    correction_norm: float
    k: int
    t: int
    sigma: np.ndarray

    def summary(self) -> dict:
        return {
            "x_t": self.X.tolist(),
            "k": self.k,
            "t": self.t,
            "sigma": self.sigma.tolist(),
            "residuals": {
                "constraint": self.constraint_residual,
                "consistency": self.consistency_residual,
                "correction_norm": self.correction_norm,
            },
        }


def solution_from_decomposition(
    decomp: TlseDecomposition, pinv_tol: Optional[float] = None
) -> TlseSolution:
    problem = decomp.problem
    n = problem.n
    X = -decomp.V12 @ kt.pinv(decomp.V22, pinv_tol)

    U1S1 = decomp.U1 * decomp.sigma1
    A_hat = U1S1 @ decomp.V11.T
    B_hat = U1S1 @ decomp.V21.T
    # Eckart-Young correction [E F] = -U~2 S~2 V-bar_2^T
    EF = -(decomp.U2 * decomp.sigma2) @ decomp.V2_bar.T

    return TlseSolution(
        X=X,
        A_hat=A_hat,
        B_hat=B_hat,
        A_corr=problem.A + EF[:, :n],
        B_corr=problem.B + EF[:, n:],
        constraint_residual=float(np.linalg.norm(problem.C @ X - problem.D)),
        consistency_residual=float(np.linalg.norm(A_hat @ X - B_hat)),
        correction_norm=float(np.linalg.norm(EF)),
        k=decomp.k,
        t=decomp.t,
        sigma=decomp.sigma.copy(),
    )


def solve_with_decomposition(
    problem: TlseProblem,
    options: Optional[SolverOptions] = None,
    basis_rotation: Optional[np.ndarray] = None,
) -> tuple[TlseDecomposition, TlseSolution]:
    options = options or SolverOptions()
    decomp = factorize(problem, options.constraint_rank_tol, basis_rotation)
    k = select_rank(
        decomp,
        requested_t=options.requested_t,
        gap_tol=options.gap_tol,
        rank_tol=options.rank_tol,
    )
    decomp = decomp.with_rank(k)
    return decomp, solution_from_decomposition(decomp, options.pinv_tol)


def solve(problem: TlseProblem, options: Optional[SolverOptions] = None) -> TlseSolution:
    """
    Minimum Frobenius norm TLSE solution X_t = -V12 V22^+.
    """
    return solve_with_decomposition(problem, options)[1]


def tls_solve(
    L: np.ndarray, H: np.ndarray, t: int, pinv_tol: Optional[float] = None
) -> np.ndarray:
    """
    Plain multidimensional TLS minimum-norm solution X = -V12(t) V22(t)^+
    from the SVD of [L H].
    """
    n = L.shape[1]
    LH = np.hstack([L, H])
    assert LH.shape[0] >= LH.shape[1], "TLS needs at least n + d rows"
    _, _, Vt = la.svd(LH, full_matrices=False)
    V = Vt.T
    return -V[:n, t:] @ kt.pinv(V[n:, t:], pinv_tol)


def lse_solve(A: np.ndarray, B: np.ndarray, C: np.ndarray, D: np.ndarray) -> np.ndarray:
    """
    Least squares with equality constraints, min ||A X - B||_F s.t. C X = D,
    by the null-space method.
    """
    X_C = kt.pinv(C) @ D
    Q2 = kt.null_basis(C)
    if Q2.shape[1] == 0:
        return X_C
    Y, *_ = la.lstsq(A @ Q2, B - A @ X_C)
    return X_C + Q2 @ Y


def wtls_solve(
    problem: TlseProblem,
    epsilon: float,
    t: Optional[int] = None,
    options: Optional[SolverOptions] = None,
) -> np.ndarray:
    """
    TLS solution of the weighted stack [C/eps; A] X ~ [D/eps; B]. As eps -> 0
    this tends to the TLSE solution at the same t.
    """
    assert epsilon > 0
    options = options or SolverOptions()
    if t is None:
        t = solve(problem, options).t
    L = np.vstack([problem.C / epsilon, problem.A])
    H = np.vstack([problem.D / epsilon, problem.B])
    _, _, Vt = la.svd(np.hstack([L, H]), full_matrices=False)
    V22 = Vt.T[problem.n :, t:]
    if la.svdvals(V22)[problem.d - 1] <= options.rank_tol:
        raise InfeasibleProblemError(
            "rank", f"weighted V22 loses row rank at eps={epsilon:g}"
        )
    return tls_solve(L, H, t, options.pinv_tol)


@dataclass(frozen=True)
class SingleDimAuxiliaries:
    x_C: np.ndarray
    r_C: np.ndarray
    K_cal: np.ndarray
    x_n: np.ndarray
    r: np.ndarray
    rho: float
    beta: float
    sigma_next: float
    Q2: np.ndarray


def solve_single_dim(
    problem: TlseProblem, options: Optional[SolverOptions] = None
) -> SingleDimAuxiliaries:
    """
    Closed form for d = 1:  x_n = x_C - K A^T r_C  with
    K = Q2 (Q2^T A^T A Q2 - sigma~^2_{n-p+1} I)^{-1} Q2^T.
    """
    options = options or SolverOptions()
    if problem.d != 1:
        raise ValidationError(["single-dimensional path requires d = 1"])
    A, b = problem.A, problem.B[:, 0]
    C, dvec = problem.C, problem.D[:, 0]
    n, p = problem.n, problem.p

    decomp = factorize(problem, options.constraint_rank_tol)
    sigma_next = float(decomp.sigma[n - p])

    x_C = kt.pinv(C) @ dvec
    r_C = A @ x_C - b
    Q2 = kt.null_basis(C)
    if n > p:
        AQ2 = A @ Q2
        s = la.svdvals(AQ2)
        if not s[-1] - sigma_next > options.gap_tol * s[0]:
            raise InfeasibleProblemError(
                "genericity", "sigma_{n-p}(A Q2) does not exceed sigma~_{n-p+1}"
            )
        inner = AQ2.T @ AQ2 - sigma_next**2 * np.eye(n - p)
        K_cal = Q2 @ la.solve(inner, Q2.T, assume_a="sym")
    else:
        K_cal = np.zeros((n, n))

    x_n = x_C - K_cal @ (A.T @ r_C)
    return SingleDimAuxiliaries(
        x_C=x_C,
        r_C=r_C,
        K_cal=K_cal,
        x_n=x_n,
        r=A @ x_n - b,
        rho=float(np.sqrt(1.0 + x_n @ x_n)),
        beta=float(np.sqrt(1.0 + x_C @ x_C)),
        sigma_next=sigma_next,
        Q2=Q2,
    )

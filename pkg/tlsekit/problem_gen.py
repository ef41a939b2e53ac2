"""
Seeded generators for the three experiment families:

- `uniform`: every entry of [C D] and [A B] drawn iid from U(0, 1).
- `piecewise_poly`: two cubic pieces on [0, a] and (a, 1] joined with
  matching value and slope at a.
- `controlled`: p = d = 5, n = 10, q = 20 with a prescribed spectrum for
  [C D] and for the data block, so the condition of the constraint and the
  singular value gap at k = 3 can be dialed in.

All randomness goes through `numpy.random.default_rng` (PCG64).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

from . import kron_tools as kt
from .tlse_core import TlseProblem


CONTROLLED_DIMS = (5, 20, 10, 5)  # (p, q, n, d)
CONTROLLED_T = 8
# keeps 1 - 2*delta above the 1/6 tail of the controlled spectrum
CONTROLLED_DELTA_MAX = 5.0 / 12.0


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Haar-distributed orthogonal matrix from the QR of a Gaussian matrix with
    the signs of R's diagonal folded into Q.
    """
    Q, R = la.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def _unit(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def gen_uniform(p: int, q: int, n: int, d: int, seed: int) -> TlseProblem:
    assert p + q > n >= p >= 0 and d >= 1, f"invalid dims (p,q,n,d)={(p, q, n, d)}"
    rng = np.random.default_rng(seed)
    C_t = rng.uniform(size=(p, n + d))
    A_t = rng.uniform(size=(q, n + d))
    return TlseProblem(A=A_t[:, :n], B=A_t[:, n:], C=C_t[:, :n], D=C_t[:, n:])


def gen_consistent(
    p: int, q: int, n: int, d: int, seed: int, noise: float = 0.0
) -> tuple[TlseProblem, np.ndarray]:
    """
    Random Gaussian A, C with B = A X*, D = C X* (plus optional uniform noise
    on B). Returns the problem and X*.
    """
    assert p + q > n >= p >= 0 and d >= 1
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((q, n))
    C = rng.standard_normal((p, n))
    X_star = rng.standard_normal((n, d))
    B = A @ X_star + noise * rng.uniform(-1.0, 1.0, size=(q, d))
    return TlseProblem(A=A, B=B, C=C, D=C @ X_star), X_star


def piecewise_constraint(a: float) -> np.ndarray:
    # value and first-derivative continuity of the two cubics at a
    powers = a ** np.arange(4)
    slope = np.r_[0.0, 1.0, 2.0 * a, 3.0 * a**2]
    return np.vstack([np.r_[powers, -powers], np.r_[slope, -slope]])


def gen_piecewise_poly(
    M: int,
    N: int,
    a: float,
    seed: int,
    d: int = 1,
    noise: float = 0.0,
) -> tuple[TlseProblem, np.ndarray]:
    """
    M sample sites in [0, a] and N in (a, 1], sorted. A is the two-block
    cubic design (half of its entries are structural zeros), C the 2 x 8
    continuity matrix and D = 0. The generating coefficients X* (8 x d) satisfy
    C X* = 0; B = A X* + noise * U(-1, 1).
    """
    if not 0.0 < a < 1.0:
        raise ValueError(f"piecewise split point must lie in (0, 1), got a={a}")
    assert M >= 4 and N >= 4 and d >= 1
    rng = np.random.default_rng(seed)
    left = np.sort(rng.uniform(0.0, a, size=M))
    right = np.sort(1.0 - rng.uniform(0.0, 1.0 - a, size=N))

    A = np.zeros((M + N, 8))
    A[:M, :4] = left[:, None] ** np.arange(4)
    A[M:, 4:] = right[:, None] ** np.arange(4)
    C = piecewise_constraint(a)

    X_star = kt.null_basis(C) @ rng.standard_normal((6, d))
    B = A @ X_star + noise * rng.uniform(-1.0, 1.0, size=(M + N, d))
    return TlseProblem(A=A, B=B, C=C, D=np.zeros((2, d))), X_star


def controlled_spectrum(delta: float) -> np.ndarray:
    return np.r_[
        10.0,
        8.0,
        np.ones(5),
        1.0 - delta / 2.0,
        1.0 - delta,
        1.0 - 2.0 * delta,
        1.0 / np.arange(6, 11),
    ]


def gen_controlled(kappa_C: float, delta: float, seed: int) -> TlseProblem:
    """
    C~ = U0 diag(1, .5, .1, .1, 1/kappa_C) Q~1^T and A~ = A^ Q~^T with
    A^ = (I - 2yy^T) [S^; 0] (I - 2zz^T).
    """
    if kappa_C < 1:
        raise ValueError(f"kappa_C must be >= 1, got {kappa_C}")
    if not 0.0 < delta < CONTROLLED_DELTA_MAX:
        raise ValueError(f"delta must lie in (0, 5/12), got {delta}")
    p, q, n, d = CONTROLLED_DIMS
    rng = np.random.default_rng(seed)

    Q_t = random_orthogonal(n + d, rng)
    U0 = random_orthogonal(p, rng)
    y, z = _unit(rng, q), _unit(rng, n + d)

    C_t = (U0 * np.array([1.0, 0.5, 0.1, 0.1, 1.0 / kappa_C])) @ Q_t[:, :p].T
    sigma_hat = np.vstack([np.diag(controlled_spectrum(delta)), np.zeros((q - n - d, n + d))])
    A_hat = (np.eye(q) - 2.0 * np.outer(y, y)) @ sigma_hat @ (
        np.eye(n + d) - 2.0 * np.outer(z, z)
    )
    A_t = A_hat @ Q_t.T
    return TlseProblem(A=A_t[:, :n], B=A_t[:, n:], C=C_t[:, :n], D=C_t[:, n:])


@dataclass
class GeneratorSpec:
    family: str
    seed: int = 0
    dims: Optional[tuple[int, int, int, int]] = None
    M: int = 200
    N: int = 200
    a: float = 0.5
    d: int = 1
    noise: float = 0.0
    kappa_C: float = 1e3
    delta: float = 0.01

    def __post_init__(self):
        if self.family not in ("uniform", "piecewise_poly", "controlled"):
            raise ValueError(f"Unrecognized generator family `{self.family}`")
        if self.family == "uniform":
            if self.dims is None:
                self.dims = (10, 40, 40, 5)
            p, q, n, d = self.dims
            if not (p + q > n >= p >= 0 and d >= 1):
                raise ValueError(f"invalid uniform dims (p,q,n,d)={tuple(self.dims)}")
        elif self.family == "piecewise_poly":
            if not 0.0 < self.a < 1.0:
                raise ValueError(f"piecewise split point must lie in (0, 1), got a={self.a}")
            if self.M < 4 or self.N < 4 or self.d < 1:
                raise ValueError("piecewise_poly needs M, N >= 4 and d >= 1")
        else:
            if self.kappa_C < 1:
                raise ValueError(f"kappa_C must be >= 1, got {self.kappa_C}")
            if not 0.0 < self.delta < CONTROLLED_DELTA_MAX:
                raise ValueError(f"delta must lie in (0, 5/12), got {self.delta}")

    @property
    def default_t(self) -> Optional[int]:
        return CONTROLLED_T if self.family == "controlled" else None

    def build(self, seed: Optional[int] = None) -> TlseProblem:
        seed = self.seed if seed is None else seed
        if self.family == "uniform":
            return gen_uniform(*self.dims, seed=seed)
        elif self.family == "piecewise_poly":
            return gen_piecewise_poly(
                self.M, self.N, self.a, seed=seed, d=self.d, noise=self.noise
            )[0]
        return gen_controlled(self.kappa_C, self.delta, seed=seed)

"""
Kronecker products, column-stacking vec/unvec and vec-permutation matrices.

Arrays are ordinary (row-major) numpy arrays everywhere in `tlsekit`; `vec`
always stacks columns regardless of memory layout.
"""

import numpy as np
import scipy.linalg as la
from einops import rearrange

from .utils import SizeCapError


DEFAULT_EXPLICIT_CAP = 10_000


def vec(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M)
    assert M.ndim == 2, "vec expects a matrix"
    return rearrange(M, "r c -> (c r)")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v)
    assert v.shape == (rows * cols,), f"cannot unvec length {v.shape} to {rows}x{cols}"
    return rearrange(v, "(c r) -> r c", r=rows, c=cols)


def kron(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.kron(np.atleast_2d(A), np.atleast_2d(B))


def vec_permutation(m: int, n: int) -> np.ndarray:
    """
    Pi_(m,n), the mn x mn permutation with Pi @ vec(A) == vec(A.T) for every
    m x n matrix A.
    """
    assert m >= 0 and n >= 0
    # entry A[i, j] sits at i + j*m in vec(A) and at j + i*n in vec(A.T)
    perm = rearrange(np.arange(m * n), "(n m) -> (m n)", m=m, n=n)
    return np.eye(m * n)[perm]


def default_tol(M: np.ndarray) -> float:
    return max(M.shape) * np.finfo(float).eps if M.size else 0.0


def pinv(M: np.ndarray, tol: float | None = None) -> np.ndarray:
    """
    Moore-Penrose pseudoinverse through the SVD. Singular values at or below
    `tol * sigma_max` are treated as zero (default tol: max(rows, cols) * eps).
    """
    M = np.asarray(M, dtype=float)
    assert M.ndim == 2
    if tol is None:
        tol = default_tol(M)
    assert tol >= 0
    if M.size == 0:
        return np.zeros(M.shape[::-1])
    U, s, Vt = la.svd(M, full_matrices=False)
    cutoff = tol * s[0]
    s_inv = np.zeros_like(s)
    keep = s > cutoff
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def null_basis(M: np.ndarray) -> np.ndarray:
    """
    Orthonormal basis of the null space of a full-row-rank p x n matrix,
    taken from the trailing columns of the full QR factor of M^T.
    """
    p, n = M.shape
    if p == 0:
        return np.eye(n)
    Q, _ = la.qr(M.T)
    return Q[:, p:]


def penrose_residuals(M: np.ndarray, X: np.ndarray) -> tuple[float, float, float, float]:
    """
    Relative residuals of the four Penrose identities for a candidate X = M^+.
    """
    scale = max(np.linalg.norm(M), 1.0) * max(np.linalg.norm(X), 1.0)
    MX, XM = M @ X, X @ M
    return (
        np.linalg.norm(MX @ M - M) / scale,
        np.linalg.norm(XM @ X - X) / scale,
        np.linalg.norm(MX - MX.T) / scale,
        np.linalg.norm(XM - XM.T) / scale,
    )


def check_size_cap(rows: int, cols: int, cap: int, what: str = "operand"):
    if rows * cols > cap:
        raise SizeCapError(
            f"explicit {what} would have {rows}x{cols} entries (cap {cap}); "
            "use the matrix-free path instead"
        )

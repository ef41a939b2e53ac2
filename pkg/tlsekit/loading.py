"""
Dense matrix files.

CSV grammar: an optional first line `# rows cols`, then one comma-separated
row per line. Ragged rows are rejected. `.mtx` files use the MatrixMarket
array format through `scipy.io`.
"""

import os
from typing import Optional

import numpy as np
import scipy.io
import scipy.sparse

from .tlse_core import TlseProblem


class MatrixFormatError(ValueError):
    pass


def parse_csv_matrix(text: str, source: str = "<string>") -> np.ndarray:
    lines = [l.strip() for l in text.splitlines()]
    lines = [l for l in lines if l]
    header = None
    if lines and lines[0].startswith("#"):
        fields = lines[0][1:].split()
        if len(fields) != 2:
            raise MatrixFormatError(f"{source}: malformed header `{lines[0]}`")
        header = tuple(int(f) for f in fields)
        lines = lines[1:]

    rows = []
    for i, line in enumerate(lines):
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError as e:
            raise MatrixFormatError(f"{source}: line {i + 1}: {e}") from None
        if len(rows[-1]) != len(rows[0]):
            raise MatrixFormatError(
                f"{source}: ragged row {i + 1} ({len(rows[-1])} vs {len(rows[0])} entries)"
            )

    if header is not None:
        M = np.array(rows) if rows else np.zeros((0, header[1]))
        if M.shape != header:
            raise MatrixFormatError(f"{source}: header says {header}, found {M.shape}")
        return M
    if not rows:
        raise MatrixFormatError(f"{source}: empty matrix file without a `# rows cols` header")
    return np.array(rows)


def format_csv_matrix(M: np.ndarray) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines = [f"# {M.shape[0]} {M.shape[1]}"]
    lines += [",".join(repr(float(x)) for x in row) for row in M]
    return "\n".join(lines) + "\n"


def load_matrix(path: str) -> np.ndarray:
    _, ext = os.path.splitext(path)
    if ext == ".csv":
        with open(path, "r") as f:
            return parse_csv_matrix(f.read(), source=path)
    elif ext == ".mtx":
        M = scipy.io.mmread(path)
        if scipy.sparse.issparse(M):
            M = M.toarray()
        return np.asarray(M, dtype=float)
    else:
        raise ValueError(f"Unrecognized matrix file extension `{ext}` for path `{path}`.")


def save_matrix(path: str, M: np.ndarray):
    _, ext = os.path.splitext(path)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if ext == ".csv":
        with open(path, "w") as f:
            f.write(format_csv_matrix(M))
    elif ext == ".mtx":
        if M.size == 0:
            raise ValueError(f"cannot write an empty matrix to MatrixMarket file `{path}`")
        scipy.io.mmwrite(path, M)
    else:
        raise ValueError(f"Unrecognized matrix file extension `{ext}` for path `{path}`.")


def load_problem(
    A: str, B: str, C: Optional[str] = None, D: Optional[str] = None
) -> TlseProblem:
    """
    Read the four blocks; omitting both C and D gives an unconstrained problem.
    """
    if (C is None) != (D is None):
        raise ValueError("C and D must be given together")
    A_m, B_m = load_matrix(A), load_matrix(B)
    if C is None:
        return TlseProblem.unconstrained(A_m, B_m)
    return TlseProblem(A=A_m, B=B_m, C=load_matrix(C), D=load_matrix(D))


def save_problem(problem: TlseProblem, directory: str, ext: str = ".csv") -> dict[str, str]:
    os.makedirs(directory, exist_ok=True)
    paths = {}
    for name in "ABCD":
        M = getattr(problem, name)
        if name in "CD" and problem.p == 0:
            continue
        path = os.path.join(directory, f"{name}{ext}")
        save_matrix(path, M)
        paths[name] = path
    return paths

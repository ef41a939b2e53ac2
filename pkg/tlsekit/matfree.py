from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.sparse.linalg import LinearOperator

from . import kron_tools as kt
from .utils import ConvergenceWarning, tlse_warning

if TYPE_CHECKING:
    from .conditioning import ConditionFactors


class BreveOperator(LinearOperator):
    """
    H-breve = (H1 + H2) G Z-bar applied without Kronecker products.

    The input vector f = [vec(F1); vec(F2)] holds F1 ((p+q) x t) and
    F2 ((n+d-t) x t); the output is vec(dX), length nd. Each step of the
    forward map only involves the small blocks stored on `ConditionFactors`
    and a diagonal solve against the r x t denominator `Den`.
    """

    def __init__(self, factors: ConditionFactors):
        self.factors = factors
        f = factors
        self.pq, self.t, self.r = f.p + f.q, f.t, f.r
        self.n, self.d = f.n, f.d
        self.split = self.pq * self.t
        super().__init__(
            dtype=np.float64,
            shape=(self.n * self.d, self.split + self.r * self.t),
        )

    def _matvec(self, x):
        f = self.factors
        x = np.asarray(x).reshape(-1)
        F1 = kt.unvec(x[: self.split], self.pq, self.t)
        F2 = kt.unvec(x[self.split :], self.r, self.t)
        T = (f.QU2S2.T @ F1 @ f.W0 + F2 @ f.RtS1) / f.Den
        G = f.A1 @ T @ f.B1 + f.A2_identity @ T.T @ f.B2
        return kt.vec(G)

    def _rmatvec(self, y):
        f = self.factors
        G = kt.unvec(np.asarray(y).reshape(-1), self.n, self.d)
        T_bar = f.A1.T @ G @ f.B1.T + f.B2 @ G.T @ f.A2_identity
        P = T_bar / f.Den
        F1 = f.QU2S2 @ P @ f.W0
        F2 = P @ f.RtS1.T
        return np.concatenate([kt.vec(F1), kt.vec(F2)])

    def apply(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != (self.shape[1],):
            raise ValueError(f"expected a vector of length {self.shape[1]}, got {f.shape}")
        return self._matvec(f)

    def apply_adjoint(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if g.shape != (self.shape[0],):
            raise ValueError(f"expected a vector of length {self.shape[0]}, got {g.shape}")
        return self._rmatvec(g)


@dataclass
class PowerResult:
    estimate: float
    iterations: int
    converged: bool
    restarts: int
    history: list[float]


@dataclass
class _PowerRun:
    estimate: float
    iterations: int
    converged: bool
    annihilated: bool
    history: list[float]


def _iterate(op: LinearOperator, v: np.ndarray, tol: float, budget: int) -> _PowerRun:
    history = []
    previous = None
    for it in range(1, budget + 1):
        w = op.matvec(v)
        estimate = float(np.linalg.norm(w))
        history.append(estimate)
        if previous is not None and abs(estimate - previous) <= tol * estimate:
            return _PowerRun(estimate, it, True, False, history)
        previous = estimate

        v_next = op.rmatvec(w)
        nrm = np.linalg.norm(v_next)
        if nrm == 0.0:
            return _PowerRun(estimate, it, estimate == 0.0, True, history)
        v = v_next / nrm
    return _PowerRun(history[-1] if history else 0.0, budget, False, False, history)


def power_kappa_abs(
    op: LinearOperator,
    tol: float = 1e-8,
    max_iter: int = 5000,
    seed: int = 0,
) -> PowerResult:
    """
    Estimate ||op||_2 by power iteration on op^T op from a seeded random
    start. A run stops when the estimate ||op v|| changes by less than `tol`
    (relative) over one step.

    A stalled estimate is only accepted after a second run from a fresh
    start: a run whose start is (nearly) orthogonal to the dominant right
    singular vector plateaus on a smaller singular value, and the larger of
    the two runs is kept. A start that collapses to zero also gets this one
    restart. `history` is the estimate sequence of the kept run, which is
    nondecreasing up to roundoff. Running out of iterations is flagged, not
    raised.
    """
    assert tol > 0
    rng = np.random.default_rng(seed)
    ncols = op.shape[1]

    def fresh_start() -> np.ndarray:
        v = rng.standard_normal(ncols)
        return v / np.linalg.norm(v)

    run = _iterate(op, fresh_start(), tol, max_iter)
    iterations, restarts = run.iterations, 0
    if run.converged or run.annihilated:
        restarts = 1
        if run.annihilated:
            tlse_warning("power iteration stagnated; restarting", ConvergenceWarning)
        check = _iterate(op, fresh_start(), tol, max(max_iter - iterations, 1))
        iterations += check.iterations
        if check.estimate > run.estimate * (1.0 + tol):
            if not run.annihilated:
                tlse_warning(
                    f"power iteration plateaued at {run.estimate:.3e}; "
                    f"keeping the restarted estimate {check.estimate:.3e}",
                    ConvergenceWarning,
                )
            run = check

    if not run.converged:
        tlse_warning(
            f"power iteration did not converge in {max_iter} iterations "
            f"(last estimate {run.estimate:.3e})",
            ConvergenceWarning,
        )
    return PowerResult(run.estimate, iterations, run.converged, restarts, run.history)

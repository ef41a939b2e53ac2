import os
import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Iterable

import gin
import numpy as np
import wandb
from tqdm import tqdm

from . import kron_tools as kt
from . import utils
from .tlse_core import (
    TlseProblem,
    SolverOptions,
    solve,
    solve_with_decomposition,
    wtls_solve,
)
from .conditioning import (
    ConditionFactors,
    ConditionOptions,
    build_factors,
    condition_report,
    directional_derivative,
)
from .problem_gen import GeneratorSpec
from .utils import TlseError, TrialWarning, tlse_warning, trial_rng


@dataclass(frozen=True)
class PerturbationPair:
    dL: np.ndarray
    dH: np.ndarray

    @classmethod
    def zeros(cls, problem: TlseProblem):
        return cls(np.zeros_like(problem.L), np.zeros_like(problem.H))

    @property
    def stacked(self) -> np.ndarray:
        return np.hstack([self.dL, self.dH])

    def scaled(self, alpha: float) -> "PerturbationPair":
        return PerturbationPair(alpha * self.dL, alpha * self.dH)

    def apply(self, problem: TlseProblem) -> TlseProblem:
        assert self.dL.shape == problem.L.shape and self.dH.shape == problem.H.shape
        return problem.perturbed(self.dL, self.dH)


def _options_at(t: int, options: Optional[SolverOptions]) -> SolverOptions:
    options = options or SolverOptions()
    return SolverOptions(
        gap_tol=options.gap_tol,
        rank_tol=options.rank_tol,
        pinv_tol=options.pinv_tol,
        constraint_rank_tol=options.constraint_rank_tol,
        requested_t=t,
    )


def first_order_estimate(
    factors_or_K: ConditionFactors | np.ndarray, delta: PerturbationPair
) -> np.ndarray:
    """
    unvec(K vec([dL dH])). With factors this runs matrix-free; an explicit K
    is used as given.
    """
    if isinstance(factors_or_K, np.ndarray):
        K = factors_or_K
        n = delta.dL.shape[1]
        d = K.shape[0] // n
        if K.shape[1] != delta.stacked.size:
            raise ValueError(f"K has {K.shape[1]} columns, perturbation has {delta.stacked.size}")
        return kt.unvec(K @ kt.vec(delta.stacked), n, d)
    return directional_derivative(factors_or_K, delta.dL, delta.dH)


def componentwise_perturbation(
    L: np.ndarray, H: np.ndarray, eps: float, seed: int
) -> PerturbationPair:
    """
    dL = eps * E o L, dH = eps * E' o H with E, E' iid U(0, 1).
    """
    assert eps >= 0
    rng = np.random.default_rng(seed)
    E = rng.uniform(size=L.shape)
    E_prime = rng.uniform(size=H.shape)
    return PerturbationPair(eps * E * L, eps * E_prime * H)


def uniform_perturbation(problem: TlseProblem, eps: float, rng: np.random.Generator):
    return PerturbationPair(
        eps * rng.uniform(size=problem.L.shape), eps * rng.uniform(size=problem.H.shape)
    )


@dataclass
class PerturbationRow:
    eps: float
    eta: float
    valid: bool = True
    reason: str = ""


def perturbation_error_study(
    problem: TlseProblem,
    t: int,
    eps_list: Iterable[float],
    seed: int,
    options: Optional[SolverOptions] = None,
    verbose: bool = False,
) -> list[PerturbationRow]:
    """
    Error of the first-order estimate, eta = ||vec(dX_t) - K vec(D)||_inf, for
    D = eps * U(0, 1) entrywise at each eps. Perturbed problems are re-solved
    at the same t; a gate failure flags the row instead of re-selecting t.
    """
    options = _options_at(t, options)
    decomp, base = solve_with_decomposition(problem, options)
    factors = build_factors(decomp, base)

    eps_list = list(eps_list)
    iter_ = enumerate(eps_list)
    if verbose:
        iter_ = tqdm(iter_, desc=f"Perturbation t={t}", total=len(eps_list), leave=False, colour="yellow")
    rows = []
    for i, eps in iter_:
        delta = uniform_perturbation(problem, eps, trial_rng(seed, i))
        try:
            X_eps = solve(delta.apply(problem), options).X
        except TlseError as e:
            tlse_warning(f"perturbed trial at eps={eps:g} invalid: {e}", TrialWarning)
            rows.append(PerturbationRow(eps, math.nan, False, str(e)))
            continue
        dX = X_eps - base.X
        est = first_order_estimate(factors, delta)
        rows.append(PerturbationRow(eps, float(np.abs(dX - est).max())))
    return rows


@dataclass
class SupResult:
    estimate: float
    samples: int
    skipped: int


def sample_derivative_sup(
    problem: TlseProblem,
    n_samples: int,
    h: Optional[float] = None,
    seed: int = 0,
    options: Optional[SolverOptions] = None,
    directions: Optional[Iterable[np.ndarray]] = None,
) -> SupResult:
    """
    max over random unit-Frobenius directions of ||X(data + h D) - X(data)||_F / h
    (forward differences at the base t). An empirical lower bound on kappa_abs.
    """
    assert n_samples >= 1
    base = solve(problem, options)
    options = _options_at(base.t, options)
    if h is None:
        h = 1e-7 * np.linalg.norm(problem.LH)
    shape = problem.LH.shape
    n = problem.n

    if directions is None:
        rng = np.random.default_rng(seed)
        directions = (rng.standard_normal(shape) for _ in range(n_samples))

    best, used, skipped = 0.0, 0, 0
    for direction in directions:
        direction = np.asarray(direction).reshape(shape)
        direction = direction / np.linalg.norm(direction)
        try:
            X_h = solve(problem.perturbed(h * direction[:, :n], h * direction[:, n:]), options).X
        except TlseError:
            skipped += 1
            continue
        used += 1
        best = max(best, float(np.linalg.norm(X_h - base.X) / h))
    return SupResult(best, used, skipped)


@dataclass
class WtlsStudy:
    eps: np.ndarray
    error: np.ndarray
    slope: float
    flags: list[str] = field(default_factory=list)


def wtls_convergence_study(
    problem: TlseProblem,
    eps_list: Iterable[float],
    options: Optional[SolverOptions] = None,
    window: tuple[float, float] = (1e-4, 1e-2),
) -> WtlsStudy:
    """
    ||X_t(eps) - X_t||_F for each weight eps and the fitted log-log slope over
    `window` (quadratic convergence gives a slope near 2).
    """
    base = solve(problem, options)
    eps_arr = np.array(list(eps_list), dtype=float)
    errors, flags = [], []
    for eps in eps_arr:
        try:
            X_eps = wtls_solve(problem, eps, t=base.t, options=options)
        except TlseError as e:
            flags.append(f"eps={eps:g}: {e}")
            errors.append(math.nan)
            continue
        errors.append(float(np.linalg.norm(X_eps - base.X)))
    errors = np.array(errors)

    lo, hi = window
    use = (eps_arr >= lo) & (eps_arr <= hi) & np.isfinite(errors)
    # below ~1e-15 relative the error is roundoff, not the weighting
    floor = 1e3 * np.finfo(float).eps * max(np.linalg.norm(base.X), 1.0)
    for eps in eps_arr[use & (errors <= floor)]:
        flags.append(f"eps={eps:g}: error at the roundoff floor, left out of the slope fit")
    use &= errors > floor
    slope = math.nan
    if use.sum() >= 2:
        slope = float(np.polyfit(np.log(eps_arr[use]), np.log(errors[use]), 1)[0])
    return WtlsStudy(eps=eps_arr, error=errors, slope=slope, flags=flags)


@dataclass
class ForwardErrorReport:
    eps_n: float
    eps_c: float
    actual_rel_2norm: float
    actual_rel_maxnorm: float
    actual_componentwise: float
    bound_n: float
    bound_n_upper: float
    bound_m: float
    bound_m_upper: float
    bound_c: float
    bound_c_upper: float
    x_norm2_sq: float
    rho: float
    t: int

    def to_dict(self) -> dict:
        return asdict(self)


def forward_error_report(
    problem: TlseProblem,
    delta: PerturbationPair,
    solver_options: Optional[SolverOptions] = None,
    options: Optional[ConditionOptions] = None,
) -> ForwardErrorReport:
    """
    Compare the actual change of X_t under `delta` with the first-order
    normwise, mixed and componentwise bounds and their compact upper bounds.
    """
    report = condition_report(problem, solver_options, options)
    base = solve(problem, _options_at(report.t, solver_options))
    perturbed = solve(delta.apply(problem), _options_at(report.t, solver_options))

    LH = problem.LH
    dLH = delta.stacked
    eps_n = float(np.linalg.norm(dLH) / np.linalg.norm(LH))
    eps_c = float(utils.divide_with_convention(np.abs(dLH), np.abs(LH)).max())

    X, dX = base.X, perturbed.X - base.X
    x_abs = np.abs(X)

    def _bound(eps, value):
        return math.nan if value is None else eps * value

    return ForwardErrorReport(
        eps_n=eps_n,
        eps_c=eps_c,
        actual_rel_2norm=float(np.linalg.norm(dX) / np.linalg.norm(X)),
        actual_rel_maxnorm=float(np.abs(dX).max() / x_abs.max()),
        actual_componentwise=float(utils.divide_with_convention(np.abs(dX), x_abs).max()),
        bound_n=eps_n * report.kappa_rel,
        bound_n_upper=eps_n * report.kappa_rel_upper,
        bound_m=_bound(eps_c, report.m),
        bound_m_upper=eps_c * report.m_upper,
        bound_c=_bound(eps_c, report.c),
        bound_c_upper=eps_c * report.c_upper,
        x_norm2_sq=report.x_norm2_sq,
        rho=report.rho_AC_2 * report.eta_k_sigma,
        t=report.t,
    )


def forward_error_table(
    spec: GeneratorSpec,
    trials: int,
    eps: float = 1e-12,
    seed: int = 0,
    t: Optional[int] = None,
    solver_options: Optional[SolverOptions] = None,
    options: Optional[ConditionOptions] = None,
    verbose: bool = False,
) -> list[dict]:
    """
    One forward-error row per draw of the generator family, each perturbed
    componentwise with relative size `eps`.
    """
    t = t if t is not None else spec.default_t
    iter_ = range(trials)
    if verbose:
        iter_ = tqdm(iter_, desc=f"Forward error ({spec.family})", leave=False, colour="green")
    rows = []
    for trial in iter_:
        problem_seed, delta_seed = trial_rng(seed, trial).integers(2**31, size=2)
        problem = spec.build(seed=int(problem_seed))
        delta = componentwise_perturbation(problem.L, problem.H, eps, seed=int(delta_seed))
        opts = _options_at(t, solver_options) if t is not None else solver_options
        try:
            row = forward_error_report(problem, delta, opts, options).to_dict()
            row.update(valid=True, reason="")
        except TlseError as e:
            tlse_warning(f"trial {trial} invalid: {e}", TrialWarning)
            row = {"valid": False, "reason": str(e)}
        row["trial"] = trial
        rows.append(row)
    return rows


@gin.configurable
@dataclass
class Study:
    """
    Experiment driver for the perturbation, weighting and forward-error
    studies. Rows can be mirrored to Weights & Biases.
    """

    kind: str
    run_name: str = "tlsekit"
    eps: tuple[float, ...] = (1e-2, 1e-4, 1e-6)
    t: tuple[int, ...] = ()
    trials: int = 1
    seed: int = 0
    verbose: bool = True

    # Logging
    log_to_wandb: bool = False
    wandb_project: str = os.environ.get("TLSEKIT_WANDB_PROJECT")
    wandb_entity: str = os.environ.get("TLSEKIT_WANDB_ENTITY")
    wandb_group_name: str = None

    def __post_init__(self):
        if self.kind not in ("perturbation", "wtls", "forward-error"):
            raise ValueError(f"Unrecognized study kind `{self.kind}`")

    def init_logger(self):
        if self.log_to_wandb:
            wandb.init(
                project=self.wandb_project,
                entity=self.wandb_entity,
                name=self.run_name,
                group=self.wandb_group_name,
                config=utils.gin_as_wandb_config(),
            )

    def log(self, row: dict):
        if self.log_to_wandb:
            wandb.log({k: v for k, v in row.items() if isinstance(v, (int, float, bool))})

    def run(
        self,
        spec: GeneratorSpec,
        problem: Optional[TlseProblem] = None,
        solver_options: Optional[SolverOptions] = None,
        options: Optional[ConditionOptions] = None,
    ) -> list[dict]:
        """
        Returns one dict per table row. `problem` overrides the generator for
        the single-instance studies (perturbation, wtls).
        """
        self.init_logger()
        rows = []
        if self.kind == "perturbation":
            problem = problem if problem is not None else spec.build(self.seed)
            ts = self.t or (solve(problem, solver_options).t,)
            for t in ts:
                for row in perturbation_error_study(
                    problem, t, self.eps, self.seed, solver_options, self.verbose
                ):
                    rows.append({"t": t, **asdict(row)})
        elif self.kind == "wtls":
            problem = problem if problem is not None else spec.build(self.seed)
            study = wtls_convergence_study(problem, self.eps, solver_options)
            for eps, err in zip(study.eps, study.error):
                rows.append({"eps": float(eps), "error": float(err), "slope": study.slope})
        else:
            t = self.t[0] if self.t else None
            rows = forward_error_table(
                spec,
                self.trials,
                eps=self.eps[0],
                seed=self.seed,
                t=t,
                solver_options=solver_options,
                options=options,
                verbose=self.verbose,
            )
        for row in rows:
            self.log(row)
        if self.log_to_wandb:
            wandb.finish()
        return rows

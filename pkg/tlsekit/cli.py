"""
Command line front end.

    tlsekit solve --gen uniform --dims 10,40,40,5 --seed 7 --format json
    tlsekit cond --A a.csv --B b.csv --C c.csv --D d.csv
    tlsekit study perturbation --gen uniform --dims 10,40,40,5 --t 10,20,30,40 --eps 1e-2,1e-4,1e-6
    tlsekit gen --gen controlled --kappaC 1e6 --delta 0.001 --out-dir problem/

Exit codes: 0 success, 1 usage error, 2 invalid or infeasible instance,
3 numerical failure.
"""

import sys
import json
import math
from argparse import ArgumentParser
from dataclasses import dataclass, field
from typing import Optional, TextIO

from termcolor import colored

from . import cli_utils
from . import loading
from .tlse_core import TlseProblem, SolverOptions, solve
from .conditioning import ConditionOptions, condition_report
from .perturb_lab import Study
from .problem_gen import GeneratorSpec
from .utils import (
    InfeasibleProblemError,
    NumericalFailure,
    ValidationError,
    format_table,
    fmt2,
    resolve_seed,
)


EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class CliParser(ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass
class RunConfig:
    subcommand: str
    paths: dict[str, str] = field(default_factory=dict)
    generator: Optional[GeneratorSpec] = None
    t: tuple[int, ...] = ()
    seed: int = 0
    seed_injected: bool = False
    format: str = "table"
    output: Optional[str] = None
    configs: Optional[list[str]] = None
    bindings: dict = field(default_factory=dict)
    # study / gen
    study: Optional[str] = None
    eps: tuple[float, ...] = ()
    trials: int = 1
    log_to_wandb: bool = False
    out_dir: Optional[str] = None
    ext: str = ".csv"

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        paths = {k: getattr(args, k) for k in "ABCD" if getattr(args, k) is not None}
        if paths and args.gen is not None:
            raise UsageError("give either matrix files or --gen, not both")
        if paths and not {"A", "B"} <= paths.keys():
            raise UsageError("--A and --B are required when reading files")
        if not paths and args.gen is None and args.subcommand in ("solve", "cond"):
            raise UsageError("no input: give --A/--B[/--C/--D] or --gen")
        for name in ("gap_tol", "rank_tol", "pinv_tol", "power_tol"):
            value = getattr(args, name)
            if value is not None and not value > 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")

        seed, injected = resolve_seed(args.seed)
        generator = None
        if not paths:
            try:
                dims = cli_utils.parse_list(args.dims, int) or None
                if dims is not None and len(dims) != 4:
                    raise UsageError("--dims expects p,q,n,d")
                generator = GeneratorSpec(
                    family=args.gen or "uniform",
                    seed=seed,
                    dims=dims,
                    M=args.M,
                    N=args.N,
                    a=args.a,
                    d=args.d,
                    noise=args.noise,
                    kappa_C=args.kappaC,
                    delta=args.delta,
                )
            except ValueError as e:
                raise UsageError(str(e)) from None

        try:
            t = cli_utils.parse_list(args.t, int)
            eps = cli_utils.parse_list(getattr(args, "eps", None), float)
        except ValueError as e:
            raise UsageError(str(e)) from None
        if len(t) > 1 and (args.subcommand != "study" or args.kind == "wtls"):
            raise UsageError(f"`{args.subcommand}` takes a single --t, got {len(t)} values")
        return cls(
            subcommand=args.subcommand,
            paths=paths,
            generator=generator,
            t=t,
            seed=seed,
            seed_injected=injected,
            format=args.format,
            output=args.output,
            configs=args.configs,
            bindings=cli_utils.tolerance_bindings(args),
            study=getattr(args, "kind", None),
            eps=eps,
            trials=getattr(args, "trials", 1),
            log_to_wandb=getattr(args, "wandb", False),
            out_dir=getattr(args, "out_dir", None),
            ext=getattr(args, "ext", ".csv"),
        )

    def load_problem(self) -> TlseProblem:
        if self.generator is not None:
            return self.generator.build()
        try:
            return loading.load_problem(**self.paths)
        except (loading.MatrixFormatError, ValueError, OSError) as e:
            raise UsageError(f"cannot read matrices: {e}") from None

    def solver_options(self, t: Optional[int] = None) -> SolverOptions:
        options = SolverOptions()
        if t is not None:
            options.requested_t = t
        elif self.t:
            options.requested_t = self.t[0]
        elif self.generator is not None and self.generator.default_t is not None:
            options.requested_t = self.generator.default_t
        return options

    def condition_options(self) -> ConditionOptions:
        options = ConditionOptions()
        options.seed = self.seed
        return options


def emit_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _rows_to_csv(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    lines += [",".join("" if v is None else str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _write(config: RunConfig, text: str, out: TextIO):
    if config.output is not None:
        with open(config.output, "w") as f:
            f.write(text)
    else:
        out.write(text)


def cmd_solve(config: RunConfig, out: TextIO = sys.stdout) -> int:
    problem = config.load_problem()
    solution = solve(problem, config.solver_options())
    payload = solution.summary()
    payload["seed"] = config.seed if config.generator is not None else None

    if config.format == "json":
        text = emit_json(payload)
    elif config.format == "csv":
        text = loading.format_csv_matrix(solution.X)
    else:
        res = payload["residuals"]
        text = (
            colored(f"TLSE solution  k={solution.k}  t={solution.t}", "green")
            + "\n"
            + format_table(
                ["constraint", "consistency", "correction"],
                [[res["constraint"], res["consistency"], res["correction_norm"]]],
            )
            + "\nsigma~: "
            + " ".join(fmt2(float(s)) for s in solution.sigma)
            + "\nX_t:\n"
            + format_table(
                [f"col{j}" for j in range(problem.d)],
                [[float(v) for v in row] for row in solution.X],
            )
            + "\n"
        )
    _write(config, text, out)
    return EXIT_OK


def cmd_cond(config: RunConfig, out: TextIO = sys.stdout) -> int:
    problem = config.load_problem()
    report = condition_report(problem, config.solver_options(), config.condition_options())
    if report.kappa_abs_explicit is None and not report.power_converged:
        raise NumericalFailure(
            f"power iteration did not converge after {report.power_iterations} iterations"
        )

    payload = report.to_dict()
    if config.format == "json":
        text = emit_json(payload)
    else:
        explicit = report.kappa_abs_explicit
        rows = [
            ["kappa_abs (explicit)", "skipped (size cap)" if explicit is None else explicit, report.methods["kappa_abs"]],
            ["kappa_abs (matrix-free)", report.kappa_abs_matfree, f"power, {report.power_iterations} it"],
            ["relative gap", "-" if report.dual_path_gap is None else report.dual_path_gap, ""],
            ["kappa_rel", report.kappa_rel, report.methods["kappa_abs"]],
            ["kappa_abs upper", report.kappa_abs_upper, "compact"],
            ["kappa_abs lower", "-" if report.kappa_abs_lower is None else report.kappa_abs_lower, "compact"],
            ["kappa_rel upper", report.kappa_rel_upper, "compact"],
            ["m", "skipped (size cap)" if report.m is None else report.m, report.methods["m"]],
            ["c", "skipped (size cap)" if report.c is None else report.c, report.methods["c"]],
            ["m upper", report.m_upper, "compact"],
            ["c upper", report.c_upper, "compact"],
            ["rho_AC_1", report.rho_AC_1, ""],
            ["rho_AC_2", report.rho_AC_2, ""],
            ["eta_k_sigma", report.eta_k_sigma, ""],
        ]
        if report.closed_form_gap is not None:
            rows.append(["closed-form K gap", report.closed_form_gap, "closed-form-d1"])
        if config.format == "csv":
            text = _rows_to_csv(["quantity", "value", "method"], rows)
        else:
            text = (
                colored(f"Condition report  k={report.k}  t={report.t}", "green")
                + "\n"
                + format_table(["quantity", "value", "method"], rows)
                + "\n"
            )
    _write(config, text, out)
    return EXIT_OK


STUDY_COLUMNS = {
    "perturbation": ["t", "eps", "eta", "valid", "reason"],
    "wtls": ["eps", "error", "slope"],
    "forward-error": [
        "trial",
        "x_norm2_sq",
        "rho",
        "eps_n",
        "actual_rel_2norm",
        "bound_n",
        "bound_n_upper",
        "eps_c",
        "actual_rel_maxnorm",
        "bound_m",
        "bound_m_upper",
        "actual_componentwise",
        "bound_c",
        "bound_c_upper",
        "valid",
        "reason",
    ],
}

DEFAULT_EPS = {
    "perturbation": (1e-2, 1e-4, 1e-6),
    "wtls": (1e-2, 3e-3, 1e-3, 3e-4, 1e-4),
    "forward-error": (1e-12,),
}


def _perturbation_grid(rows: list[dict]) -> str:
    ts = sorted({r["t"] for r in rows})
    eps = []
    for r in rows:
        if r["eps"] not in eps:
            eps.append(r["eps"])
    cell = {(r["eps"], r["t"]): (r["eta"] if r["valid"] else "invalid") for r in rows}
    grid = [[f"eps={e:g}"] + [cell.get((e, t), "-") for t in ts] for e in eps]
    return format_table(["eta"] + [f"t={t}" for t in ts], grid)


def cmd_study(config: RunConfig, out: TextIO = sys.stdout) -> int:
    kind = config.study
    problem = None
    if config.paths and kind == "forward-error":
        raise UsageError("forward-error draws its own problems; use --gen")
    if config.paths:
        problem = config.load_problem()
    study = Study(
        kind=kind,
        eps=config.eps or DEFAULT_EPS[kind],
        t=config.t,
        trials=config.trials,
        seed=config.seed,
        verbose=config.format == "table" and config.output is None,
        log_to_wandb=config.log_to_wandb,
    )
    spec = config.generator or GeneratorSpec("uniform", seed=config.seed)
    solver_options = SolverOptions()
    if kind == "wtls" and config.t:
        solver_options.requested_t = config.t[0]
    rows = study.run(spec, problem, solver_options, config.condition_options())

    columns = STUDY_COLUMNS[kind]
    if config.format == "json":
        text = emit_json({"seed": config.seed, "study": kind, "rows": rows})
    elif config.format == "csv":
        text = _rows_to_csv(columns, [[r.get(c) for c in columns] for r in rows])
    else:
        title = colored(f"Study: {kind}  seed={config.seed}", "green")
        if kind == "perturbation":
            body = _perturbation_grid(rows)
        else:
            body = format_table(columns, [[r.get(c, "-") for c in columns] for r in rows])
        text = title + "\n" + body + "\n"
        if kind == "wtls":
            slope = rows[0]["slope"] if rows else math.nan
            text += f"log-log slope: {slope:.3f}\n"
    _write(config, text, out)
    return EXIT_OK


def cmd_gen(config: RunConfig, out: TextIO = sys.stdout) -> int:
    if config.paths:
        raise UsageError("`gen` writes generated problems; do not pass matrix files")
    if config.out_dir is None:
        raise UsageError("`gen` needs --out-dir")
    problem = config.load_problem()
    paths = loading.save_problem(problem, config.out_dir, config.ext)
    payload = {
        "family": config.generator.family,
        "seed": config.seed,
        "paths": paths,
        "dims": {"p": problem.p, "q": problem.q, "n": problem.n, "d": problem.d},
    }
    if config.format == "json":
        text = emit_json(payload)
    else:
        text = "\n".join(f"{name}: {path}" for name, path in sorted(paths.items())) + "\n"
    _write(config, text, out)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "cond": cmd_cond, "study": cmd_study, "gen": cmd_gen}


def build_parser() -> ArgumentParser:
    parser = CliParser(prog="tlsekit", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="subcommand", parser_class=CliParser)
    sub.required = True
    for name in ("solve", "cond"):
        cli_utils.add_common_cli(sub.add_parser(name))
    study = cli_utils.add_common_cli(sub.add_parser("study"))
    study.add_argument("kind", choices=["perturbation", "wtls", "forward-error"])
    study.add_argument("--eps", type=str, default=None, help="Comma-separated perturbation sizes / weights.")
    study.add_argument("--trials", type=int, default=1, help="Draws per generator setting (forward-error).")
    study.add_argument("--wandb", action="store_true", help="Mirror study rows to Weights & Biases.")
    gen = cli_utils.add_common_cli(sub.add_parser("gen"))
    gen.add_argument("--out-dir", type=str, default=None)
    gen.add_argument("--ext", choices=[".csv", ".mtx"], default=".csv")
    return parser


def main(argv: Optional[list[str]] = None, out: TextIO = sys.stdout, err: TextIO = sys.stderr) -> int:
    try:
        args = build_parser().parse_args(argv)
        config = RunConfig.from_args(args)
        cli_utils.use_config(config.bindings, config.configs, finalize=False)
    except (UsageError, OSError) as e:
        err.write(colored(f"usage error: {e}", "red") + "\n")
        return EXIT_USAGE

    if config.seed_injected:
        err.write(colored(f"seed: {config.seed}", "yellow") + "\n")
    try:
        return COMMANDS[config.subcommand](config, out)
    except (UsageError, OSError) as e:
        err.write(colored(f"usage error: {e}", "red") + "\n")
        return EXIT_USAGE
    except (ValidationError, InfeasibleProblemError) as e:
        err.write(colored(f"infeasible: {e}", "red") + "\n")
        return EXIT_INFEASIBLE
    except NumericalFailure as e:
        err.write(colored(f"numerical failure: {e}", "red") + "\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

from argparse import ArgumentParser

import gin


def add_common_cli(parser: ArgumentParser) -> ArgumentParser:
    # extra gin configs
    parser.add_argument(
        "--configs",
        type=str,
        nargs="*",
        help="Extra `.gin` configuration files. Applied after the command-line tolerances and override them.",
    )
    # input source: files XOR generator
    for name in "ABCD":
        parser.add_argument(
            f"--{name}",
            type=str,
            default=None,
            help=f"Path to the {name} block (.csv or .mtx). C and D may be omitted together for an unconstrained problem.",
        )
    parser.add_argument(
        "--gen",
        choices=["uniform", "piecewise_poly", "controlled"],
        default=None,
        help="Generate the problem instead of reading files.",
    )
    parser.add_argument(
        "--dims",
        type=str,
        default=None,
        help="`p,q,n,d` for the uniform generator.",
    )
    parser.add_argument("--M", type=int, default=200, help="Sample sites left of `a` (piecewise_poly).")
    parser.add_argument("--N", type=int, default=200, help="Sample sites right of `a` (piecewise_poly).")
    parser.add_argument("--a", type=float, default=0.5, help="Split point in (0, 1) (piecewise_poly).")
    parser.add_argument("--d", type=int, default=1, help="Observation columns (piecewise_poly).")
    parser.add_argument("--noise", type=float, default=0.0, help="Uniform noise level on B (piecewise_poly).")
    parser.add_argument("--kappaC", type=float, default=1e3, help="Condition number of [C D] (controlled).")
    parser.add_argument("--delta", type=float, default=0.01, help="Singular value gap parameter in (0, 5/12) (controlled).")
    # solver
    parser.add_argument(
        "--t",
        type=str,
        default=None,
        help="Rank index t = p + k (comma list for `study perturbation`). Defaults to n, falling back to the largest admissible t.",
    )
    parser.add_argument("--gap-tol", type=float, default=None, help="Relative singular value gap required at k (default 1e-8).")
    parser.add_argument("--rank-tol", type=float, default=None, help="Smallest allowed sigma_d of V22 (default 1e-8).")
    parser.add_argument("--pinv-tol", type=float, default=None, help="Relative pseudoinverse cutoff (default max(rows, cols) * eps).")
    parser.add_argument("--power-tol", type=float, default=None, help="Power iteration stopping tolerance (default 1e-8).")
    parser.add_argument(
        "--cap",
        type=int,
        default=None,
        help="Largest (n+d)(p+q) for which explicit Kronecker matrices are formed (default 10000).",
    )
    # output
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Random seed. Falls back to $TLSEKIT_SEED, then to a fresh seed that is printed.",
    )
    parser.add_argument("--format", choices=["table", "json", "csv"], default="table")
    parser.add_argument("--output", type=str, default=None, help="Write the report here instead of stdout.")
    return parser


def parse_list(text: str | None, cast=float) -> tuple:
    if text is None:
        return ()
    return tuple(cast(x) for x in text.split(",") if x.strip())


def tolerance_bindings(args) -> dict:
    """
    gin bindings for the tolerances given on the command line.
    """
    config = {}
    solver = "tlsekit.tlse_core.SolverOptions"
    cond = "tlsekit.conditioning.ConditionOptions"
    if args.gap_tol is not None:
        config[f"{solver}.gap_tol"] = args.gap_tol
    if args.rank_tol is not None:
        config[f"{solver}.rank_tol"] = args.rank_tol
    if args.pinv_tol is not None:
        config[f"{solver}.pinv_tol"] = args.pinv_tol
        config[f"{cond}.pinv_tol"] = args.pinv_tol
    if args.power_tol is not None:
        config[f"{cond}.power_tol"] = args.power_tol
    if args.cap is not None:
        config[f"{cond}.explicit_cap"] = args.cap
    return config


def use_config(
    custom_params: dict, gin_configs: list[str] | None = None, finalize: bool = True
):
    """
    Bind tolerance overrides, then any `.gin` files on top of them. The CLI
    leaves the config unlocked so repeated calls in one process can rebind.
    """
    for param, val in custom_params.items():
        gin.bind_parameter(param, val)
    if gin_configs is not None:
        for config in gin_configs:
            gin.parse_config_file(config)
    if finalize:
        gin.finalize()

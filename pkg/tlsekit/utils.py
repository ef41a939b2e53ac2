import os
import math
import warnings
from termcolor import colored

import numpy as np
import gin


class TlseError(Exception):
    pass


class ValidationError(TlseError):
    """
    The input problem violates a standing assumption (shapes, finiteness,
    full row rank of the constraint matrix, ...).
    """

    def __init__(self, reasons: list[str]):
        self.reasons = list(reasons)
        super().__init__("; ".join(self.reasons))


class InfeasibleProblemError(TlseError):
    """
    No admissible rank index exists. `gate` names the check that failed:
    "gap" (singular value separation), "rank" (full row rank of the bottom
    right block), "range" (requested t out of bounds) or "genericity"
    (single-dimensional closed form).
    """

    def __init__(self, gate: str, msg: str):
        self.gate = gate
        super().__init__(f"[{gate} gate] {msg}")


class SizeCapError(TlseError):
    pass


class NumericalFailure(TlseError):
    pass


class GateWarning(Warning):
    pass


class ConvergenceWarning(Warning):
    pass


class SizeCapWarning(Warning):
    pass


class TrialWarning(Warning):
    pass


def tlse_warning(msg: str, category=None):
    warnings.warn(colored(f"{msg}", "green"), category=category)


def divide_with_convention(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """
    Entrywise num / den where xi / 0 is read as 0 when xi == 0 and +inf
    otherwise.
    """
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    out = np.zeros(np.broadcast(num, den).shape)
    num, den = np.broadcast_arrays(num, den)
    nz = den != 0
    out[nz] = num[nz] / den[nz]
    out[~nz & (num != 0)] = math.inf
    return out


def trial_rng(seed: int, trial: int = 0) -> np.random.Generator:
    # PCG64 stream keyed on (seed, trial)
    return np.random.default_rng([int(seed), int(trial)])


def resolve_seed(seed: int | None) -> tuple[int, bool]:
    """
    Returns (seed, injected). Falls back to TLSEKIT_SEED, then to fresh
    entropy.
    """
    if seed is not None:
        return int(seed), False
    env_seed = os.environ.get("TLSEKIT_SEED")
    if env_seed is not None:
        return int(env_seed), False
    return int(np.random.SeedSequence().entropy % (2**32)), True


def gin_as_wandb_config() -> dict:
    """
    Flatten the operative gin bindings (solver, condition and study options)
    into a `{"Class.param": "value"}` dict for the run config.
    """
    bindings = {}
    for line in gin.operative_config_str().splitlines():
        if line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        bindings[key.strip()] = value.strip()
    return bindings


def fmt2(x: float) -> str:
    # two significant digits
    if x is None:
        return "-"
    if isinstance(x, str):
        return x
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf"
    return f"{x:.1e}"


def format_table(header: list[str], rows: list[list]) -> str:
    cells = [[str(h) for h in header]] + [
        [fmt2(v) if isinstance(v, float) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for i, row in enumerate(cells):
        line = "  ".join(c.rjust(w) for c, w in zip(row, widths))
        lines.append(colored(line, "cyan") if i == 0 else line)
    return "\n".join(lines)

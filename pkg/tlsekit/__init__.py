from .tlse_core import TlseProblem, SolverOptions, validate, factorize, select_rank, solve
from .conditioning import ConditionOptions, build_factors, condition_report
from .perturb_lab import Study
from . import kron_tools
from . import matfree
from . import problem_gen
from . import loading
from . import cli_utils

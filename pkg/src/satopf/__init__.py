"""Stochastic DC optimal power flow with reserve saturation.

The smoothed two-stage model is solved by projected stochastic gradient
(:func:`solve_smooth`); candidates are judged on the exact saturation
recourse (:func:`monte_carlo_evaluate`). Affine-policy comparison models
live in :mod:`satopf.comparison`.
"""

from .casefile import CaseFile, bundled_case, list_bundled, load_case, read_case, write_case
from .comparison import affine_evaluate, cap_reformulate, solve_cap, solve_gp
from .costs import CostCoefficients, CostConfig
from .errors import *  # noqa: F401,F403
from .evaluation import (
    EvaluationReport,
    StudySpec,
    SweepRecord,
    logspace,
    monte_carlo_evaluate,
    pareto_front,
    pareto_sweep,
    select_best,
)
from .first_stage import FeasibleSetSpec, FirstStage, feasible_start, is_feasible, project, validate
from .network import Bus, Generator, GeneratorKind, Line, Load, Network, line_flows, solve_dc_flow, validate_network
from .psg import PsgConfig, PsgResult, estimate_objective, solve_smooth
from .recourse import (
    FeasibilityInterval,
    RecourseSolution,
    SmoothingParams,
    feasibility_interval,
    recourse_cost,
    saturate,
    smooth_saturate,
    solve_recourse,
)
from .sensitivity import recourse_jacobian, stochastic_gradient
from .uncertainty import Distribution, Scenario, ScenarioSet, UncertaintyModel, sample, sigma_d_stats

__version__ = "0.1.0"

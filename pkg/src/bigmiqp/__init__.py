"""Multi-agent mixed-integer QP solving by sequential big-M tightening of a
convex relaxation, in centralized and distributed (proximal ADMM) forms, with
an exhaustive-enumeration oracle, a signalized-intersection compiler, and a
receding-horizon traffic simulation.
"""

from .model import (
    AgentBlock,
    BigMEntry,
    MiqpProblem,
    Polarity,
    Solution,
    Status,
    check_feasible,
    load_problem,
    objective_value,
    relax,
    save_problem,
    validate,
)
from .tighten import SolveReport, TightenConfig, solve_centralized
from .admm import AdmmParams, solve_distributed
from .oracle import accuracy_experiment, random_instance, solve_exhaustive
from .intersection import (
    IntersectionScenario,
    Lane,
    ScenarioParams,
    Vehicle,
    compile_scenario,
    load_scenario,
    save_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmParams",
    "AgentBlock",
    "BigMEntry",
    "IntersectionScenario",
    "Lane",
    "MiqpProblem",
    "Polarity",
    "ScenarioParams",
    "Solution",
    "SolveReport",
    "Status",
    "TightenConfig",
    "Vehicle",
    "accuracy_experiment",
    "check_feasible",
    "compile_scenario",
    "load_problem",
    "load_scenario",
    "objective_value",
    "random_instance",
    "relax",
    "save_problem",
    "save_scenario",
    "solve_centralized",
    "solve_distributed",
    "solve_exhaustive",
    "validate",
]

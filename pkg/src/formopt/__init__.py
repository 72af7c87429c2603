"""Mixture-process formulation optimization workbench.

Workflow: define a study (mixture, continuous, categorical, blocking factors
and response goals), generate a space-filling design over the constrained
region, import results, fit self-validated ensemble models per response,
and optimize the joint desirability into candidate recipes, with a simulation
harness for comparing analysis methods against known truth functions.
"""

from .study import (
    DataTable,
    Factor,
    ResponseSpec,
    StudyDefinition,
    ValidationReport,
    max_run_heuristic,
    min_run_heuristic,
    validate_study,
)
from .design import Design, generate_space_filling, round_and_repair
from .model import build_candidate_effects, coded_space
from .svem import EnsembleModel, fractional_weights, predict, svem_fit
from .profiler import (
    CandidateRecipe,
    DesirabilitySpec,
    desirability,
    maximize_desirability,
    overall_desirability,
    random_table,
)

__version__ = "0.1.0"

__all__ = [
    "DataTable", "Factor", "ResponseSpec", "StudyDefinition", "ValidationReport",
    "max_run_heuristic", "min_run_heuristic", "validate_study",
    "Design", "generate_space_filling", "round_and_repair",
    "build_candidate_effects", "coded_space",
    "EnsembleModel", "fractional_weights", "predict", "svem_fit",
    "CandidateRecipe", "DesirabilitySpec", "desirability",
    "maximize_desirability", "overall_desirability", "random_table",
    "__version__",
]

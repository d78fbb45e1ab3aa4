"""Two-stage stiffness model updating and sparse damage identification.

Stage 1 updates an intact finite-element model with an iterative
hierarchical Bayesian sensitivity solver; stage 2 localizes sparse stiffness
loss with sequential threshold least squares whose threshold is tuned by
Gaussian-process Bayesian optimization.
"""

__version__ = "0.1.0"

from .bayes_opt import OptBudget, bayes_opt
from .bayes_update import HyperPriors, PosteriorEstimate, run_model_update
from .bench_sim import Scenario, make_scenario, synth_measurements
from .estimators import (
    BayesOptSTLSRegressor,
    CVLassoRegressor,
    CVRidgeRegressor,
    HierarchicalBayesRegressor,
    IntactModelUpdater,
    SparseDamageIdentifier,
    STLSRegressor,
)
from .exceptions import DamageIDError
from .sensitivity import SensitivitySystem, assemble_sensitivity
from .sparse_id import DamageResult, LassoConfig, SparseSolution, run_damage_id, stls
from .structural_model import AssembledSystem, ModalData, ModelDefinition, assemble, solve_modes

__all__ = [
    "AssembledSystem",
    "BayesOptSTLSRegressor",
    "CVLassoRegressor",
    "CVRidgeRegressor",
    "DamageIDError",
    "DamageResult",
    "HierarchicalBayesRegressor",
    "HyperPriors",
    "IntactModelUpdater",
    "LassoConfig",
    "ModalData",
    "ModelDefinition",
    "OptBudget",
    "PosteriorEstimate",
    "STLSRegressor",
    "Scenario",
    "SensitivitySystem",
    "SparseDamageIdentifier",
    "SparseSolution",
    "assemble",
    "assemble_sensitivity",
    "bayes_opt",
    "make_scenario",
    "run_damage_id",
    "run_model_update",
    "solve_modes",
    "stls",
    "synth_measurements",
]

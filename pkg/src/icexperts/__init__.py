"""Incentive-compatible online learning when the learner picks m experts."""

from .errors import (
    ArtifactError, CombinatorialBlowupError, ConfigError, DataError, DomainError,
    HorizonTooShortError, StepSizeError, SurvivalUnderflowError,
)
from .ftpl import FTPL, best_response_conditional, default_step_size, ic_deviation_bound
from .noise import GAUSSIAN, GUMBEL, HYPERBOLIC, LAPLACE, NoiseModel, check_condition1, get_noise
from .odg import OnlineDistortedGreedy
from .sim import (
    AgentPolicy, Environment, RegretTrace, SimConfig, alpha_regret, brute_force_opt, ic_audit,
    run_experiment,
)
from .utilities import MODULAR, SUBMODULAR, UtilityKind, curvature, quadratic_loss, utility
from .wsu import WSU, MetaWSU, wswm_payment

__version__ = "0.1.0"

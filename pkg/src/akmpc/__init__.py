"""Adaptive Koopman-operator MPC: offline linear-embedding learning, convex
MPC in the lifted space, and online adaptation with soft target updates."""

from .adaptation import (AdaptationConfig, ReplayBuffer, TargetPair,
                         adapt_step, batch_sample, soft_update)
from .cartpole import (NOMINAL_PARAMS, TRUE_PARAMS, CartpoleParams,
                       cartpole_rhs, scale_params, step)
from .embedding import (EmbeddingModel, LossWeights, ParamMask,
                        loss_and_gradients, verify_koopman_form)
from .harness import (CONTROLLERS, ExperimentConfig, RunResult, average_error,
                      make_controller, obtain_offline_model, run_episode,
                      run_experiment, sensitivity_sweep, timing_report)
from .mpc import (LqTrackingProblem, MpcSolution, QuadraticCostSpec,
                  SolverError, ilqr_solve, koopman_mpc_step,
                  solve_lq_tracking)
from .nets import Adam, DimensionError, FeatureNetwork, solve_least_squares
from .offline import (Dataset, OfflineTrainConfig, Transition,
                      generate_dataset, train_offline)
from .rff import RffModel, median_heuristic_sigma, rff_mpc_step

__version__ = "0.1.0"

__all__ = [
    "AdaptationConfig", "ReplayBuffer", "TargetPair", "adapt_step",
    "batch_sample", "soft_update", "NOMINAL_PARAMS", "TRUE_PARAMS",
    "CartpoleParams", "cartpole_rhs", "scale_params", "step",
    "EmbeddingModel", "LossWeights", "ParamMask", "loss_and_gradients",
    "verify_koopman_form", "CONTROLLERS", "ExperimentConfig", "RunResult",
    "average_error", "make_controller", "obtain_offline_model", "run_episode",
    "run_experiment", "sensitivity_sweep", "timing_report", "LqTrackingProblem", "MpcSolution", "QuadraticCostSpec",
    "SolverError", "ilqr_solve", "koopman_mpc_step", "solve_lq_tracking",
    "Adam", "DimensionError", "FeatureNetwork", "solve_least_squares",
    "Dataset", "OfflineTrainConfig", "Transition", "generate_dataset",
    "train_offline", "RffModel", "median_heuristic_sigma", "rff_mpc_step",
]

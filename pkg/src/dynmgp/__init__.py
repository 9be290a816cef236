"""Non-stationary multi-output Gaussian processes with dynamic
spike-and-slab source selection."""

from .model import (Dataset, DynamicParams, GammaPosterior, HardSlab,
                    OutputSeries, SoftSlab, SpikeSlabConfig, softplus,
                    softplus_grad, softplus_inv)
from .covariance import CovBlocks, assemble
from .inference import (FitConfig, FitResult, e_step, fit, init_sources,
                        marginal_loglik, q_objective)
from .kernels import BACKEND
from .prediction import (Prediction, Predictor, forecast_params, predict,
                         recover_params)
from .tuning import DEFAULT_GRID, TuningGrid, TuningResult, grid_search
from .baselines import (GpParams, StaticParams, gp_fit, gp_fit_predict,
                        gp_predict, mgp_l1_cv, mgp_l1_fit, mgp_l1_predict)
from .experiments import (CaseSpec, MetricReport, crps, default_ss_config,
                          evaluate_methods, gen_segments, generate, mae,
                          mean_crps, read_csv_dataset, remove_gaps,
                          run_benchmark, true_support, write_csv_dataset)
from .rl import RlConfig, fit_transition, null_policy, policy_iterate, run_rl

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DynamicParams", "GammaPosterior", "HardSlab", "OutputSeries",
    "SoftSlab", "SpikeSlabConfig", "softplus", "softplus_grad", "softplus_inv",
    "CovBlocks", "assemble", "FitConfig", "FitResult", "e_step", "fit",
    "init_sources", "marginal_loglik", "q_objective", "BACKEND",
    "Prediction", "Predictor", "forecast_params", "recover_params", "predict",
    "DEFAULT_GRID", "TuningGrid", "TuningResult", "grid_search",
    "GpParams", "StaticParams", "gp_fit", "gp_predict", "gp_fit_predict",
    "mgp_l1_fit", "mgp_l1_predict", "mgp_l1_cv",
    "CaseSpec", "MetricReport", "crps", "default_ss_config",
    "evaluate_methods", "gen_segments", "generate", "mae", "mean_crps",
    "read_csv_dataset", "remove_gaps", "run_benchmark", "true_support",
    "write_csv_dataset",
    "RlConfig", "fit_transition", "null_policy", "policy_iterate", "run_rl",
    "__version__",
]

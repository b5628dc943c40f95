"""Active domain adaptation under latent shift with kernel proxy bridge functions.

The public surface is re-exported here; see the submodules for details.
"""

from ._backend import NAME as BACKEND
from .active_loop import PoolOracle, RoundLog, evaluate_target_mse, run_pqal
from .analysis import aggregate_metrics, effective_rank, resolvable_rank, stack_cme_representations
from .baselines import run_few_shot_erm, run_oracle, run_proxy_da
from .bridge import (AdaptationConfig, BridgeModel, adapt_bridge, fit_bridge_closed_form, predict,
                     predict_many, split_stages)
from .cme import CmeModel, embed_weights, fit_cme, fit_cme_env, posterior_variance
from .config import ExperimentConfig, load_config
from .errors import (BudgetExhausted, ConfigError, EnvironmentEmptyError, InputError,
                     NumericalError)
from .harness import ResultRecord, emit_curve, emit_table, run_experiment
from .kernelcore import KernelSet, KernelSpec
from .samples import Samples
from .scm import ScmConfig, build_pools, generate

__version__ = "0.1.0"

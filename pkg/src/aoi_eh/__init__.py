"""Age-of-information minimisation for energy-harvesting sources."""
from .env import (ChannelModel, ParamSchedule, SourceEnv, SourceModel, Wave, build_kernel,
                  build_source_kernel, make_envs, variation_budgets)
from .stationary import (extract_policy_and_thresholds, indexability_check, solve_source_subproblem,
                         value_iteration, whittle_index, whittle_table)
from .learning import aec_swucrl2_run, confidence_radius, evi, inner_min, window_from_budgets
from .bandit import aec_borl_run, borl_config, exp3p_distribution, exp3p_init, exp3p_update
from .multi import wit_borl_run, wit_swucrl2_run
from .baselines import random_run, run_baseline
from .harness import ExperimentConfig, aggregate, emit_plot_data, load_config, load_preset, run_experiment
from .trace import RunTrace

__all__ = [name for name in dir() if not name.startswith("_")]

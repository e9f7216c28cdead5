"""Lagrangian single-arm relaxations and irrevocable schedulers for Bayesian bandits."""
from __future__ import annotations

__version__ = "0.1.0"

from .budgeted import BudgetedRunner, BudgetedSolution, balance_lambda, budgeted_gain_dp, run_budgeted
from .delayed import (
    block_compaction_transform,
    block_gain_dp,
    block_model,
    delay_free_transform,
    delayed_runner,
    run_delayed,
    solve_delayed,
)
from .instance import InstanceSpec, SpecError, gen_tight_instance, load_instance
from .lagrangian import (
    CHOOSE_FINAL,
    PLAY,
    STOP,
    LambdaSolution,
    MixedPolicy,
    PolicyStats,
    SingleArmPolicy,
    coupled_lagrangian_search,
    gain_dp,
    gittins_index,
    lagrangian_bisection,
    policy_stats,
    solve_base,
)
from .maxmab import (
    SequentialRunner,
    ThrottledRunner,
    maxmab_gain_dp,
    only_max_reduction,
    run_maxmab_sequential,
    run_throttled,
    solve_maxmab,
    solve_maxmab_truncated,
)
from .oracles import exact_expectation, exact_joint_opt
from .pipeline import SolvedInstance, solve_instance
from .scheduler import CombinedRunner, ScheduleConfig, order_by_ratio, run_combined
from .sim import EpisodeResult, Estimate, estimate_reward, simulate_rewards
from .statespace import (
    ArmModel,
    build_arm,
    build_beta_bernoulli,
    build_explicit,
    build_known,
    build_mixture_bernoulli,
    validate_martingale,
)
from .switching import MetricSpec, orienteering_exact, run_switching, solve_switching

import types as _types

__all__ = sorted(name for name, obj in globals().items()
                 if not name.startswith("_") and name != "annotations" and not isinstance(obj, _types.ModuleType))

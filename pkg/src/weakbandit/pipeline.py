"""Variant dispatch: instance in, dual bound and a ready-to-run executor out."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .budgeted import BudgetedRunner, balance_lambda
from .delayed import delayed_runner, solve_delayed
from .instance import InstanceSpec, SpecError
from .lagrangian import MixedPolicy, SingleArmPolicy, solve_base
from .maxmab import SequentialRunner, ThrottledRunner, solve_maxmab, solve_maxmab_truncated
from .scheduler import CombinedRunner, ScheduleConfig
from .sim import Estimate, estimate_reward
from .statespace import ArmModel
from .switching import MetricSpec, solve_switching, switching_runner

__all__ = ["SolvedInstance", "solve_instance", "policy_payload", "solution_policies", "ADVERSARIAL_ALPHA"]

ADVERSARIAL_ALPHA = 0.5


@dataclass(eq=False)
class SolvedInstance:
    spec: InstanceSpec
    arms: list[ArmModel]
    dual_bound: float
    summary: dict[str, Any]
    runner: Any
    solution: Any = field(repr=False)

    def estimate(self, episodes: int, seed: int = 0, threads: int = 1) -> Estimate:
        return estimate_reward(self.runner, episodes, seed, threads)


def _json_num(x: float) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)


def policy_payload(p: Any) -> Any:
    """Plain-JSON view of a policy, for inspection only."""
    if isinstance(p, MixedPolicy):
        return [{"weight": w, **policy_payload(c)} for w, c in p.components]
    if isinstance(p, SingleArmPolicy):
        out: dict[str, Any] = {"actions": p.actions.astype(int).tolist(), "lambda": _json_num(p.lam)}
        if p.threshold is not None:
            out["threshold"] = float(p.threshold)
        return out
    if hasattr(p, "policy") and hasattr(p, "mode"):
        return {"mode": p.mode, "delay": p.delta, "switch_plays": _json_num(p.switch_plays),
                "components": [{"weight": w, "block_plays": np.asarray(c.plays).astype(int).tolist()}
                               for w, c in p.policy.components]}
    raise TypeError(f"cannot serialise {type(p).__name__}")


def solve_instance(spec: InstanceSpec, epsilon: float | None = None, regime: str | None = None) -> SolvedInstance:
    """Run the variant's solver and build its executor.

    ``epsilon`` and ``regime`` override the instance's own settings.
    """
    eps = spec.epsilon if epsilon is None else float(epsilon)
    arms = spec.build_arms()
    K, T, v = spec.K, spec.T, spec.variant

    if v in ("base", "adversarial"):
        sol = solve_base(arms, K, T, eps)
        if v == "base":
            cfg = ScheduleConfig(K, T, spec.order, 1.0 if spec.alpha is None else spec.alpha)
        else:
            order = spec.order if spec.order is not None else tuple(range(spec.n))
            cfg = ScheduleConfig(K, T, order, ADVERSARIAL_ALPHA if spec.alpha is None else spec.alpha)
        runner = CombinedRunner(arms, sol.policies, cfg)
        summary = {**sol.summary(), "order": list(runner.order), "alpha": cfg.alpha}
        return SolvedInstance(spec, arms, sol.dual_bound, summary, runner, sol)

    if v == "switching":
        mc = spec.metric
        ms = MetricSpec(mc.matrix(), mc.start, mc.L)
        sol = solve_switching(arms, ms, T, eps, alpha=spec.alpha)
        runner = switching_runner(arms, ms, T, sol)
        summary = {**sol.search.summary(), "dual_bound": sol.dual_bound, "alpha": sol.alpha,
                   "path_minus": list(sol.minus.path), "path_plus": list(sol.plus.path), "L": sol.L}
        return SolvedInstance(spec, arms, sol.dual_bound, summary, runner, sol)

    if v == "delayed":
        sol = solve_delayed(arms, K, T, eps, regime or spec.regime)
        runner = delayed_runner(arms, sol, K, T, order=spec.order, alpha=spec.alpha)
        rp = sol.regime
        summary = {**sol.search.summary(), "dual_bound": sol.dual_bound, "order": list(runner.order),
                   "regime": rp.name, "alpha": runner.alpha, "gamma": rp.gamma, "r": _json_num(rp.r),
                   "modes": [p.mode for p in sol.policies]}
        return SolvedInstance(spec, arms, sol.dual_bound, summary, runner, sol)

    if v == "maxmab":
        if spec.budget_mode == "only_max":
            raise SpecError("budget_mode", "only_max budgets are available through the library reduction, "
                                           "not as a solve pipeline")
        if spec.feedback_mode == "one_at_a_time":
            sol = solve_maxmab(arms, K, T, eps)
            runner = SequentialRunner(arms, sol.policies, K, T, 0.5 if spec.alpha is None else spec.alpha,
                                      spec.order)
            summary = {**sol.summary(), "order": list(runner.order), "alpha": runner.alpha,
                       "executor": "sequential"}
        else:
            kw = {} if spec.alpha is None else {"alpha": spec.alpha}
            sol = solve_maxmab_truncated(arms, K, T, eps, **kw)
            runner = ThrottledRunner(arms, sol.policies, K, T, sol.alpha, spec.order)
            summary = {"lambda1_minus": sol.lambda1_minus, "lambda1_plus": sol.lambda1_plus, "a": sol.a,
                       "alpha": sol.alpha, "beta": sol.beta, "horizon": sol.horizon,
                       "dual_bound": sol.dual_bound, "iterations": sol.iterations,
                       "order": list(runner.order), "executor": "throttled"}
        return SolvedInstance(spec, arms, sol.dual_bound, summary, runner, sol)

    if v == "budgeted":
        sol = balance_lambda(arms, T, eps)
        runner = BudgetedRunner(arms, sol.policies, T, spec.order)
        summary = {**sol.summary(), "order": list(runner.order)}
        return SolvedInstance(spec, arms, sol.dual_bound, summary, runner, sol)

    raise SpecError("variant", f"unknown variant {v!r}")


def solution_policies(solved: SolvedInstance) -> list[Any]:
    sol = solved.solution
    if hasattr(sol, "minus") and hasattr(sol.minus, "path"):
        return [{"path_minus": list(sol.minus.path), "path_plus": list(sol.plus.path), "a": sol.a,
                 "minus": [policy_payload(p) for p in sol.minus.policies],
                 "plus": [policy_payload(p) for p in sol.plus.policies]}]
    return [policy_payload(p) for p in sol.policies]

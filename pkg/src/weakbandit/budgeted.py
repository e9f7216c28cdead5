"""Budgeted learning: explore for ``T`` plays, then commit to one arm's posterior mean.

Each arm's policy may play, stop, or pick its current state as the final
answer.  Pricing both the final pick and the plays (a play costs ``1/T`` of
a pick) splits the problem per arm.  A single price ``lam*`` is found where
the summed per-arm values just cover the price itself.  The executor walks
the arms in any order, and at most one arm ever makes the final pick.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lagrangian import CHOOSE_FINAL, PLAY, STOP, SingleArmPolicy, _require_valid
from .scheduler import check_permutation
from .sim import EpisodeResult, EpisodeUniforms, Uniforms, cumulative_probs, outcome_index
from .statespace import ArmModel

logger = logging.getLogger(__name__)

__all__ = [
    "BudgetedGain",
    "BudgetedSolution",
    "BudgetedRunner",
    "budgeted_gain_dp",
    "balance_lambda",
    "run_budgeted",
    "continuation_value",
]


@dataclass(frozen=True, eq=False)
class BudgetedGain:
    gain: np.ndarray
    policy: SingleArmPolicy
    Q: float


def budgeted_gain_dp(model: ArmModel, lam: float, T: int) -> BudgetedGain:
    """``Gain(u) = max(0, r_u - lam, -lam/T + E Gain(child))``.

    Ties go to the earlier of stop, pick, play; playing is only offered at
    playable states.
    """
    if not lam >= 0:
        raise ValueError(f"lam must be non-negative (got {lam})")
    if T < 1:
        raise ValueError("T must be positive")
    _require_valid(model)
    S = model.n_states
    g = np.zeros(S + 1)
    acts = np.zeros(S, dtype=np.int8)
    cp = model.child_padded
    for layer in reversed(model.layers):
        pick = model.reward[layer] - lam
        explore = -lam / T + (model.probs[layer] * g[cp[layer]]).sum(axis=1)
        explore = np.where(model.playable[layer], explore, -np.inf)
        best = np.zeros(len(layer))
        act = np.full(len(layer), STOP, dtype=np.int8)
        m = pick > best
        best = np.where(m, pick, best)
        act[m] = CHOOSE_FINAL
        m = explore > best
        best = np.where(m, explore, best)
        act[m] = PLAY
        g[layer] = best
        acts[layer] = act
    return BudgetedGain(g[:S], SingleArmPolicy(acts, lam=float(lam)), float(g[0]))


@dataclass(frozen=True, eq=False)
class BudgetedSolution:
    lam_star: float
    lam_plus: float
    policies: tuple[SingleArmPolicy, ...]
    Q: tuple[float, ...]
    dual_bound: float
    T: int
    iterations: int
    trace: tuple[tuple[float, float], ...] = field(default=(), repr=False)

    def summary(self) -> dict:
        return {
            "lambda_star": self.lam_star,
            "lambda_plus": self.lam_plus,
            "dual_bound": self.dual_bound,
            "sum_Q": float(sum(self.Q)),
            "iterations": self.iterations,
        }


def balance_lambda(arms: Sequence[ArmModel], T: int, delta_tol: float = 0.05,
                   max_iter: int = 200) -> BudgetedSolution:
    """Largest price (up to relative tolerance) whose summed arm values still cover it.

    Keeps ``sum Q(lo) >= lo`` and ``sum Q(hi) < hi`` and stops once
    ``hi - lo <= delta_tol * lo / 3``.  The bound ``2 lo + sum Q(lo)`` holds
    by weak duality.
    """
    if not 0 < delta_tol < 1:
        raise ValueError("delta_tol must lie in (0, 1)")
    trace: list[tuple[float, float]] = []

    def solve(lam: float):
        res = [budgeted_gain_dp(m, lam, T) for m in arms]
        tot = float(sum(r.Q for r in res))
        trace.append((lam, tot))
        return res, tot

    lo_res, q0 = solve(0.0)
    lo, hi = 0.0, 2.0 * q0
    it = 0
    if q0 > 0:
        _, qh = solve(hi)
        assert qh < hi, "summed values at twice their value at zero should fall below the price"
        while hi - lo > delta_tol * lo / 3.0 and it < max_iter:
            it += 1
            mid = 0.5 * (lo + hi)
            res, q = solve(mid)
            if q >= mid:
                lo, lo_res = mid, res
            else:
                hi = mid
    Q = tuple(r.Q for r in lo_res)
    dual = 2.0 * lo + float(sum(Q))
    logger.debug("balance: lam* = %g (hi %g) after %d steps", lo, hi, it)
    return BudgetedSolution(lo, hi, tuple(r.policy for r in lo_res), Q, dual, int(T), it, tuple(trace))


def continuation_value(model: ArmModel, policy: SingleArmPolicy) -> np.ndarray:
    """Expected posterior mean of the final pick when the policy is run from each state."""
    S = model.n_states
    v = np.zeros(S + 1)
    cp = model.child_padded
    for layer in reversed(model.layers):
        a = policy.actions[layer]
        play = (model.probs[layer] * v[cp[layer]]).sum(axis=1)
        v[layer] = np.where(a == CHOOSE_FINAL, model.reward[layer], np.where(a == PLAY, play, 0.0))
    return v[:S]


class BudgetedRunner:
    """Runs the arms' policies one after another; one shared budget of ``T`` plays."""

    def __init__(self, arms: Sequence[ArmModel], policies: Sequence[SingleArmPolicy], T: int,
                 order: Sequence[int] | None = None):
        if len(arms) != len(policies):
            raise ValueError("need one policy per arm")
        self.arms = list(arms)
        self.policies = list(policies)
        self.T = int(T)
        self.n_arms = len(arms)
        self.plays_per_arm = self.T
        self.order = list(range(self.n_arms)) if order is None else check_permutation(order, self.n_arms)
        self._cum = [cumulative_probs(m) for m in self.arms]

    def episode(self, u: EpisodeUniforms) -> EpisodeResult:
        used = 0
        count = [0] * self.n_arms
        trace: list[tuple[int, int, float, bool]] = []
        reward = 0.0
        how = "exhausted"
        pick = None
        for i in self.order:
            m = self.arms[i]
            acts = self.policies[i].actions
            s = 0
            while True:
                a = acts[s]
                if a == STOP:
                    break
                if a == CHOOSE_FINAL or used >= self.T:
                    reward = float(m.reward[s])
                    how = "chosen" if a == CHOOSE_FINAL else "horizon"
                    pick = (i, s)
                    break
                j = outcome_index(self._cum[i][s], u.plays[i, count[i]])
                trace.append((used, i, float(m.values[j]), False))
                s = int(m.child[s, j])
                count[i] += 1
                used += 1
            if pick is not None:
                break
        assert used <= self.T, "exploration budget exceeded"
        if pick is not None:
            trace.append((used, pick[0], reward, True))
        return EpisodeResult(reward, np.array(count), trace, info={"end": how, "pick": pick})

    def __call__(self, u: Uniforms) -> np.ndarray:
        return np.array([self.episode(u.row(e)).total_reward for e in range(len(u))])


def run_budgeted(arms: Sequence[ArmModel], solution: BudgetedSolution, order: Sequence[int], T: int,
                 rng_stream: EpisodeUniforms) -> EpisodeResult:
    """One episode.  Reward is the posterior mean of the picked state, or 0 if nothing is picked."""
    return BudgetedRunner(arms, solution.policies, T, order).episode(rng_stream)

"""Max-of-plays bandits: several plays per slot, the slot pays the largest value seen.

A single-arm policy here plays, observes a value and may *choose* it.  The
relaxation counts choices and plays: at most ``T`` choices and ``K*T``
plays.  For a price ``lam`` on both (merged into one budget of ``2T`` with
plays weighted ``1/K``) the best single-arm policy chooses exactly the
values above ``lam``, so the per-arm program is again a small DP.

Two executors are provided.  The sequential one plays arms one after
another within a slot and closes the slot as soon as a value is chosen or
``K`` plays were made.  The throttled one plays a set of arms at once and
keeps the summed probability of "some value above its threshold" below
two thirds, stalling or throttling when needed.

Budgets charged on every observation are built into the state spaces.  The
variant where only the slot's winner pays is handled through a reduction
to two threshold policies, see :func:`only_max_reduction`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lagrangian import (
    PLAY,
    STOP,
    LambdaSolution,
    MixedPolicy,
    PolicyStats,
    RelaxationPoint,
    SingleArmPolicy,
    _require_valid,
    as_mixed,
    lagrangian_bisection,
    policy_stats,
)
from .scheduler import check_permutation
from .sim import EpisodeResult, EpisodeUniforms, Uniforms, cumulative_probs, outcome_index
from .statespace import ArmModel

logger = logging.getLogger(__name__)

__all__ = [
    "MaxMabConfig",
    "ThresholdGain",
    "TruncatedSolution",
    "OnlyMaxPolicy",
    "threshold_gain_dp",
    "maxmab_gain_dp",
    "maxmab_consumption",
    "maxmab_ratio",
    "order_by_choice_ratio",
    "solve_maxmab",
    "truncate_policy",
    "solve_maxmab_truncated",
    "classify_step",
    "SequentialRunner",
    "ThrottledRunner",
    "run_maxmab_sequential",
    "run_throttled",
    "round_down_pow2",
    "only_max_thresholds",
    "only_max_reduction",
    "p_feasible_opt",
    "DEFAULT_BETA",
    "DEFAULT_ALPHA",
]

DEFAULT_BETA = math.sqrt(2.0) - 1.0
DEFAULT_ALPHA = (1.0 - DEFAULT_BETA) / (6.0 * (1.0 + DEFAULT_BETA))

FULL, STALL, THROTTLE = "full", "stall", "throttle"


@dataclass(frozen=True)
class MaxMabConfig:
    K: int
    T: int
    eps: float = 0.05
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    feedback_mode: str = "one_at_a_time"
    budget_mode: str = "all_plays"

    def __post_init__(self) -> None:
        if self.K < 1 or self.T < 1:
            raise ValueError("K and T must be positive")
        if not (0 < self.alpha <= 1 and 0 < self.beta <= 1):
            raise ValueError("alpha and beta must lie in (0, 1]")
        if self.feedback_mode not in ("one_at_a_time", "simultaneous"):
            raise ValueError("feedback_mode must be one_at_a_time or simultaneous")
        if self.budget_mode not in ("all_plays", "only_max"):
            raise ValueError("budget_mode must be all_plays or only_max")


@dataclass(frozen=True, eq=False)
class ThresholdGain:
    gain: np.ndarray
    policy: SingleArmPolicy
    Q: float


def threshold_gain_dp(model: ArmModel, choice_price: float, play_price: float,
                      threshold: float | None = None) -> ThresholdGain:
    """``gain(u) = max(0, sum_{q > thr} P(q)(q - choice_price) - play_price + E gain(child))``.

    ``threshold`` defaults to ``choice_price``, which is the optimal choice
    rule for these prices.  Play iff the gain is strictly positive.
    """
    if not (choice_price >= 0 and play_price >= 0):
        raise ValueError("prices must be non-negative")
    _require_valid(model)
    thr = choice_price if threshold is None else float(threshold)
    v = model.values
    pick = v > thr
    excess_row = np.where(pick, v - choice_price, 0.0)
    S = model.n_states
    g = np.zeros(S + 1)
    acts = np.zeros(S, dtype=np.int8)
    cp = model.child_padded
    for layer in reversed(model.layers):
        probs = model.probs[layer]
        cont = (probs * excess_row).sum(axis=1) - play_price + (probs * g[cp[layer]]).sum(axis=1)
        play = model.playable[layer] & (cont > 0)
        g[layer] = np.where(play, cont, 0.0)
        acts[layer] = play
    choose = np.broadcast_to(pick, model.probs.shape) & model.playable[:, None]
    pol = SingleArmPolicy(acts, choose=np.array(choose), lam=float(play_price), threshold=thr)
    return ThresholdGain(g[:S], pol, float(g[0]))


def maxmab_gain_dp(model: ArmModel, lam: float, K: int) -> ThresholdGain:
    """Single-multiplier program: price ``lam`` per choice and ``lam/K`` per play."""
    if not lam >= 0:
        raise ValueError(f"lam must be non-negative (got {lam})")
    if K < 1:
        raise ValueError("K must be positive")
    return threshold_gain_dp(model, lam, lam / K)


def maxmab_consumption(st: PolicyStats, K: int) -> float:
    return float(st.N.sum() + st.T_plays / K)


def maxmab_ratio(st: PolicyStats, K: int) -> float:
    c = maxmab_consumption(st, K)
    return st.R_choice / c if c > 0 else -math.inf


def order_by_choice_ratio(stats: Sequence[PolicyStats], K: int) -> list[int]:
    """Decreasing chosen-reward per unit of (choices + plays/K); null policies last."""
    return sorted(range(len(stats)), key=lambda i: (-maxmab_ratio(stats[i], K), i))


def solve_maxmab(arms: Sequence[ArmModel], K: int, T: int, eps: float = 0.05) -> LambdaSolution:
    """Multiplier search with consumption ``choices + plays/K`` and target ``2T``."""

    def oracle(lam: float) -> RelaxationPoint:
        pols, val, cons = [], 0.0, 0.0
        for m in arms:
            res = maxmab_gain_dp(m, lam, K)
            pols.append(res.policy)
            val += res.Q
            cons += maxmab_consumption(policy_stats(m, res.policy), K)
        return RelaxationPoint(lam, val, cons, tuple(pols))

    return lagrangian_bisection(oracle, 2.0 * T, eps, len(arms))


# ---------------------------------------------------------------------------
# truncated two-level solution


def truncate_policy(model: ArmModel, policy: SingleArmPolicy, max_plays: int) -> SingleArmPolicy:
    """Stop at every state at depth ``max_plays`` or deeper."""
    acts = np.where(model.depth < max_plays, policy.actions, STOP).astype(np.int8)
    return SingleArmPolicy(acts, policy.choose, policy.lam, policy.threshold)


def _truncate_mixed(model: ArmModel, p: MixedPolicy, max_plays: int) -> MixedPolicy:
    return MixedPolicy(tuple((w, truncate_policy(model, c, max_plays)) for w, c in p.components))


@dataclass(frozen=True, eq=False)
class TruncatedSolution:
    """Policies ``L_i`` (subsampling with probability ``alpha`` applied by the executor).

    ``choices`` and ``plays`` are expectations that already include the
    ``alpha`` factor.
    """

    policies: tuple[MixedPolicy, ...]
    lambda1_minus: float
    lambda1_plus: float
    a: float
    alpha: float
    beta: float
    horizon: int
    dual_bound: float
    choices: float
    plays: float
    reward: float
    inner: tuple[LambdaSolution, LambdaSolution]
    iterations: int

    def thresholds(self, i: int) -> tuple[float, ...]:
        return tuple(c.threshold for _, c in self.policies[i].components)


def _inner_solve(arms: Sequence[ArmModel], lam1: float, K: int, T: int, eps: float,
                 duals: list[float]) -> LambdaSolution:
    """Plays-only search at a fixed choice price ``lam1``."""

    def oracle(lam2: float) -> RelaxationPoint:
        pols, val, cons = [], 0.0, 0.0
        for m in arms:
            res = threshold_gain_dp(m, lam1, lam2)
            pols.append(res.policy)
            val += res.Q
            cons += policy_stats(m, res.policy).T_plays
        # any pair of prices gives an upper bound on the relaxation
        duals.append(lam1 * T + lam2 * K * T + val)
        return RelaxationPoint(lam2, val, cons, tuple(pols))

    return lagrangian_bisection(oracle, float(K * T), eps, len(arms))


def _merge(a: float, p: MixedPolicy, q: MixedPolicy) -> MixedPolicy:
    if a >= 1.0:
        return p
    if a <= 0.0:
        return q
    comps = [(a * w, c) for w, c in p.components] + [((1 - a) * w, c) for w, c in q.components]
    comps = [(w, c) for w, c in comps if w > 0]
    total = sum(w for w, _ in comps)
    return MixedPolicy(tuple((w / total, c) for w, c in comps))


def solve_maxmab_truncated(arms: Sequence[ArmModel], K: int, T: int, eps: float = 0.05,
                           alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                           max_iter: int = 60) -> TruncatedSolution:
    """Two-level search: choice price ``lam1`` outside, play price inside.

    For each ``lam1`` the plays-only relaxation is solved, its policies are
    cut to ``floor(beta*T)`` plays, and expected choices are scaled by
    ``alpha``.  ``lam1`` is bisected until the choices bracket
    ``alpha*beta*T`` and the two bracketing collections are mixed.
    """
    if not (0 < alpha <= 1 and 0 < beta <= 1):
        raise ValueError("alpha and beta must lie in (0, 1]")
    eps_inner = eps / 3.0
    H = max(1, int(math.floor(beta * T + 1e-12)))
    target = alpha * beta * T
    duals: list[float] = []

    def at(lam1: float):
        inner = _inner_solve(arms, lam1, K, T, eps_inner, duals)
        pols = tuple(_truncate_mixed(m, p, H) for m, p in zip(arms, inner.policies))
        st = [policy_stats(m, p) for m, p in zip(arms, pols)]
        ch = alpha * sum(float(s.N.sum()) for s in st)
        return inner, pols, st, ch

    lo = (0.0,) + at(0.0)
    if lo[4] <= target:
        hi = lo
        a = 1.0
        it = 0
    else:
        vmax = max(float(m.values.max()) for m in arms)
        hi = (vmax,) + at(vmax)
        gap = eps_inner * vmax / (2.0 * len(arms) * T)
        it = 0
        while hi[0] - lo[0] > gap and it < max_iter:
            it += 1
            mid_lam = 0.5 * (lo[0] + hi[0])
            mid = (mid_lam,) + at(mid_lam)
            if mid[4] > target:
                lo = mid
            else:
                hi = mid
        a = (target - hi[4]) / (lo[4] - hi[4])
    pols = tuple(_merge(a, p, q) for p, q in zip(lo[2], hi[2]))
    st = [policy_stats(m, p) for m, p in zip(arms, pols)]
    choices = alpha * sum(float(s.N.sum()) for s in st)
    plays = alpha * sum(s.T_plays for s in st)
    reward = alpha * sum(s.R_choice for s in st)
    return TruncatedSolution(pols, lo[0], hi[0], float(a), alpha, beta, H, float(min(duals)),
                             choices, plays, reward, (lo[1], hi[1]), it)


# ---------------------------------------------------------------------------
# executors


class SequentialRunner:
    """Plays within a slot one at a time; the slot closes on a choice or after ``K`` plays.

    The slot pays the largest value observed in it.
    """

    def __init__(self, arms: Sequence[ArmModel], policies: Sequence[SingleArmPolicy | MixedPolicy],
                 K: int, T: int, alpha: float = 0.5, order: Sequence[int] | None = None):
        if len(arms) != len(policies):
            raise ValueError("need one policy per arm")
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.arms = list(arms)
        self.policies = [as_mixed(p) for p in policies]
        for p in self.policies:
            for _, c in p.components:
                if c.choose is None:
                    raise ValueError("sequential executor needs policies with a choice table")
        self.K, self.T, self.alpha = int(K), int(T), float(alpha)
        self.n_arms = len(arms)
        self.plays_per_arm = self.T
        self.stats = [policy_stats(m, p) for m, p in zip(self.arms, self.policies)]
        self.order = (order_by_choice_ratio(self.stats, self.K) if order is None
                      else check_permutation(order, self.n_arms))
        self._cum = [cumulative_probs(m) for m in self.arms]

    def episode(self, u: EpisodeUniforms) -> EpisodeResult:
        n = self.n_arms
        pols = [self.policies[i].pick(u.coin[i]) for i in range(n)]
        quit_ = [not (u.keep[i] < self.alpha) for i in range(n)]
        state = [0] * n
        count = [0] * n
        total = 0.0
        trace: list[tuple[int, int, float, bool]] = []
        slot_rewards = []
        for t in range(self.T):
            plays = 0
            best = 0.0
            seen: list[float] = []
            for i in self.order:
                if plays >= self.K:
                    break
                if quit_[i]:
                    continue
                s = state[i]
                p = pols[i]
                if p.actions[s] != PLAY:
                    quit_[i] = True
                    continue
                m = self.arms[i]
                j = outcome_index(self._cum[i][s], u.plays[i, count[i]])
                q = float(m.values[j])
                chosen = bool(p.choose[s, j])
                trace.append((t, i, q, chosen))
                seen.append(q)
                best = max(best, q)
                state[i] = int(m.child[s, j])
                count[i] += 1
                plays += 1
                if chosen:
                    break
            assert plays <= self.K
            assert best == (max(seen) if seen else 0.0)
            slot_rewards.append(best)
            total += best
        return EpisodeResult(total, np.array(count), trace,
                             info={"slot_rewards": slot_rewards, "order": list(self.order)})

    def __call__(self, u: Uniforms) -> np.ndarray:
        return np.array([self.episode(u.row(e)).total_reward for e in range(len(u))])


def classify_step(probs: Sequence[float]) -> tuple[str, list[int]]:
    """Which positions of the current set to play, given their above-threshold probabilities.

    A position with probability at least 1/3 is played alone (the first such
    in priority order).  Otherwise everything is played if the sum is at
    most 2/3, and failing that the shortest prefix whose sum reaches 1/3,
    which then stays below 2/3.
    """
    p = [float(x) for x in probs]
    if not p:
        return FULL, []
    for k, x in enumerate(p):
        if x >= 1.0 / 3.0:
            return STALL, [k]
    if sum(p) <= 2.0 / 3.0 + 1e-12:
        return FULL, list(range(len(p)))
    acc = 0.0
    for k, x in enumerate(p):
        acc += x
        if acc >= 1.0 / 3.0:
            assert acc <= 2.0 / 3.0 + 1e-12, "throttling prefix overshoots 2/3"
            return THROTTLE, list(range(k + 1))
    raise AssertionError("throttling prefix never reached 1/3")  # pragma: no cover


class ThrottledRunner:
    """Simultaneous plays of the current set, throttled by above-threshold probability."""

    def __init__(self, arms: Sequence[ArmModel], policies: Sequence[SingleArmPolicy | MixedPolicy],
                 K: int, T: int, alpha: float = 1.0, order: Sequence[int] | None = None):
        if len(arms) != len(policies):
            raise ValueError("need one policy per arm")
        self.arms = list(arms)
        self.policies = [as_mixed(p) for p in policies]
        for p in self.policies:
            for _, c in p.components:
                if c.choose is None or c.threshold is None:
                    raise ValueError("throttled executor needs threshold policies")
        self.K, self.T, self.alpha = int(K), int(T), float(alpha)
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.n_arms = len(arms)
        self.plays_per_arm = self.T
        self.stats = [policy_stats(m, p) for m, p in zip(self.arms, self.policies)]
        self.order = (order_by_choice_ratio(self.stats, self.K) if order is None
                      else check_permutation(order, self.n_arms))
        self._cum = [cumulative_probs(m) for m in self.arms]
        # probability that a play from each state beats the threshold, per component
        self._above = [[(m.probs * c.choose).sum(axis=1) for _, c in p.components]
                       for m, p in zip(self.arms, self.policies)]

    def episode(self, u: EpisodeUniforms) -> EpisodeResult:
        n = self.n_arms
        comp = [int(min(np.searchsorted(p.cumulative, u.coin[i], side="right"), len(p.components) - 1))
                for i, p in enumerate(self.policies)]
        pols = [self.policies[i].components[comp[i]][1] for i in range(n)]
        ready = [i for i in self.order if u.keep[i] < self.alpha]
        current: list[int] = []
        state = [0] * n
        count = [0] * n
        total = 0.0
        trace: list[tuple[int, int, float, bool]] = []
        steps: list[tuple[str, float]] = []
        for t in range(self.T):
            current = [i for i in current if pols[i].actions[state[i]] == PLAY]
            while len(current) < self.K and ready:
                i = ready.pop(0)
                if pols[i].actions[0] == PLAY:
                    current.append(i)
            if not current:
                break
            current.sort(key=self.order.index)
            pr = [float(self._above[i][comp[i]][state[i]]) for i in current]
            kind, pos = classify_step(pr)
            s_sel = sum(pr[k] for k in pos)
            if kind == FULL:
                assert s_sel <= 2 / 3 + 1e-12 and max(pr) < 1 / 3
            elif kind == STALL:
                assert pr[pos[0]] >= 1 / 3 and len(pos) == 1
            else:
                assert 1 / 3 <= s_sel <= 2 / 3 + 1e-12 and max(pr) < 1 / 3
            steps.append((kind, s_sel))
            obs = []
            for k in pos:
                i = current[k]
                m = self.arms[i]
                s = state[i]
                j = outcome_index(self._cum[i][s], u.plays[i, count[i]])
                obs.append((float(m.values[j]), i, j, s))
                state[i] = int(m.child[s, j])
                count[i] += 1
            best = max(q for q, _, _, _ in obs)
            win = next(k for k, o in enumerate(obs) if o[0] == best)
            for k, (q, i, j, s) in enumerate(obs):
                trace.append((t, i, q, k == win and bool(pols[i].choose[s, j])))
            total += best
        return EpisodeResult(total, np.array(count), trace, info={"steps": steps, "order": list(self.order)})

    def __call__(self, u: Uniforms) -> np.ndarray:
        return np.array([self.episode(u.row(e)).total_reward for e in range(len(u))])


def run_maxmab_sequential(arms: Sequence[ArmModel], policies: Sequence[SingleArmPolicy | MixedPolicy],
                          K: int, T: int, rng_stream: EpisodeUniforms, alpha: float = 0.5,
                          order: Sequence[int] | None = None) -> EpisodeResult:
    return SequentialRunner(arms, policies, K, T, alpha, order).episode(rng_stream)


def run_throttled(arms: Sequence[ArmModel], policies: Sequence[SingleArmPolicy | MixedPolicy],
                  K: int, T: int, rng_stream: EpisodeUniforms, alpha: float = 1.0,
                  order: Sequence[int] | None = None) -> EpisodeResult:
    """One episode; thresholds are read from the policies' components."""
    return ThrottledRunner(arms, policies, K, T, alpha, order).episode(rng_stream)


# ---------------------------------------------------------------------------
# only the slot winner pays


def round_down_pow2(values: Sequence[float]) -> np.ndarray:
    """Largest power of two not above each positive value; zero stays zero."""
    v = np.asarray(values, dtype=float)
    if np.any(v < 0):
        raise ValueError("values must be non-negative")
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = np.exp2(np.floor(np.log2(v[pos])))
    return out


def only_max_thresholds(values: Sequence[float], lam1: float) -> tuple[float, float | None]:
    """Choice thresholds of the two cases: ``lam1`` and the least value at least ``2*lam1``."""
    big = [float(q) for q in values if q >= 2 * lam1]
    return float(lam1), (min(big) if big else None)


@dataclass(frozen=True, eq=False)
class OnlyMaxPolicy:
    """Threshold policy over (state, amount already charged by choices)."""

    threshold: float | None
    value: float
    play: dict
    choices: float
    plays: float


def _charged_dp(model: ArmModel, budget: float, lam1: float, play_price: float,
                qv: np.ndarray, threshold: float | None, optimal: bool):
    """Best value of sum over choices of (q - lam1) minus play_price per play.

    Choices are charged to ``budget``; a value is only chosen if it still
    fits.  ``optimal`` lets the DP decide each choice; otherwise a value is
    chosen exactly when it is at least ``threshold`` and fits.
    """
    memo: dict = {}

    def V(u: int, spent: float) -> float:
        key = (u, spent)
        if key in memo:
            return memo[key][0]
        best, act = 0.0, None
        if model.playable[u]:
            cont = -play_price
            rule = []
            for j, p in enumerate(model.probs[u]):
                if p <= 0:
                    rule.append(False)
                    continue
                c = int(model.child[u, j])
                q = float(qv[j])
                fits = spent + q <= budget + 1e-12
                skip = V(c, spent)
                if optimal:
                    take = (q - lam1) + V(c, spent + q) if fits else -math.inf
                    ch = take > skip
                else:
                    ch = threshold is not None and q >= threshold and fits
                rule.append(bool(ch))
                cont += p * ((q - lam1) + V(c, spent + q) if ch else skip)
            if cont > best:
                best, act = cont, tuple(rule)
        memo[key] = (best, act)
        return best

    val = V(0, 0.0)
    return val, memo


def _charged_stats(model: ArmModel, memo: dict) -> tuple[float, float]:
    """Expected choices and plays of the policy stored in ``memo``."""
    reach: dict = {(0, 0.0): 1.0}
    choices = plays = 0.0
    for layer in model.layers:
        layer_set = set(int(x) for x in layer)
        for key in sorted(k for k in list(reach) if k[0] in layer_set):
            w = reach.pop(key)
            act = memo.get(key, (0.0, None))[1]
            if act is None:
                continue
            u, spent = key
            plays += w
            for j, p in enumerate(model.probs[u]):
                if p <= 0:
                    continue
                c = int(model.child[u, j])
                nk = (c, spent + float(model.values[j])) if act[j] else (c, spent)
                if act[j]:
                    choices += w * p
                reach[nk] = reach.get(nk, 0.0) + w * p
    return choices, plays


def only_max_reduction(model: ArmModel, B: float, lam1: float, play_price: float = 0.0,
                       round_values: bool = True) -> tuple[OnlyMaxPolicy, OnlyMaxPolicy]:
    """The two threshold policies whose better one is within 4x of any winner-pays policy.

    Values are rounded down to powers of two for charging and reward while
    the posterior keeps the original outcomes.  The model must not carry
    its own budget; ``B`` is charged by choices only.
    """
    if model.budget is not None:
        raise ValueError("pass an unbudgeted model; the budget is charged by choices here")
    if B < 0 or lam1 < 0:
        raise ValueError("B and lam1 must be non-negative")
    qv = round_down_pow2(model.values) if round_values else np.asarray(model.values, dtype=float)
    nu1, nu2 = only_max_thresholds(sorted(set(qv.tolist())), lam1)
    out = []
    for nu in (nu1, nu2):
        val, memo = _charged_dp(model, B, lam1, play_price, qv, nu, optimal=False)
        ch, pl = _charged_stats(model, memo)
        out.append(OnlyMaxPolicy(nu, val, {k: v[1] for k, v in memo.items()}, ch, pl))
    return out[0], out[1]


def p_feasible_opt(model: ArmModel, B: float, lam1: float, play_price: float = 0.0,
                   round_values: bool = True) -> float:
    """Best winner-pays single-arm value at choice price ``lam1`` (exact, small models only)."""
    qv = round_down_pow2(model.values) if round_values else np.asarray(model.values, dtype=float)
    val, _ = _charged_dp(model, B, lam1, play_price, qv, None, optimal=True)
    return val

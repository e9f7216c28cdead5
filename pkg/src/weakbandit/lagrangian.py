"""Per-arm Lagrangian programs and the coupled multiplier search.

Relaxing the coupling constraint ("total plays at most K*T" and its
variants) with a per-unit price ``lam`` splits the joint problem into one
small dynamic program per arm.  The search below tunes ``lam`` until the
summed consumption brackets the target and mixes the two bracketing
single-arm policies so the constraint holds with equality in expectation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence, Union

import numpy as np

from .statespace import ArmModel

logger = logging.getLogger(__name__)

__all__ = [
    "STOP",
    "PLAY",
    "CHOOSE_FINAL",
    "SingleArmPolicy",
    "MixedPolicy",
    "PolicyStats",
    "GainResult",
    "ArmResponse",
    "RelaxationPoint",
    "LambdaSolution",
    "NonMonotoneOracleError",
    "gain_dp",
    "policy_stats",
    "as_mixed",
    "base_response",
    "lagrangian_bisection",
    "coupled_lagrangian_search",
    "solve_base",
    "gittins_index",
]

STOP, PLAY, CHOOSE_FINAL = 0, 1, 2


class NonMonotoneOracleError(RuntimeError):
    """Raised when the relaxation oracle violates the monotonicity the search relies on."""


@dataclass(frozen=True, eq=False)
class SingleArmPolicy:
    """Deterministic single-arm policy.

    ``actions[u]`` is one of STOP, PLAY, CHOOSE_FINAL.  ``choose[u, j]``
    (optional) says whether the value ``values[j]`` seen after playing ``u``
    is claimed as the slot's reward; only threshold policies use it.
    """

    actions: np.ndarray
    choose: np.ndarray | None = None
    lam: float = math.nan
    threshold: float | None = None

    def __post_init__(self) -> None:
        self.actions.setflags(write=False)
        if self.choose is not None:
            self.choose.setflags(write=False)

    @classmethod
    def null(cls, model: ArmModel) -> "SingleArmPolicy":
        return cls(np.zeros(model.n_states, dtype=np.int8))

    @classmethod
    def always_play(cls, model: ArmModel) -> "SingleArmPolicy":
        return cls(np.where(model.playable, PLAY, STOP).astype(np.int8))


@dataclass(frozen=True, eq=False)
class MixedPolicy:
    """Randomization over deterministic policies, resolved once per episode.

    ``components`` holds ``(weight, policy)`` pairs; weights sum to one.
    """

    components: tuple[tuple[float, SingleArmPolicy], ...]

    def __post_init__(self) -> None:
        ws = [w for w, _ in self.components]
        if not ws or min(ws) < -1e-12 or abs(sum(ws) - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must be non-negative and sum to 1 (got {ws})")

    @classmethod
    def two_point(cls, minus: SingleArmPolicy, plus: SingleArmPolicy, a: float) -> "MixedPolicy":
        """Play ``minus`` with probability ``a`` and ``plus`` otherwise."""
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"mixing probability must lie in [0, 1] (got {a})")
        if a == 1.0:
            return cls(((1.0, minus),))
        if a == 0.0:
            return cls(((1.0, plus),))
        return cls(((a, minus), (1.0 - a, plus)))

    @property
    def cumulative(self) -> np.ndarray:
        c = np.cumsum([w for w, _ in self.components])
        c[-1] = 1.0
        return c

    def pick(self, coin: float) -> SingleArmPolicy:
        """Component selected by a uniform ``coin`` in [0, 1)."""
        k = int(np.searchsorted(self.cumulative, coin, side="right"))
        return self.components[min(k, len(self.components) - 1)][1]


AnyPolicy = Union[SingleArmPolicy, MixedPolicy]


def as_mixed(p: AnyPolicy) -> MixedPolicy:
    return p if isinstance(p, MixedPolicy) else MixedPolicy(((1.0, p),))


@dataclass(frozen=True, eq=False)
class PolicyStats:
    """Expectations of a single-arm policy.

    ``R``: reward summed over plays; ``T_plays``: number of plays;
    ``N[j]``: expected number of slots in which ``values[j]`` is claimed;
    ``I``: probability of a final choice; ``R_final``: expected posterior
    mean of the finally chosen state; ``w``, ``z``: per-state reach and play
    probabilities.
    """

    R: float
    T_plays: float
    N: np.ndarray
    I: float
    R_final: float
    R_choice: float
    w: np.ndarray
    z: np.ndarray

    @property
    def ratio(self) -> float:
        return self.R / self.T_plays if self.T_plays > 0 else -math.inf


def _forward(model: ArmModel, pol: SingleArmPolicy) -> PolicyStats:
    S = model.n_states
    acts = pol.actions
    if acts.shape != (S,):
        raise ValueError(f"policy has {acts.shape[0]} actions but the model has {S} states")
    if np.any((acts == PLAY) & ~model.playable):
        bad = np.flatnonzero((acts == PLAY) & ~model.playable)[:5]
        raise ValueError(f"policy plays unplayable states {bad.tolist()}")
    if pol.choose is not None and pol.choose.shape != model.probs.shape:
        raise ValueError("choice table shape does not match the model")
    w = np.zeros(S + 1)
    w[0] = 1.0
    z = np.zeros(S)
    N = np.zeros(model.values.shape[0])
    cp = model.child_padded
    for layer in model.layers:
        zl = w[layer] * (acts[layer] == PLAY)
        z[layer] = zl
        flow = zl[:, None] * model.probs[layer]
        if pol.choose is not None:
            N += (flow * pol.choose[layer]).sum(axis=0)
        np.add.at(w, cp[layer].ravel(), flow.ravel())
    w = w[:S]
    fin = acts == CHOOSE_FINAL
    return PolicyStats(
        R=float(z @ model.reward),
        T_plays=float(z.sum()),
        N=N,
        I=float(w[fin].sum()),
        R_final=float(w[fin] @ model.reward[fin]),
        R_choice=float(N @ model.values),
        w=w,
        z=z,
    )


def policy_stats(model: ArmModel, policy: AnyPolicy) -> PolicyStats:
    """Forward pass from the root; mixed policies give the weighted combination."""
    if isinstance(policy, SingleArmPolicy):
        return _forward(model, policy)
    parts = [(wt, _forward(model, p)) for wt, p in policy.components]
    if len(parts) == 1:
        return parts[0][1]

    def mix(attr: str) -> Any:
        return sum(wt * getattr(s, attr) for wt, s in parts)

    return PolicyStats(
        R=float(mix("R")), T_plays=float(mix("T_plays")), N=mix("N"), I=float(mix("I")),
        R_final=float(mix("R_final")), R_choice=float(mix("R_choice")), w=mix("w"), z=mix("z"),
    )


@dataclass(frozen=True, eq=False)
class GainResult:
    gain: np.ndarray
    policy: SingleArmPolicy
    Q: float


def _require_valid(model: ArmModel) -> None:
    rep = model.validation
    if not rep.passed:
        raise ValueError(
            f"arm model fails the martingale check (max deviation {rep.max_deviation:.3g} "
            f"at states {list(rep.offending_states[:5])})"
        )


def gain_dp(model: ArmModel, lam: float) -> GainResult:
    """Best value of (reward - lam * plays) for one arm, with its policy.

    Play at ``u`` iff the continuation gain is strictly positive.
    """
    if not lam >= 0:
        raise ValueError(f"lam must be non-negative (got {lam})")
    _require_valid(model)
    S = model.n_states
    g = np.zeros(S + 1)
    acts = np.zeros(S, dtype=np.int8)
    cp = model.child_padded
    for layer in reversed(model.layers):
        cont = model.reward[layer] - lam + (model.probs[layer] * g[cp[layer]]).sum(axis=1)
        play = model.playable[layer] & (cont > 0)
        g[layer] = np.where(play, cont, 0.0)
        acts[layer] = play
    return GainResult(g[:S], SingleArmPolicy(acts, lam=float(lam)), float(g[0]))


# ---------------------------------------------------------------------------
# multiplier search


@dataclass(frozen=True)
class ArmResponse:
    policy: SingleArmPolicy
    value: float
    consumption: float


@dataclass(frozen=True, eq=False)
class RelaxationPoint:
    """Relaxed optimum at one multiplier: summed value and consumption."""

    lam: float
    value: float
    consumption: float
    policies: tuple[SingleArmPolicy, ...]
    extra: Any = None


@dataclass(frozen=True, eq=False)
class LambdaSolution:
    lambda_minus: float
    lambda_plus: float
    a: float
    policies: tuple[MixedPolicy, ...]
    dual_bound: float
    consumption: float
    target_rhs: float
    iterations: int
    minus: RelaxationPoint
    plus: RelaxationPoint
    trace: tuple[tuple[float, float, float], ...] = field(default=(), repr=False)
    mixed_value: float = math.nan

    def summary(self) -> dict[str, Any]:
        return {
            "lambda_minus": self.lambda_minus,
            "lambda_plus": self.lambda_plus,
            "a": self.a,
            "dual_bound": self.dual_bound,
            "mixed_value": self.mixed_value,
            "consumption": self.consumption,
            "target_rhs": self.target_rhs,
            "iterations": self.iterations,
        }


def lagrangian_bisection(
    oracle: Callable[[float], RelaxationPoint],
    target_rhs: float,
    eps: float,
    n_arms: int,
    lam_hi: float | None = None,
    *,
    check_consumption: bool = True,
    max_iter: int = 200,
) -> LambdaSolution:
    """Bisect on the multiplier of a single coupling constraint.

    ``oracle(lam)`` returns the summed relaxed value and consumption.  The
    bracket keeps consumption above ``target_rhs`` at the lower end and at
    most ``target_rhs`` at the upper end.  The dual value is the matching
    mixture of ``lam * target_rhs + value`` at the two ends; every probed
    multiplier also gives a weak-duality bound, and the smallest of those
    is reported as ``dual_bound``.
    """
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1] (got {eps})")
    if not target_rhs > 0:
        raise ValueError("target_rhs must be positive")
    trace: list[tuple[float, float, float]] = []

    def ask(lam: float) -> RelaxationPoint:
        pt = oracle(lam)
        trace.append((lam, pt.value, pt.consumption))
        return pt

    lo = ask(0.0)

    def finish(m: RelaxationPoint, p: RelaxationPoint, a: float, it: int) -> LambdaSolution:
        pols = tuple(MixedPolicy.two_point(pm, pp, a) for pm, pp in zip(m.policies, p.policies))
        mixed = a * (m.lam * target_rhs + m.value) + (1 - a) * (p.lam * target_rhs + p.value)
        dual = min(min(lam * target_rhs + v for lam, v, _ in trace), mixed)
        cons = a * m.consumption + (1 - a) * p.consumption
        return LambdaSolution(m.lam, p.lam, a, pols, float(dual), float(cons), float(target_rhs),
                              it, m, p, tuple(trace), float(mixed))

    if lo.consumption <= target_rhs:
        return finish(lo, lo, 1.0, 0)

    M = lo.value
    hi_lam = 2.0 * M if lam_hi is None else float(lam_hi)
    hi = ask(hi_lam)
    if hi.consumption > target_rhs:
        raise NonMonotoneOracleError(
            f"consumption {hi.consumption} at lam_hi={hi_lam} still exceeds target {target_rhs}"
        )
    gap = eps * M / (2.0 * n_arms * target_rhs)
    slack = 1e-9 * max(1.0, abs(M), target_rhs)
    it = 0
    while hi.lam - lo.lam > gap and it < max_iter:
        it += 1
        mid = ask(0.5 * (lo.lam + hi.lam))
        if mid.value > lo.value + slack or mid.value < hi.value - slack:
            raise NonMonotoneOracleError(f"relaxed value not monotone at lam={mid.lam}")
        if check_consumption and (
            mid.consumption > lo.consumption + slack or mid.consumption < hi.consumption - slack
        ):
            raise NonMonotoneOracleError(f"consumption not monotone at lam={mid.lam}")
        if mid.consumption > target_rhs:
            lo = mid
        else:
            hi = mid
    a = (target_rhs - hi.consumption) / (lo.consumption - hi.consumption)
    logger.debug("bisection done: lam in [%g, %g], a=%g after %d steps", lo.lam, hi.lam, a, it)
    return finish(lo, hi, float(a), it)


def coupled_lagrangian_search(
    arms: Sequence[ArmModel],
    per_arm_oracle: Callable[[ArmModel, float], ArmResponse],
    target_rhs: float,
    eps: float = 0.05,
    lam_hi: float | None = None,
) -> LambdaSolution:
    """Multiplier search when the relaxation separates across arms."""

    def oracle(lam: float) -> RelaxationPoint:
        rs = [per_arm_oracle(arm, lam) for arm in arms]
        return RelaxationPoint(
            lam,
            float(sum(r.value for r in rs)),
            float(sum(r.consumption for r in rs)),
            tuple(r.policy for r in rs),
        )

    return lagrangian_bisection(oracle, target_rhs, eps, len(arms), lam_hi)


def base_response(model: ArmModel, lam: float) -> ArmResponse:
    res = gain_dp(model, lam)
    return ArmResponse(res.policy, res.Q, _forward(model, res.policy).T_plays)


def solve_base(arms: Sequence[ArmModel], K: int, T: int, eps: float = 0.05) -> LambdaSolution:
    """Relaxation with at most ``K*T`` expected plays in total."""
    return coupled_lagrangian_search(arms, base_response, float(K * T), eps)


def gittins_index(model: ArmModel, u: int, tol: float = 1e-10) -> float:
    """Largest per-play charge at which playing on from ``u`` still pays."""
    if not model.playable[u]:
        raise ValueError(f"state {u} is not playable")
    lo, hi = 0.0, float(model.reward.max())
    if gain_dp(model, lo).gain[u] <= 0:
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gain_dp(model, mid).gain[u] > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)

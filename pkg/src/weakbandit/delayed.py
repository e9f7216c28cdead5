"""Delayed feedback: block policies, their execution wrappers and the scheduler.

Convention: the outcome of a play made at slot ``s`` on an arm with delay
``d`` can be used by decisions at slots ``s + d + 1`` and later, so
``d = 0`` is the ordinary bandit.  A block policy works in blocks of
``2d + 1`` slots: it makes up to ``d + 1`` plays at the start of a block,
and the block ends once their outcomes are known.

The relaxation is solved over block policies with a per-play price, exactly
like the base problem.  Two execution wrappers reduce how much wall-clock
time a block policy needs:

* delay-free switching: once the policy has made ``r * d`` plays, a few
  extra plays build an outcome buffer, after which every play consumes the
  oldest buffered outcome and no waiting is needed;
* compaction: a small block of ``x`` plays is executed as ``13 x`` real
  plays whose surplus outcomes later stand in for up to six more blocks of
  the same size class at no time cost; a large block switches to
  delay-free mode.

The scheduler plays, in every slot, the first ``K`` ready policies in
priority order.  A policy is ready when it has a play it can make now.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lagrangian import (
    LambdaSolution,
    MixedPolicy,
    PolicyStats,
    RelaxationPoint,
    lagrangian_bisection,
)
from .scheduler import check_permutation, order_by_ratio
from .sim import EpisodeResult, EpisodeUniforms, Uniforms, cumulative_probs
from .statespace import ArmModel

logger = logging.getLogger(__name__)

__all__ = [
    "BlockModel",
    "BlockPolicy",
    "BlockGainResult",
    "DelayedArmPolicy",
    "DelayedSolution",
    "DelayedRunner",
    "RegimeParams",
    "block_horizon",
    "block_model",
    "block_gain_dp",
    "block_stats",
    "small_regime_params",
    "large_regime_params",
    "large_regime_ok",
    "choose_regime",
    "delay_free_transform",
    "block_compaction_transform",
    "solve_delayed",
    "run_delayed",
    "delayed_runner",
]

PLAIN, DELAY_FREE, COMPACTED = "block", "delay_free", "compacted"


def block_horizon(T: int, delta: int) -> int:
    """Horizon of the block relaxation: doubled when there is any delay."""
    return 2 * T if delta > 0 else T


@dataclass(frozen=True, eq=False)
class BlockModel:
    base: ArmModel
    delta: int
    T: int
    ell_max: int
    block_count: int
    ell_avail: np.ndarray

    @property
    def block_length(self) -> int:
        return 2 * self.delta + 1

    def reward(self, sigma: int, ell: int) -> float:
        """Expected reward of ``ell`` plays from ``sigma`` without feedback in between."""
        return ell * float(self.base.reward[sigma])

    def transition(self, sigma: int, ell: int) -> np.ndarray:
        """Distribution of the state after ``ell`` plays from ``sigma``."""
        if ell > self.ell_avail[sigma] and ell > 0:
            raise ValueError(f"{ell} plays are not available from state {sigma}")
        v = np.zeros(self.base.n_states)
        v[sigma] = 1.0
        for _ in range(ell):
            v = _push(self.base, v)
        return v


def _safe_plays(model: ArmModel) -> np.ndarray:
    """Number of consecutive plays that are legal from each state whatever the outcomes."""
    S = model.n_states
    safe = np.zeros(S + 1, dtype=np.int64)
    big = np.iinfo(np.int64).max // 4
    cp = model.child_padded
    for layer in reversed(model.layers):
        kids = np.where(model.child[layer] >= 0, safe[cp[layer]], big)
        safe[layer] = np.where(model.playable[layer], 1 + kids.min(axis=1), 0)
    return safe[:S]


def block_model(model: ArmModel, delta: int | None = None, T: int | None = None,
                ell_max: int | None = None, horizon: int | None = None) -> BlockModel:
    """Block quantities over ``block_horizon(T, delta)`` slots (or ``horizon`` if given).

    Without an explicit horizon the block count is never below the number of
    feedback-free bursts a real ``T``-slot policy can make, which keeps the
    relaxation an upper bound for short horizons.
    """
    delta = model.delay if delta is None else int(delta)
    if delta < 0:
        raise ValueError("delta must be non-negative")
    T = model.horizon if T is None else int(T)
    ell_max = delta + 1 if ell_max is None else int(ell_max)
    if ell_max < 1:
        raise ValueError("ell_max must be at least 1")
    if horizon is None:
        # any real policy splits into ceil(T/(delta+1)) feedback-free bursts
        bc = max(block_horizon(T, delta) // (2 * delta + 1), -(-T // (delta + 1)))
    else:
        bc = int(horizon) // (2 * delta + 1)
    avail = np.minimum(_safe_plays(model), ell_max)
    avail.setflags(write=False)
    return BlockModel(model, delta, T, ell_max, bc, avail)


def _push(model: ArmModel, v: np.ndarray) -> np.ndarray:
    """One play forward: mass at each state moves to its children."""
    S = model.n_states
    flow = v[:, None] * model.probs
    out = np.bincount(model.child_padded.ravel(), weights=flow.ravel(), minlength=S + 1)
    return out[:S]


@dataclass(frozen=True, eq=False)
class BlockPolicy:
    """``plays[b, s]``: plays to make in block ``b`` from state ``s`` (0 means quit)."""

    plays: np.ndarray
    lam: float = math.nan

    def __post_init__(self) -> None:
        self.plays.setflags(write=False)


@dataclass(frozen=True, eq=False)
class BlockGainResult:
    policy: BlockPolicy
    Q: float
    gain0: np.ndarray


def block_gain_dp(bm: BlockModel, lam: float, K: int = 1) -> BlockGainResult:
    """Backward induction over (block index, state).

    ``Gain(s, b) = max(0, max_l l*(r_s - lam) + E[Gain(s', b+1)])`` where the
    expectation is over ``l`` plays without feedback.  Ties prefer quitting,
    then fewer plays.  Idle blocks are never useful, since moving later plays
    earlier costs nothing, so they are not offered.  ``K`` only enters
    through the coupling target and is accepted for symmetry.
    """
    if not lam >= 0:
        raise ValueError(f"lam must be non-negative (got {lam})")
    m = bm.base
    S = m.n_states
    cp = m.child_padded
    gain = np.zeros(S + 1)
    table = np.zeros((bm.block_count, S), dtype=np.int8)
    base = m.reward - lam
    for b in range(bm.block_count - 1, -1, -1):
        best = np.zeros(S)
        arg = np.zeros(S, dtype=np.int8)
        h = gain
        for ell in range(1, bm.ell_max + 1):
            h = np.append((m.probs * h[cp]).sum(axis=1), 0.0)
            val = base * ell + h[:S] if ell > 1 else base + h[:S]
            better = (bm.ell_avail >= ell) & (val > best)
            best = np.where(better, val, best)
            arg[better] = ell
        table[b] = arg
        gain = np.append(best, 0.0)
    return BlockGainResult(BlockPolicy(table, float(lam)), float(gain[0]), gain[:S])


def block_stats(bm: BlockModel, policy: BlockPolicy | MixedPolicy) -> PolicyStats:
    """Forward pass over blocks; ``z`` holds plays attributed to each state."""
    if isinstance(policy, MixedPolicy):
        parts = [(w, block_stats(bm, p)) for w, p in policy.components]
        if len(parts) == 1:
            return parts[0][1]
        return PolicyStats(
            R=float(sum(w * s.R for w, s in parts)), T_plays=float(sum(w * s.T_plays for w, s in parts)),
            N=np.zeros(0), I=0.0, R_final=0.0, R_choice=0.0,
            w=sum(w * s.w for w, s in parts), z=sum(w * s.z for w, s in parts),
        )
    m = bm.base
    S = m.n_states
    if policy.plays.shape != (bm.block_count, S):
        raise ValueError("block policy shape does not match the block model")
    x = np.zeros(S)
    x[0] = 1.0
    w = np.zeros(S)
    z = np.zeros(S)
    for b in range(bm.block_count):
        w += x
        arg = policy.plays[b]
        nxt = np.zeros(S)
        for ell in range(1, bm.ell_max + 1):
            sel = arg == ell
            if not sel.any():
                continue
            v = np.where(sel, x, 0.0)
            z += v * ell if ell > 1 else v
            for _ in range(ell):
                v = _push(m, v)
            nxt += v
        x = nxt
        if not x.any():
            break
    return PolicyStats(
        R=float(z @ m.reward), T_plays=float(z.sum()), N=np.zeros(0), I=0.0,
        R_final=0.0, R_choice=0.0, w=w, z=z,
    )


# ---------------------------------------------------------------------------
# regimes and wrappers


@dataclass(frozen=True)
class RegimeParams:
    name: str
    alpha: float
    gamma: float
    r: float = math.inf
    rho: float = 13.0


def small_regime_params(T: int, max_delta: int) -> RegimeParams:
    """``r = sqrt(T)/(2 d)``, ``gamma = 4 r d^2 / T``, ``alpha = (1 - gamma)/(1 + 1/r)``.

    ``gamma`` is capped at 1/2 when ``sqrt(T) < 4 d``; no ratio is promised there.
    """
    if max_delta <= 0:
        return RegimeParams("small", 1.0, 0.0)
    r = math.sqrt(T) / (2 * max_delta)
    gamma = 4 * r * max_delta ** 2 / T
    if gamma > 0.5:
        # the horizon is too short for the guarantee; keep a usable subsampling rate
        logger.warning("T=%d is short for delay %d (gamma=%.3g); capping gamma at 1/2", T, max_delta, gamma)
        gamma = 0.5
    return RegimeParams("small", (1 - gamma) / (1 + 1 / r), gamma, r)


def large_regime_params(rho: float = 13.0) -> RegimeParams:
    gamma = 1.0 / 3.0
    return RegimeParams("large", (1 - gamma) / rho, gamma, rho=rho)


def _log2_delta(delta: int) -> float:
    return math.log2(delta) if delta > 1 else 0.0


def large_regime_ok(T: int, delta: int) -> bool:
    """Horizon condition ``T >= 21 (2d + 1)(1 + log2 d)`` for compaction."""
    return delta == 0 or T >= 21 * (2 * delta + 1) * (1 + _log2_delta(delta))


def choose_regime(T: int, delays: Sequence[int], regime: str = "auto") -> str:
    if regime not in ("auto", "small", "large"):
        raise ValueError("regime must be auto, small or large")
    if regime != "auto":
        return regime
    dmax = max(delays, default=0)
    if dmax <= math.sqrt(T) / 50:
        return "small"
    if all(large_regime_ok(T, d) for d in delays):
        return "large"
    return "small"


@dataclass(frozen=True, eq=False)
class DelayedArmPolicy:
    """A (mixed) block policy plus the wrapper used to execute it."""

    policy: MixedPolicy
    delta: int
    mode: str = PLAIN
    switch_plays: float = math.inf
    rho: float = 13.0


def _as_delayed(p: BlockPolicy | MixedPolicy | DelayedArmPolicy, delta: int) -> DelayedArmPolicy:
    if isinstance(p, DelayedArmPolicy):
        return p
    if isinstance(p, BlockPolicy):
        p = MixedPolicy(((1.0, p),))
    return DelayedArmPolicy(p, delta)


def delay_free_transform(policy: BlockPolicy | MixedPolicy | DelayedArmPolicy, r_param: float,
                         delta: int | None = None) -> DelayedArmPolicy:
    """Switch to delay-free play after the block holding the ``r * delta``-th play."""
    if not r_param > 0:
        raise ValueError("r_param must be positive")
    base = _as_delayed(policy, 0 if delta is None else delta)
    d = base.delta if delta is None else int(delta)
    if d == 0:
        return DelayedArmPolicy(base.policy, 0)
    return DelayedArmPolicy(base.policy, d, DELAY_FREE, switch_plays=r_param * d)


def block_compaction_transform(policy: BlockPolicy | MixedPolicy | DelayedArmPolicy, rho: float = 13.0,
                               delta: int | None = None, T: int | None = None) -> DelayedArmPolicy:
    """Replicate small blocks ``rho`` times and reuse the surplus; large blocks go delay-free."""
    base = _as_delayed(policy, 0 if delta is None else delta)
    d = base.delta if delta is None else int(delta)
    if T is not None and not large_regime_ok(T, d):
        raise ValueError(
            f"T={T} is below 21(2d+1)(1+log2 d) for d={d}; use the small-delay regime instead"
        )
    if d == 0:
        return DelayedArmPolicy(base.policy, 0)
    if rho != 13.0:
        raise ValueError("only the 13x replication (six reusable copies per class) is implemented")
    return DelayedArmPolicy(base.policy, d, COMPACTED, rho=rho)


# ---------------------------------------------------------------------------
# solve


@dataclass(frozen=True, eq=False)
class DelayedSolution:
    search: LambdaSolution
    block_models: tuple[BlockModel, ...]
    policies: tuple[DelayedArmPolicy, ...]
    regime: RegimeParams
    dual_bound: float
    order: tuple[int, ...]


def solve_delayed(arms: Sequence[ArmModel], K: int, T: int, eps: float = 0.05,
                  regime: str = "auto", delays: Sequence[int] | None = None) -> DelayedSolution:
    """Block relaxation with ``K*T`` expected plays, then the regime's execution wrapper."""
    delays = [m.delay for m in arms] if delays is None else [int(d) for d in delays]
    bms = tuple(block_model(m, d, T) for m, d in zip(arms, delays))
    stats_cache: dict = {}

    def oracle(lam: float) -> RelaxationPoint:
        pols, val, cons = [], 0.0, 0.0
        for bm in bms:
            res = block_gain_dp(bm, lam, K)
            st = block_stats(bm, res.policy)
            pols.append(res.policy)
            val += res.Q
            cons += st.T_plays
        return RelaxationPoint(lam, val, cons, tuple(pols))

    sol = lagrangian_bisection(oracle, float(K * T), eps, len(arms))
    name = choose_regime(T, delays, regime)
    dmax = max(delays, default=0)
    if name == "small":
        params = small_regime_params(T, dmax)
        wrapped = tuple(delay_free_transform(p, params.r, d) if d > 0 else DelayedArmPolicy(p, 0)
                        for p, d in zip(sol.policies, delays))
    else:
        params = large_regime_params()
        wrapped = tuple(block_compaction_transform(p, params.rho, d, T) for p, d in zip(sol.policies, delays))
    stats = [block_stats(bm, p) for bm, p in zip(bms, sol.policies)]
    del stats_cache
    order = tuple(order_by_ratio(stats))
    return DelayedSolution(sol, bms, wrapped, params, sol.dual_bound, order)


# ---------------------------------------------------------------------------
# execution


_BLOCK, _DF, _DONE = 0, 1, 2


class _ArmRun:
    """Execution state of one arm inside an episode."""

    __slots__ = (
        "i", "delta", "kind", "table", "bc", "switch_plays", "rho", "child", "cum", "values",
        "playable", "mode", "sigma", "b", "hidden", "outcomes", "gen", "consumed", "pending",
        "extras", "block_x", "wait_until", "switch_at_end", "logical", "classes", "real_blocks",
        "logical_blocks", "plays_u", "n_real", "started",
    )

    def __init__(self, i: int, pol: DelayedArmPolicy, table: np.ndarray, m: ArmModel,
                 cum: list, plays_u: np.ndarray, kept: bool):
        self.i = i
        self.delta = pol.delta
        self.kind = pol.mode
        self.table = table
        self.bc = table.shape[0]
        self.switch_plays = pol.switch_plays
        self.rho = pol.rho
        self.child = m.child
        self.cum = cum
        self.values = m.values
        self.playable = m.playable
        self.mode = _BLOCK if kept else _DONE
        self.sigma = 0
        self.b = 0
        self.hidden = 0
        self.outcomes: list[int] = []
        self.gen: list[int] = []
        self.consumed = 0
        self.pending = 0
        self.extras = 0
        self.block_x = 0
        self.wait_until = 0
        self.switch_at_end = False
        self.logical = 0
        self.classes: Counter = Counter()
        self.real_blocks = 0
        self.logical_blocks = 0
        self.plays_u = plays_u
        self.n_real = 0

    # outcomes ---------------------------------------------------------
    def _consume(self, n: int, t: int) -> None:
        for _ in range(n):
            k = self.consumed
            assert k < len(self.outcomes), "consumed an outcome that was never generated"
            assert self.gen[k] + self.delta + 1 <= t, "outcome consumed before its delivery slot"
            self.sigma = int(self.child[self.sigma, self.outcomes[k]])
            self.consumed += 1

    def _oldest_ready(self, t: int) -> bool:
        k = self.consumed
        return k < len(self.outcomes) and self.gen[k] + self.delta + 1 <= t

    # decisions --------------------------------------------------------
    def refresh(self, t: int) -> None:
        while True:
            if self.mode == _DONE or self.pending > 0 or self.extras > 0:
                return
            if self.block_x > 0:
                if t < self.wait_until:
                    return
                self._consume(self.block_x, t)
                self.block_x = 0
                self.b += 1
                if self.switch_at_end:
                    self.switch_at_end = False
                    self.mode = _DF
            if self.b >= self.bc:
                self.mode = _DONE
                return
            ell = int(self.table[self.b, self.sigma])
            if ell == 0:
                self.mode = _DONE
                return
            self.logical_blocks += 1
            self.logical += ell
            if self.mode == _DF:
                self.pending = ell
                return
            if self.kind == COMPACTED:
                if ell > self.delta / self.rho:
                    self.real_blocks += 1
                    self.pending = ell
                    self.block_x = ell
                    self.switch_at_end = True
                    outstanding = len(self.outcomes) - self.consumed
                    self.extras = max(0, self.delta + 1 - outstanding)
                    return
                s = int(math.floor(math.log2(ell)))
                if self.classes[s] > 0:
                    self.classes[s] -= 1
                    assert len(self.outcomes) - self.consumed >= ell, "buffer too small for a reused block"
                    self._consume(ell, t)
                    self.b += 1
                    continue
                self.classes[s] += 6
                self.real_blocks += 1
                self.pending = 13 * ell
                self.block_x = ell
                return
            self.pending = ell
            self.block_x = ell
            if self.kind == DELAY_FREE and self.logical >= self.switch_plays:
                self.switch_at_end = True
                self.extras = self.delta + 1
            return

    def ready(self, t: int) -> bool:
        if self.mode == _DONE:
            return False
        if self.pending > 0:
            return self.mode != _DF or self._oldest_ready(t)
        return self.extras > 0

    def play(self, t: int) -> float:
        h = self.hidden
        if not self.playable[h]:
            # the real arm cannot be played any more (budget); the policy ends here
            self.mode = _DONE
            self.pending = self.extras = 0
            return math.nan
        u = self.plays_u[self.n_real]
        row = self.cum[h]
        j = 0
        while j < len(row) - 1 and row[j] <= u:
            j += 1
        self.outcomes.append(j)
        self.gen.append(t)
        self.hidden = int(self.child[h, j])
        self.n_real += 1
        if self.pending > 0:
            self.pending -= 1
            if self.mode == _DF:
                self._consume(1, t)
                if self.pending == 0:
                    self.b += 1
            elif self.pending == 0:
                self.wait_until = t + self.delta + 1
        else:
            self.extras -= 1
        return float(self.values[j])


class DelayedRunner:
    """Priority scheduler for delayed-feedback policies (one episode per call to :meth:`episode`)."""

    def __init__(self, arms: Sequence[ArmModel], policies: Sequence[DelayedArmPolicy | BlockPolicy | MixedPolicy],
                 K: int, T: int, alpha: float, order: Sequence[int]):
        self.arms = list(arms)
        self.policies = [_as_delayed(p, m.delay) for p, m in zip(policies, arms)]
        if len(self.policies) != len(self.arms):
            raise ValueError("need one policy per arm")
        self.K, self.T, self.alpha = int(K), int(T), float(alpha)
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.order = check_permutation(order, len(arms))
        self.n_arms = len(arms)
        self.plays_per_arm = self.T
        self._cum = [[row.tolist() for row in cumulative_probs(m)] for m in self.arms]

    def episode(self, u: EpisodeUniforms) -> EpisodeResult:
        runs = []
        for i, (m, p) in enumerate(zip(self.arms, self.policies)):
            table = p.policy.pick(u.coin[i]).plays
            runs.append(_ArmRun(i, p, table, m, self._cum[i], u.plays[i], u.keep[i] < self.alpha))
        total = 0.0
        trace: list[tuple[int, int, float, bool]] = []
        for t in range(self.T):
            for r in runs:
                r.refresh(t)
            used = 0
            for i in self.order:
                if used >= self.K:
                    break
                r = runs[i]
                if r.ready(t):
                    q = r.play(t)
                    if q != q:  # arm exhausted
                        continue
                    total += q
                    trace.append((t, i, q, False))
                    used += 1
        counts = np.array([r.n_real for r in runs])
        info = {
            "real_blocks": [r.real_blocks for r in runs],
            "logical_blocks": [r.logical_blocks for r in runs],
            "order": list(self.order),
        }
        res = EpisodeResult(total, counts, trace, info=info)
        self._check(res, runs)
        return res

    def _check(self, res: EpisodeResult, runs: list[_ArmRun]) -> None:
        per_slot = Counter(t for t, _, _, _ in res.trace)
        assert all(c <= self.K for c in per_slot.values()), "more than K plays in a slot"
        assert len(set((t, i) for t, i, _, _ in res.trace)) == len(res.trace), "arm played twice in a slot"
        for r in runs:
            if r.kind == COMPACTED:
                bound = r.logical_blocks // 7 + 1 + _log2_delta(r.delta)
                assert r.real_blocks <= bound + 1e-12, (
                    f"arm {r.i}: {r.real_blocks} real blocks exceed {bound} for {r.logical_blocks} policy blocks"
                )

    def __call__(self, u: Uniforms) -> np.ndarray:
        return np.array([self.episode(u.row(e)).total_reward for e in range(len(u))])


def delayed_runner(arms: Sequence[ArmModel], sol: DelayedSolution, K: int, T: int,
                   order: Sequence[int] | None = None, alpha: float | None = None) -> DelayedRunner:
    return DelayedRunner(arms, sol.policies, K, T, sol.regime.alpha if alpha is None else alpha,
                         sol.order if order is None else order)


def run_delayed(arms: Sequence[ArmModel], policies: Sequence[DelayedArmPolicy], K: int, T: int,
                alpha: float, order: Sequence[int], rng_stream: EpisodeUniforms) -> EpisodeResult:
    """One episode of the delayed-feedback scheduler."""
    return DelayedRunner(arms, policies, K, T, alpha, order).episode(rng_stream)

"""Running a collection of single-arm policies as one irrevocable schedule.

Arms are inspected in a fixed priority order.  At every slot the first
``K`` arms that have not quit are the active ones: each either plays or
quits, and a quitting arm is immediately replaced by the next arm in line
within the same slot.  An arm therefore plays in a contiguous run of slots
and is never resumed.  With ``alpha < 1`` every arm is independently
replaced by the null policy with probability ``1 - alpha`` before the
episode starts.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lagrangian import PLAY, AnyPolicy, MixedPolicy, PolicyStats, as_mixed, policy_stats
from .sim import EpisodeResult, EpisodeUniforms, Uniforms, cumulative_probs, outcome_index
from .statespace import ArmModel

logger = logging.getLogger(__name__)

__all__ = [
    "ScheduleConfig",
    "CombinedRunner",
    "order_by_ratio",
    "check_permutation",
    "run_combined",
]


@dataclass(frozen=True)
class ScheduleConfig:
    """``order=None`` means decreasing reward-per-play ratio."""

    K: int
    T: int
    order: tuple[int, ...] | None = None
    alpha: float = 1.0

    def __post_init__(self) -> None:
        if self.K < 1 or self.T < 1:
            raise ValueError("K and T must be positive")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1] (got {self.alpha})")


def order_by_ratio(stats: Sequence[PolicyStats]) -> list[int]:
    """Arms by decreasing R/T_plays; policies that never play go last; ties by index."""
    return sorted(range(len(stats)), key=lambda i: (-stats[i].ratio, i))


def check_permutation(order: Sequence[int], n: int) -> list[int]:
    out = [int(i) for i in order]
    if sorted(out) != list(range(n)):
        raise ValueError(f"order {out} is not a permutation of 0..{n - 1}")
    return out


class CombinedRunner:
    """Precomputed plan for the greedy or given-order schedule.

    Calling the object on a chunk of uniforms runs all episodes at once;
    :meth:`episode` runs one episode with a full trace and feasibility checks.
    Both consume the uniforms identically.
    """

    def __init__(self, arms: Sequence[ArmModel], policies: Sequence[AnyPolicy], cfg: ScheduleConfig):
        if len(arms) != len(policies):
            raise ValueError("need one policy per arm")
        if cfg.K > len(arms):
            raise ValueError("K cannot exceed the number of arms")
        self.arms = list(arms)
        self.policies: list[MixedPolicy] = [as_mixed(p) for p in policies]
        self.cfg = cfg
        self.n_arms = len(arms)
        self.plays_per_arm = cfg.T
        self.stats = [policy_stats(m, p) for m, p in zip(self.arms, self.policies)]
        if cfg.order is None:
            self.order = order_by_ratio(self.stats)
        else:
            self.order = check_permutation(cfg.order, self.n_arms)
        self._cum = [cumulative_probs(m) for m in self.arms]
        self._cw = [p.cumulative for p in self.policies]
        self._acts = [np.stack([c.actions for _, c in p.components]) for p in self.policies]

    # -- single episode -------------------------------------------------
    def episode(self, u: EpisodeUniforms) -> EpisodeResult:
        K, T, n = self.cfg.K, self.cfg.T, self.n_arms
        acts = [self.policies[i].pick(u.coin[i]).actions for i in range(n)]
        quit_ = [not (u.keep[i] < self.cfg.alpha) for i in range(n)]
        state = [0] * n
        count = [0] * n
        total = 0.0
        trace: list[tuple[int, int, float, bool]] = []
        for t in range(T):
            used = 0
            for i in self.order:
                if used >= K:
                    break
                if quit_[i]:
                    continue
                s = state[i]
                if acts[i][s] != PLAY:
                    quit_[i] = True
                    continue
                m = self.arms[i]
                j = outcome_index(self._cum[i][s], u.plays[i, count[i]])
                q = float(m.values[j])
                total += q
                trace.append((t, i, q, False))
                state[i] = int(m.child[s, j])
                count[i] += 1
                used += 1
        res = EpisodeResult(total, np.array(count), trace,
                            info={"order": list(self.order), "final_states": state})
        self._check(res)
        return res

    def _check(self, res: EpisodeResult) -> None:
        K, T = self.cfg.K, self.cfg.T
        slots: dict[int, list[int]] = {}
        per_arm: dict[int, list[int]] = {}
        for t, i, _, _ in res.trace:
            slots.setdefault(t, []).append(i)
            per_arm.setdefault(i, []).append(t)
        assert all(0 <= t < T for t in slots), "slot outside horizon"
        assert all(len(v) <= K for v in slots.values()), "more than K plays in a slot"
        for i, ts in per_arm.items():
            assert ts == list(range(ts[0], ts[0] + len(ts))), f"arm {i} plays are not contiguous"
            b = self.arms[i].budget
            if b is not None:
                spent = sum(q for t, a, q, _ in res.trace if a == i)
                assert spent <= b + 1e-9, f"arm {i} overran its budget"

    # -- batch ------------------------------------------------------------
    def __call__(self, u: Uniforms) -> np.ndarray:
        return self.run_batch(u)[0]

    def run_batch(self, u: Uniforms) -> tuple[np.ndarray, np.ndarray]:
        """Rewards and per-arm play counts for a chunk of episodes."""
        K, T, n = self.cfg.K, self.cfg.T, self.n_arms
        B = len(u)
        rows = np.arange(B)
        comp = [np.minimum(np.searchsorted(self._cw[i], u.coin[:, i], side="right"),
                           len(self._cw[i]) - 1) for i in range(n)]
        quit_ = ~(u.keep < self.cfg.alpha)
        state = np.zeros((B, n), dtype=np.int64)
        count = np.zeros((B, n), dtype=np.int64)
        total = np.zeros(B)
        for _t in range(T):
            used = np.zeros(B, dtype=np.int64)
            for i in self.order:
                live = ~quit_[:, i] & (used < K)
                if not live.any():
                    continue
                s = state[:, i]
                play = live & (self._acts[i][comp[i], s] == PLAY)
                quit_[:, i] |= live & ~play
                if not play.any():
                    continue
                e = rows[play]
                se = s[play]
                m = self.arms[i]
                cum = self._cum[i][se]
                uu = u.plays[e, i, count[e, i]]
                j = np.minimum((cum <= uu[:, None]).sum(axis=1), cum.shape[1] - 1)
                total[e] += m.values[j]
                state[e, i] = m.child[se, j]
                count[e, i] += 1
                used[e] += 1
        return total, count


def run_combined(
    arms: Sequence[ArmModel],
    policies: Sequence[AnyPolicy],
    cfg: ScheduleConfig,
    rng_stream: EpisodeUniforms | np.random.Generator,
) -> EpisodeResult:
    """Simulate one episode of the combined schedule."""
    runner = CombinedRunner(arms, policies, cfg)
    if isinstance(rng_stream, np.random.Generator):
        from .sim import draw_uniforms

        rng_stream = draw_uniforms(rng_stream, 1, runner.n_arms, runner.plays_per_arm).row(0)
    return runner.episode(rng_stream)

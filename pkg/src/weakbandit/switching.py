"""Bandits with metric switching costs (one play per slot).

For a fixed multiplier the relaxed problem is an orienteering problem: pick
a path of arms from the start arm, of total length at most ``L``, that
maximises the sum of the arms' Lagrangian values.  The path is found
exactly by dynamic programming over subsets, so only small arm counts are
supported.  Execution walks the path once, playing each arm's policy to
completion before moving on, and never goes back.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lagrangian import (
    LambdaSolution,
    RelaxationPoint,
    SingleArmPolicy,
    gain_dp,
    lagrangian_bisection,
    policy_stats,
)
from .scheduler import CombinedRunner, ScheduleConfig
from .sim import EpisodeResult, EpisodeUniforms, Uniforms
from .statespace import ArmModel

logger = logging.getLogger(__name__)

__all__ = [
    "MetricSpec",
    "SwitchingPlan",
    "SwitchingSolution",
    "SwitchingRunner",
    "orienteering_exact",
    "solve_switching",
    "run_switching",
    "switching_runner",
    "MAX_ORIENTEERING_NODES",
]

MAX_ORIENTEERING_NODES = 20
_LEN_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MetricSpec:
    distances: np.ndarray
    start: int
    L: float

    def __post_init__(self) -> None:
        d = np.asarray(self.distances, dtype=float)
        object.__setattr__(self, "distances", d)
        n = d.shape[0]
        if d.shape != (n, n):
            raise ValueError("distance matrix must be square")
        if np.any(d < 0) or np.any(np.diag(d) != 0) or not np.allclose(d, d.T, atol=1e-12):
            raise ValueError("distances must be symmetric, non-negative, with zero diagonal")
        viol = d[:, None, :] - (d[:, :, None] + d[None, :, :])
        if viol.size and viol.max() > 1e-9:
            raise ValueError(f"triangle inequality violated by {viol.max():.3g}")
        if not 0 <= self.start < n:
            raise ValueError("start must index an arm")
        if self.L < 0:
            raise ValueError("L must be non-negative")

    @property
    def n(self) -> int:
        return int(self.distances.shape[0])

    def path_length(self, path: Sequence[int]) -> float:
        return float(sum(self.distances[a, b] for a, b in zip(path[:-1], path[1:])))


def _cover_lengths(dist: np.ndarray) -> np.ndarray:
    """``f[mask, v]``: shortest path visiting exactly ``mask`` and ending at ``v``.

    With symmetric distances this is also the shortest such path starting at ``v``.
    """
    n = dist.shape[0]
    f = np.full((1 << n, n), np.inf)
    for v in range(n):
        f[1 << v, v] = 0.0
    bits = 1 << np.arange(n)
    for mask in range(1, 1 << n):
        row = f[mask]
        if not np.isfinite(row).any():
            continue
        cand = (row[:, None] + dist).min(axis=0)
        out = (bits & mask) == 0
        if not out.any():
            continue
        tgt = mask | bits[out]
        vs = np.flatnonzero(out)
        f[tgt, vs] = np.minimum(f[tgt, vs], cand[out])
    return f


def orienteering_exact(
    metric: MetricSpec | np.ndarray,
    node_rewards: Sequence[float],
    start: int | None = None,
    L: float | None = None,
) -> tuple[list[int], float]:
    """Best-reward simple path from ``start`` with length at most ``L``.

    The start node's reward counts.  Among optimal paths the
    lexicographically smallest node sequence is returned.
    """
    if isinstance(metric, MetricSpec):
        dist = metric.distances
        start = metric.start if start is None else start
        L = metric.L if L is None else L
    else:
        dist = np.asarray(metric, dtype=float)
    if start is None or L is None:
        raise ValueError("start and L are required")
    n = dist.shape[0]
    if n > MAX_ORIENTEERING_NODES:
        raise ValueError(
            f"exact orienteering supports at most {MAX_ORIENTEERING_NODES} nodes (got {n}); "
            "approximate solvers are not provided"
        )
    w = np.asarray(node_rewards, dtype=float)
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("need one non-negative reward per node")
    return _best_path(dist, _cover_lengths(dist), w, start, L)


def _best_path(dist: np.ndarray, f: np.ndarray, w: np.ndarray, start: int, L: float) -> tuple[list[int], float]:
    n = dist.shape[0]
    masks = np.arange(1 << n)
    ok = ((masks & (1 << start)) != 0) & (f[:, start] <= L + _LEN_TOL)
    vals = ((masks[:, None] >> np.arange(n)) & 1) @ w
    vals = np.where(ok, vals, -np.inf)
    best = float(vals.max())
    tie = 1e-12 * max(1.0, abs(best))
    paths = [_lex_path(dist, f, int(m), start, L) for m in np.flatnonzero(vals >= best - tie)]
    path = min(paths)
    return path, float(sum(w[path]))


def _lex_path(dist: np.ndarray, f: np.ndarray, mask: int, start: int, L: float) -> list[int]:
    path = [start]
    rest = mask & ~(1 << start)
    used = 0.0
    x = start
    while rest:
        for y in range(dist.shape[0]):
            if rest >> y & 1 and used + dist[x, y] + f[rest, y] <= L + _LEN_TOL:
                break
        else:  # pragma: no cover - guarded by the mask being feasible
            raise AssertionError("no feasible continuation")
        used += dist[x, y]
        path.append(y)
        rest &= ~(1 << y)
        x = y
    return path


@dataclass(frozen=True, eq=False)
class SwitchingPlan:
    """Visit order plus one deterministic policy per arm (null off the path)."""

    path: tuple[int, ...]
    policies: tuple[SingleArmPolicy, ...]


@dataclass(frozen=True, eq=False)
class SwitchingSolution:
    minus: SwitchingPlan
    plus: SwitchingPlan
    a: float
    dual_bound: float
    search: LambdaSolution
    alpha: float
    reachable: tuple[int, ...]
    L: float

    @property
    def visit_order(self) -> tuple[int, ...]:
        return self.minus.path if self.a >= 0.5 else self.plus.path


def solve_switching(
    arms: Sequence[ArmModel],
    metric: MetricSpec,
    T: int,
    eps: float = 0.05,
    alpha: float | None = None,
    L: float | None = None,
) -> SwitchingSolution:
    """Multiplier search whose per-step oracle is exact orienteering on Q_i(lam).

    The two bracketing plans are mixed with one global coin, since their
    paths may differ.
    """
    n = len(arms)
    if metric.n != n:
        raise ValueError("metric size does not match the number of arms")
    L = metric.L if L is None else float(L)
    reach = tuple(int(j) for j in np.flatnonzero(metric.distances[metric.start] <= L + _LEN_TOL))
    sub = metric.distances[np.ix_(reach, reach)]
    if len(reach) > MAX_ORIENTEERING_NODES:
        raise ValueError(f"exact orienteering supports at most {MAX_ORIENTEERING_NODES} reachable arms")
    cover = _cover_lengths(sub)
    s_local = reach.index(metric.start)
    nulls = [SingleArmPolicy.null(m) for m in arms]
    c = 1.0
    alpha = min(1.0, c / 2.0) if alpha is None else float(alpha)

    def oracle(lam: float) -> RelaxationPoint:
        res = {i: gain_dp(arms[i], lam) for i in reach}
        q = [res[i].Q for i in reach]
        local, val = _best_path(sub, cover, np.asarray(q), s_local, L)
        path = tuple(reach[k] for k in local)
        pols = list(nulls)
        cons = 0.0
        for i in path:
            pols[i] = res[i].policy
            cons += policy_stats(arms[i], res[i].policy).T_plays
        return RelaxationPoint(lam, val, cons, tuple(pols), extra=path)

    sol = lagrangian_bisection(oracle, float(T) / c, eps, n, check_consumption=False)
    minus = SwitchingPlan(sol.minus.extra, sol.minus.policies)
    plus = SwitchingPlan(sol.plus.extra, sol.plus.policies)
    return SwitchingSolution(minus, plus, sol.a, sol.dual_bound, sol, alpha, reach, L)


class SwitchingRunner:
    """Executes a switching solution; one global coin picks the plan per episode."""

    def __init__(self, arms: Sequence[ArmModel], metric: MetricSpec, T: int,
                 plans: Sequence[tuple[float, SwitchingPlan]], alpha: float, L: float | None = None):
        self.arms = list(arms)
        self.metric = metric
        self.L = metric.L if L is None else float(L)
        self.T = int(T)
        self.alpha = float(alpha)
        self.plans = list(plans)
        self._cw = np.cumsum([w for w, _ in self.plans])
        self._cw[-1] = 1.0
        self.n_arms = len(arms)
        self.plays_per_arm = self.T
        self._runners = []
        for _, plan in self.plans:
            if plan.path[0] != metric.start or metric.path_length(plan.path) > self.L + _LEN_TOL:
                raise ValueError(f"path {plan.path} is not feasible from the start within L")
            rest = [i for i in range(self.n_arms) if i not in plan.path]
            cfg = ScheduleConfig(1, self.T, tuple(plan.path) + tuple(rest), self.alpha)
            self._runners.append(CombinedRunner(self.arms, plan.policies, cfg))

    def _pick(self, coin: np.ndarray) -> np.ndarray:
        return np.minimum(np.searchsorted(self._cw, coin, side="right"), len(self.plans) - 1)

    def episode(self, u: EpisodeUniforms) -> EpisodeResult:
        k = int(self._pick(np.array([u.coin[self.metric.start]]))[0])
        res = self._runners[k].episode(u)
        visited = [self.metric.start]
        for _, i, _, _ in res.trace:
            if i != visited[-1]:
                assert i not in visited, f"arm {i} revisited"
                visited.append(i)
        res.distance_cost = self.metric.path_length(visited)
        assert res.distance_cost <= self.L + _LEN_TOL, "distance budget exceeded"
        res.info["plan"] = k
        res.info["visited"] = visited
        return res

    def __call__(self, u: Uniforms) -> np.ndarray:
        return self.run_batch(u)[0]

    def run_batch(self, u: Uniforms) -> tuple[np.ndarray, np.ndarray]:
        """Rewards and distance costs of a chunk of episodes."""
        pick = self._pick(u.coin[:, self.metric.start])
        total = np.zeros(len(u))
        cost = np.zeros(len(u))
        for k, (runner, (_, plan)) in enumerate(zip(self._runners, self.plans)):
            sel = pick == k
            if not sel.any():
                continue
            r, counts = runner.run_batch(u)
            total[sel] = r[sel]
            pos = np.full(len(u), plan.path[0])
            c = np.zeros(len(u))
            for i in plan.path[1:]:
                moved = counts[:, i] > 0
                c[moved] += self.metric.distances[pos[moved], i]
                pos[moved] = i
            cost[sel] = c[sel]
        if np.any(cost > self.L + _LEN_TOL):
            raise AssertionError("distance budget exceeded")
        return total, cost


def run_switching(
    arms: Sequence[ArmModel],
    visit_order: Sequence[int],
    policies: Sequence[SingleArmPolicy],
    T: int,
    metric: MetricSpec,
    alpha: float,
    rng_stream: EpisodeUniforms,
    L: float | None = None,
) -> EpisodeResult:
    """One episode along a fixed path; arms whose policy does not play are skipped at no cost."""
    plan = SwitchingPlan(tuple(visit_order), tuple(policies))
    return SwitchingRunner(arms, metric, T, [(1.0, plan)], alpha, L).episode(rng_stream)


def switching_runner(arms: Sequence[ArmModel], metric: MetricSpec, T: int,
                     sol: SwitchingSolution) -> SwitchingRunner:
    plans = [(sol.a, sol.minus), (1.0 - sol.a, sol.plus)] if 0 < sol.a < 1 else [(1.0, sol.minus)]
    return SwitchingRunner(arms, metric, T, plans, sol.alpha, sol.L)

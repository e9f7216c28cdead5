"""Exact answers for tiny instances.

* ``exact_joint_opt`` and its variant cousins: the best adaptive policy,
  found by backward induction over the joint state of all arms.
* ``exact_expectation``: the exact mean reward of any executor that reads
  its randomness from :class:`~weakbandit.sim.EpisodeUniforms`, found by
  enumerating every distinguishable draw of the uniforms.

Both are exponential in the number of arms and meant only as test oracles.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .sim import EpisodeResult, EpisodeUniforms
from .statespace import ArmModel

__all__ = [
    "MAX_JOINT_STATES",
    "OracleSizeError",
    "exact_joint_opt",
    "exact_switching_opt",
    "exact_delayed_opt",
    "exact_maxmab_opt",
    "exact_budgeted_opt",
    "exact_expectation",
]

MAX_JOINT_STATES = 10**6


class OracleSizeError(ValueError):
    """The instance is too large for exhaustive search."""


def _memo(fn):
    """Memoise ``fn``; give up once more than ``MAX_JOINT_STATES`` entries are reached."""
    cache: dict = {}

    def wrapper(*key):
        try:
            return cache[key]
        except KeyError:
            pass
        if len(cache) >= MAX_JOINT_STATES:
            raise OracleSizeError(f"more than {MAX_JOINT_STATES} reachable joint states")
        val = cache[key] = fn(*key)
        return val

    return wrapper


def _branches(m: ArmModel, s: int) -> list[tuple[float, int, float]]:
    return [(float(p), int(m.child[s, j]), float(m.values[j]))
            for j, p in enumerate(m.probs[s]) if p > 0]


def _subsets(items: Sequence[int], k: int):
    for r in range(0, min(k, len(items)) + 1):
        yield from itertools.combinations(items, r)


def _joint_next(arms: Sequence[ArmModel], states: tuple[int, ...], played: Sequence[int]):
    """All joint successors after playing ``played`` once each, with probabilities."""
    out = [(1.0, states)]
    for i in played:
        nxt = []
        for p, st in out:
            for q, c, _ in _branches(arms[i], st[i]):
                s2 = list(st)
                s2[i] = c
                nxt.append((p * q, tuple(s2)))
        out = nxt
    return out


def exact_joint_opt(arms: Sequence[ArmModel], K: int, T: int) -> float:
    """Optimal expected total reward with at most ``K`` distinct arms per slot for ``T`` slots."""
    n = len(arms)

    @_memo
    def V(states: tuple[int, ...], t: int) -> float:
        if t == 0:
            return 0.0
        ok = [i for i in range(n) if arms[i].playable[states[i]]]
        best = 0.0
        for A in _subsets(ok, K):
            if not A:
                continue
            val = sum(float(arms[i].reward[states[i]]) for i in A)
            val += sum(p * V(s2, t - 1) for p, s2 in _joint_next(arms, states, A))
            best = max(best, val)
        return best

    return V(tuple(0 for _ in arms), int(T))


def exact_switching_opt(arms: Sequence[ArmModel], distances, start: int, L: float, T: int) -> float:
    """One play per slot; moving from the current arm to ``j`` costs ``d[cur, j]`` out of ``L``.

    Revisits are allowed, so this is the unrestricted optimum.
    """
    d = np.asarray(distances, dtype=float)
    n = len(arms)

    @_memo
    def V(states: tuple[int, ...], cur: int, left: float, t: int) -> float:
        if t == 0:
            return 0.0
        best = 0.0
        for j in range(n):
            cost = d[cur, j]
            if cost > left + 1e-9 or not arms[j].playable[states[j]]:
                continue
            val = float(arms[j].reward[states[j]])
            rem = round(left - cost, 9)
            val += sum(p * V(s2, j, rem, t - 1) for p, s2 in _joint_next(arms, states, (j,)))
            best = max(best, val)
        return best

    return V(tuple(0 for _ in arms), int(start), float(L), int(T))


def exact_delayed_opt(arms: Sequence[ArmModel], K: int, T: int, delays: Sequence[int] | None = None) -> float:
    """Optimum when a play's outcome becomes usable ``delay + 1`` slots after it is made.

    Each arm's state is its known posterior plus the waiting times of its
    unrevealed plays.  Outcomes are revealed in play order, each drawn from
    the current posterior's predictive law.
    """
    delays = [m.delay for m in arms] if delays is None else list(delays)
    if any(m.budget is not None for m in arms):
        raise ValueError("the delayed oracle does not support budgets")
    n = len(arms)

    def reveal(i: int, s: int, k: int):
        """Distribution of the posterior after revealing ``k`` outcomes from ``s``."""
        out = [(1.0, s)]
        for _ in range(k):
            out = [(p * q, c) for p, st in out for q, c, _ in _branches(arms[i], st)]
        return out

    @_memo
    def V(joint: tuple, t: int) -> float:
        if t == 0:
            return 0.0
        ok = [i for i in range(n)
              if arms[i].depth[joint[i][0]] + len(joint[i][1]) < arms[i].horizon]
        best = 0.0
        for A in _subsets(ok, K):
            val = sum(float(arms[i].reward[joint[i][0]]) for i in A)
            # advance one slot: new plays wait delay+1, everything ticks down by one
            per_arm = []
            for i in range(n):
                s, waits = joint[i]
                w = list(waits) + ([delays[i] + 1] if i in A else [])
                w = [x - 1 for x in w]
                k = sum(1 for x in w if x <= 0)
                rest = tuple(x for x in w if x > 0)
                per_arm.append([(p, (c, rest)) for p, c in reveal(i, s, k)])
            exp = 0.0
            for combo in itertools.product(*per_arm):
                p = math.prod(c[0] for c in combo)
                exp += p * V(tuple(c[1] for c in combo), t - 1)
            best = max(best, val + exp)
        return best

    return V(tuple((0, ()) for _ in arms), int(T))


def exact_maxmab_opt(arms: Sequence[ArmModel], K: int, T: int) -> float:
    """Optimal expected sum over slots of the largest value seen, with in-slot adaptivity."""
    n = len(arms)

    @_memo
    def slot(states: tuple[int, ...], t: int, used: frozenset, best: float) -> float:
        # option: close the slot now
        val = best + V(states, t - 1)
        if len(used) < K:
            for i in range(n):
                if i in used or not arms[i].playable[states[i]]:
                    continue
                e = 0.0
                for p, c, q in _branches(arms[i], states[i]):
                    s2 = list(states)
                    s2[i] = c
                    e += p * slot(tuple(s2), t, used | {i}, max(best, q))
                val = max(val, e)
        return val

    @_memo
    def V(states: tuple[int, ...], t: int) -> float:
        if t == 0:
            return 0.0
        return slot(states, t, frozenset(), 0.0)

    return V(tuple(0 for _ in arms), int(T))


def exact_budgeted_opt(arms: Sequence[ArmModel], T: int) -> float:
    """Optimal explore-then-commit value with ``T`` exploration plays."""
    n = len(arms)

    @_memo
    def V(states: tuple[int, ...], t: int) -> float:
        best = max(float(arms[i].reward[states[i]]) for i in range(n))
        if t == 0:
            return best
        for i in range(n):
            if arms[i].playable[states[i]]:
                e = sum(p * V(s2, t - 1) for p, s2 in _joint_next(arms, states, (i,)))
                best = max(best, e)
        return best

    return V(tuple(0 for _ in arms), int(T))


# ---------------------------------------------------------------------------
# exact expectation of a fixed executor


def _intervals(breaks: Sequence[float]) -> list[tuple[float, float]]:
    """(probability, representative point) for each cell of [0, 1) cut at ``breaks``."""
    pts = [0.0] + sorted(float(b) for b in breaks if 0.0 < b < 1.0) + [1.0]
    return [(b - a, 0.5 * (a + b)) for a, b in zip(pts[:-1], pts[1:]) if b > a]


def _play_sequences(m: ArmModel, P: int) -> list[tuple[float, np.ndarray]]:
    """Every outcome sequence of up to ``P`` plays, encoded as uniforms, with its probability."""
    cum = np.cumsum(m.probs, axis=1)
    out = []

    def rec(s: int, k: int, prob: float, us: list[float]) -> None:
        if k == P or not m.playable[s]:
            out.append((prob, np.array(us + [0.5] * (P - k))))
            return
        lo = 0.0
        for j, p in enumerate(m.probs[s]):
            hi = float(cum[s, j])
            if p > 0:
                rec(int(m.child[s, j]), k + 1, prob * float(p), us + [0.5 * (lo + hi)])
            lo = hi

    rec(0, 0, 1.0, [])
    return out


def exact_expectation(
    episode: Callable[[EpisodeUniforms], EpisodeResult | float],
    arms: Sequence[ArmModel],
    plays_per_arm: int,
    coin_breaks: Sequence[Sequence[float]] | None = None,
    keep_breaks: Sequence[Sequence[float]] | None = None,
    limit: int = 200_000,
) -> float:
    """Exact mean of ``episode`` over its uniforms.

    ``coin_breaks[i]`` and ``keep_breaks[i]`` are the points where the
    executor's reading of ``coin[i]`` / ``keep[i]`` can change (mixture
    cumulative weights, the subsampling probability).  Outcome uniforms are
    enumerated along each arm's posterior.
    """
    n = len(arms)
    coin_breaks = coin_breaks or [[] for _ in range(n)]
    keep_breaks = keep_breaks or [[] for _ in range(n)]
    seqs = [_play_sequences(m, plays_per_arm) for m in arms]
    coins = [_intervals(b) for b in coin_breaks]
    keeps = [_intervals(b) for b in keep_breaks]
    total = math.prod(len(x) for x in seqs) * math.prod(len(x) for x in coins) * math.prod(len(x) for x in keeps)
    if total > limit:
        raise OracleSizeError(f"{total} uniform cells exceed the enumeration limit {limit}")
    acc = 0.0
    for c in itertools.product(*coins):
        for k in itertools.product(*keeps):
            for s in itertools.product(*seqs):
                w = math.prod(x[0] for x in c) * math.prod(x[0] for x in k) * math.prod(x[0] for x in s)
                if w == 0:
                    continue
                u = EpisodeUniforms(np.array([x[1] for x in c]), np.array([x[1] for x in k]),
                                    np.stack([x[1] for x in s]))
                r = episode(u)
                acc += w * (r.total_reward if isinstance(r, EpisodeResult) else float(r))
    return acc

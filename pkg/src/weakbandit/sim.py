"""Seeded Monte Carlo plumbing shared by every executor.

All randomness of an episode comes from a block of uniforms:

* ``coin[i]`` resolves arm ``i``'s policy mixture,
* ``keep[i]`` decides whether arm ``i`` survives subsampling,
* ``plays[i, m]`` decides the outcome of arm ``i``'s ``m``-th play.

Episodes are grouped in fixed-size chunks, and chunk ``k`` draws its block
from ``PCG64(SeedSequence([seed, k]))``.  Because the chunk size depends
only on the instance, results do not depend on how many threads run the
chunks.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import numpy as np

from .statespace import ArmModel

logger = logging.getLogger(__name__)

__all__ = [
    "EpisodeUniforms",
    "Uniforms",
    "EpisodeResult",
    "Estimate",
    "BatchRunner",
    "EpisodeRunner",
    "draw_uniforms",
    "episode_uniforms",
    "chunk_size",
    "outcome_index",
    "cumulative_probs",
    "estimate_reward",
    "simulate_rewards",
    "summarize",
]

_MAX_CHUNK = 4096
_CHUNK_FLOATS = 1 << 21


@dataclass(frozen=True, eq=False)
class EpisodeUniforms:
    coin: np.ndarray
    keep: np.ndarray
    plays: np.ndarray

    @property
    def n_arms(self) -> int:
        return int(self.coin.shape[0])

    @property
    def plays_per_arm(self) -> int:
        return int(self.plays.shape[1])


@dataclass(frozen=True, eq=False)
class Uniforms:
    """A chunk of episodes' uniforms; first axis is the episode."""

    coin: np.ndarray
    keep: np.ndarray
    plays: np.ndarray

    def __len__(self) -> int:
        return int(self.coin.shape[0])

    def row(self, e: int) -> EpisodeUniforms:
        return EpisodeUniforms(self.coin[e], self.keep[e], self.plays[e])


def draw_uniforms(rng: np.random.Generator, size: int, n_arms: int, plays_per_arm: int) -> Uniforms:
    coin = rng.random((size, n_arms))
    keep = rng.random((size, n_arms))
    plays = rng.random((size, n_arms, plays_per_arm))
    return Uniforms(coin, keep, plays)


def chunk_size(n_arms: int, plays_per_arm: int) -> int:
    per = max(1, n_arms * (plays_per_arm + 2))
    return int(max(1, min(_MAX_CHUNK, _CHUNK_FLOATS // per)))


def _chunk_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(k)])))


def episode_uniforms(seed: int, index: int, n_arms: int, plays_per_arm: int) -> EpisodeUniforms:
    """Uniforms of one episode, identical to what a batch run would use."""
    c = chunk_size(n_arms, plays_per_arm)
    k, r = divmod(int(index), c)
    return draw_uniforms(_chunk_rng(seed, k), c, n_arms, plays_per_arm).row(r)


def cumulative_probs(model: ArmModel) -> np.ndarray:
    """Row-wise cumulative outcome probabilities with the last column pinned to 1."""
    cum = np.cumsum(model.probs, axis=1)
    cum[model.playable, -1] = 1.0
    return cum


def outcome_index(cum_row: np.ndarray, u: float) -> int:
    """Outcome selected by uniform ``u``; mirrors the vectorised rule in the batch executors."""
    return min(int(np.count_nonzero(cum_row <= u)), cum_row.shape[0] - 1)


@dataclass
class EpisodeResult:
    """One simulated episode.

    ``trace`` rows are ``(slot, arm, observed value, chosen)``.
    """

    total_reward: float
    plays: np.ndarray
    trace: list[tuple[int, int, float, bool]] = field(default_factory=list)
    distance_cost: float = 0.0
    info: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    episodes: int
    seed: int

    def as_dict(self) -> dict[str, Any]:
        return {"mean": self.mean, "stderr": self.stderr, "episodes": self.episodes, "seed": self.seed}


class BatchRunner(Protocol):
    """Executor over a chunk of episodes."""

    n_arms: int
    plays_per_arm: int

    def __call__(self, u: Uniforms) -> np.ndarray: ...


class EpisodeRunner:
    """Adapts a per-episode function ``fn(EpisodeUniforms) -> EpisodeResult | float``."""

    def __init__(self, fn: Callable[[EpisodeUniforms], Any], n_arms: int, plays_per_arm: int):
        self.fn = fn
        self.n_arms = int(n_arms)
        self.plays_per_arm = int(plays_per_arm)

    def __call__(self, u: Uniforms) -> np.ndarray:
        out = np.empty(len(u))
        for e in range(len(u)):
            res = self.fn(u.row(e))
            out[e] = res.total_reward if isinstance(res, EpisodeResult) else float(res)
        return out


def simulate_rewards(runner: BatchRunner, episodes: int, seed: int = 0, threads: int = 1) -> np.ndarray:
    """Per-episode rewards in episode order.

    Bit-identical for any ``threads`` because chunks are fixed by the
    instance and combined in chunk order.
    """
    if int(episodes) != episodes or episodes < 1:
        raise ValueError(f"episodes must be a positive integer (got {episodes})")
    episodes = int(episodes)
    c = chunk_size(runner.n_arms, runner.plays_per_arm)
    n_chunks = math.ceil(episodes / c)

    def work(k: int) -> np.ndarray:
        size = min(c, episodes - k * c)
        u = draw_uniforms(_chunk_rng(seed, k), c, runner.n_arms, runner.plays_per_arm)
        if size < c:
            u = Uniforms(u.coin[:size], u.keep[:size], u.plays[:size])
        return np.asarray(runner(u), dtype=float)

    if threads <= 1 or n_chunks == 1:
        parts = [work(k) for k in range(n_chunks)]
    else:
        with ThreadPoolExecutor(max_workers=int(threads)) as ex:
            parts = list(ex.map(work, range(n_chunks)))
    return np.concatenate(parts)


def summarize(samples: np.ndarray, seed: int) -> Estimate:
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    se = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return Estimate(float(x.mean()), se, int(n), int(seed))


def estimate_reward(runner: BatchRunner, episodes: int, seed: int = 0, threads: int = 1) -> Estimate:
    """Mean and standard error of the episode reward (see :func:`simulate_rewards`)."""
    return summarize(simulate_rewards(runner, episodes, seed, threads), seed)

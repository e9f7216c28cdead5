"""Truncated posterior state spaces for single arms.

An arm is described by a finite DAG of posterior states.  Every state
carries its posterior mean reward and, when it can still be played, a
distribution over the next observed value together with the successor
state reached on each value.  States are stored in breadth-first (depth)
order with the root at index 0, so any array indexed by state can be
swept bottom-up or top-down one depth layer at a time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Hashable, Mapping, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "ArmModel",
    "BetaPrior",
    "MixturePrior",
    "ExplicitPrior",
    "KnownPrior",
    "PriorSpec",
    "ValidationReport",
    "build_beta_bernoulli",
    "build_mixture_bernoulli",
    "build_known",
    "build_explicit",
    "build_arm",
    "prior_from_dict",
    "prior_to_dict",
    "validate_martingale",
]

DEFAULT_TOL = 1e-9
_PRUNE = 1e-15


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Immutable arm state space.

    Attributes
    ----------
    values : ndarray, shape (d,)
        Strictly increasing support of the observed value.
    depth : ndarray of int, shape (S,)
        Number of plays from the root.
    reward : ndarray, shape (S,)
        Posterior mean of the next observation.
    playable : ndarray of bool, shape (S,)
        False at the horizon and where another play could overrun the budget.
    probs : ndarray, shape (S, d)
        ``probs[u, j]`` is the chance that playing ``u`` shows ``values[j]``.
        Rows of unplayable states are zero.
    child : ndarray of int, shape (S, d)
        Successor on each value, ``-1`` where there is no edge.
    counts : ndarray of int, shape (S, d)
        How many times each value has been observed on the way to the state.
    """

    values: np.ndarray
    depth: np.ndarray
    reward: np.ndarray
    playable: np.ndarray
    probs: np.ndarray
    child: np.ndarray
    counts: np.ndarray
    horizon: int
    budget: float | None = None
    delay: int = 0
    labels: tuple = field(default=(), repr=False)

    def __post_init__(self) -> None:
        for name in ("values", "depth", "reward", "playable", "probs", "child", "counts"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_states(self) -> int:
        return int(self.reward.shape[0])

    @property
    def root(self) -> int:
        return 0

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(self.child >= 0))

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    @cached_property
    def layers(self) -> tuple[np.ndarray, ...]:
        """State indices grouped by depth, shallowest first."""
        return tuple(np.flatnonzero(self.depth == d) for d in range(self.max_depth + 1))

    @cached_property
    def child_padded(self) -> np.ndarray:
        """``child`` with missing edges redirected to a sink index ``n_states``."""
        out = np.where(self.child < 0, self.n_states, self.child)
        out.setflags(write=False)
        return out

    @cached_property
    def accumulated(self) -> np.ndarray:
        """Sum of observed values along the path to each state."""
        return self.counts @ self.values

    @cached_property
    def _label_index(self) -> dict:
        return {lab: i for i, lab in enumerate(self.labels)}

    def state(self, label: Hashable) -> int:
        """Index of the state carrying ``label`` (e.g. ``(s, f)`` for Beta arms)."""
        try:
            return self._label_index[label]
        except KeyError:
            raise KeyError(f"no state labelled {label!r}") from None

    @cached_property
    def validation(self) -> "ValidationReport":
        return validate_martingale(self, DEFAULT_TOL)


@dataclass(frozen=True)
class ValidationReport:
    max_deviation: float
    offending_states: tuple[int, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return not self.offending_states


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class BetaPrior:
    alpha1: int = 1
    alpha0: int = 1
    values: tuple[float, float] = (0.0, 1.0)


@dataclass(frozen=True)
class MixturePrior:
    """Finite mixture of Bernoulli types: ``components`` holds (weight, success prob)."""

    components: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class KnownPrior:
    """Arm that always shows the same value."""

    value: float


@dataclass(frozen=True)
class ExplicitPrior:
    """Hand-written DAG.

    ``states`` maps a state id to ``{"reward": r, "transitions": [(value, prob, next_id), ...]}``.
    """

    states: Mapping[str, Any]
    root: str | None = None
    values: tuple[float, ...] | None = None


PriorSpec = Union[BetaPrior, MixturePrior, KnownPrior, ExplicitPrior]


def prior_from_dict(d: Mapping[str, Any]) -> PriorSpec:
    kind = d.get("type")
    if kind == "beta":
        vals = tuple(float(v) for v in d.get("values", (0.0, 1.0)))
        return BetaPrior(int(d["alpha1"]), int(d["alpha0"]), vals)  # type: ignore[arg-type]
    if kind == "mixture":
        comps = tuple((float(w), float(p)) for w, p in d["components"])
        return MixturePrior(comps)
    if kind == "known":
        return KnownPrior(float(d["value"]))
    if kind == "explicit":
        vals = d.get("values")
        return ExplicitPrior(
            states=dict(d["states"]),
            root=d.get("root"),
            values=None if vals is None else tuple(float(v) for v in vals),
        )
    raise ValueError(f"prior.type must be one of beta, mixture, known, explicit (got {kind!r})")


def prior_to_dict(p: PriorSpec) -> dict[str, Any]:
    if isinstance(p, BetaPrior):
        out: dict[str, Any] = {"type": "beta", "alpha1": p.alpha1, "alpha0": p.alpha0}
        if tuple(p.values) != (0.0, 1.0):
            out["values"] = list(p.values)
        return out
    if isinstance(p, MixturePrior):
        return {"type": "mixture", "components": [list(c) for c in p.components]}
    if isinstance(p, KnownPrior):
        return {"type": "known", "value": p.value}
    if isinstance(p, ExplicitPrior):
        out = {"type": "explicit", "states": dict(p.states)}
        if p.root is not None:
            out["root"] = p.root
        if p.values is not None:
            out["values"] = list(p.values)
        return out
    raise TypeError(f"unknown prior {p!r}")


# ---------------------------------------------------------------------------
# generic exchangeable enumeration


def _can_play(depth: int, acc: float, horizon: int, budget: float | None, vmax: float) -> bool:
    if depth >= horizon:
        return False
    # a play is allowed only if even its largest outcome keeps the budget intact
    return budget is None or acc + vmax <= budget + 1e-12


def _enumerate(
    values: np.ndarray,
    horizon: int,
    budget: float | None,
    delay: int,
    root_info: Any,
    predict: Callable[[Any, tuple[int, ...]], np.ndarray],
    update: Callable[[Any, int], Any],
    label: Callable[[tuple[int, ...]], Hashable],
) -> ArmModel:
    """Expand states keyed by their observation counts (exchangeable priors)."""
    d = len(values)
    vmax = float(values[-1])
    keys: list[tuple[int, ...]] = [(0,) * d]
    infos: list[Any] = [root_info]
    index = {keys[0]: 0}
    depth: list[int] = [0]
    rows_p: list[np.ndarray] = []
    rows_c: list[list[int]] = []
    reward: list[float] = []
    playable: list[bool] = []

    u = 0
    while u < len(keys):
        cnt = keys[u]
        p = predict(infos[u], cnt)
        reward.append(float(p @ values))
        acc = float(np.dot(cnt, values))
        ok = _can_play(depth[u], acc, horizon, budget, vmax)
        playable.append(ok)
        kids = [-1] * d
        if ok:
            for j in range(d):
                if p[j] <= 0.0:
                    continue
                nk = cnt[:j] + (cnt[j] + 1,) + cnt[j + 1:]
                v = index.get(nk)
                if v is None:
                    v = len(keys)
                    index[nk] = v
                    keys.append(nk)
                    infos.append(update(infos[u], j))
                    depth.append(depth[u] + 1)
                kids[j] = v
            rows_p.append(p)
        else:
            rows_p.append(np.zeros(d))
        rows_c.append(kids)
        u += 1

    return ArmModel(
        values=np.asarray(values, dtype=float),
        depth=np.asarray(depth, dtype=np.int64),
        reward=np.asarray(reward, dtype=float),
        playable=np.asarray(playable, dtype=bool),
        probs=np.asarray(rows_p, dtype=float).reshape(len(keys), d),
        child=np.asarray(rows_c, dtype=np.int64).reshape(len(keys), d),
        counts=np.asarray(keys, dtype=np.int64).reshape(len(keys), d),
        horizon=int(horizon),
        budget=None if budget is None else float(budget),
        delay=int(delay),
        labels=tuple(label(k) for k in keys),
    )


def _check_common(horizon: int, budget: float | None, delay: int) -> None:
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer (got {horizon!r})")
    if budget is not None and budget < 0:
        raise ValueError(f"budget must be non-negative (got {budget!r})")
    if int(delay) != delay or delay < 0:
        raise ValueError(f"delay must be a non-negative integer (got {delay!r})")


def build_beta_bernoulli(
    alpha1: int,
    alpha0: int,
    horizon: int,
    budget: float | None = None,
    *,
    delay: int = 0,
    values: Sequence[float] = (0.0, 1.0),
) -> ArmModel:
    """Beta-Bernoulli arm over the ``(successes, failures)`` grid.

    ``values`` relabels the two outcomes (failure, success); the posterior
    over which outcome occurs is the usual Beta update.  States are labelled
    ``(s, f)``.
    """
    if int(alpha1) != alpha1 or int(alpha0) != alpha0 or alpha1 < 1 or alpha0 < 1:
        raise ValueError(f"Beta parameters must be integers >= 1 (got {alpha1}, {alpha0})")
    _check_common(horizon, budget, delay)
    vals = np.asarray(values, dtype=float)
    if vals.shape != (2,) or not vals[0] < vals[1] or vals[0] < 0:
        raise ValueError("values must be two increasing non-negative numbers")
    a1, a0 = int(alpha1), int(alpha0)

    def predict(_info: Any, cnt: tuple[int, ...]) -> np.ndarray:
        f, s = cnt
        mu = (a1 + s) / (a1 + a0 + s + f)
        return np.array([1.0 - mu, mu])

    return _enumerate(
        vals, horizon, budget, delay, None, predict,
        lambda info, j: None, lambda cnt: (cnt[1], cnt[0]),
    )


def build_mixture_bernoulli(
    components: Sequence[tuple[float, float]],
    horizon: int,
    budget: float | None = None,
    *,
    delay: int = 0,
    tol: float = DEFAULT_TOL,
) -> ArmModel:
    """Arm whose success probability is one of finitely many types.

    The posterior over types is reweighted by Bayes' rule after each
    observation; types whose weight falls below 1e-15 are dropped.
    """
    comps = [(float(w), float(p)) for w, p in components]
    if not comps:
        raise ValueError("mixture needs at least one component")
    w = np.array([c[0] for c in comps])
    ps = np.array([c[1] for c in comps])
    if np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise ValueError(f"mixture weights must be non-negative and sum to 1 (sum={w.sum()})")
    if np.any(ps < 0) or np.any(ps > 1):
        raise ValueError("success probabilities must lie in [0, 1]")
    _check_common(horizon, budget, delay)

    def predict(wt: np.ndarray, _cnt: tuple[int, ...]) -> np.ndarray:
        mu = float(wt @ ps)
        return np.array([1.0 - mu, mu])

    def update(wt: np.ndarray, j: int) -> np.ndarray:
        nw = wt * (ps if j == 1 else 1.0 - ps)
        nw = nw / nw.sum()
        nw[nw < _PRUNE] = 0.0
        return nw / nw.sum()

    return _enumerate(
        np.array([0.0, 1.0]), horizon, budget, delay, w / w.sum(), predict, update,
        lambda cnt: (cnt[1], cnt[0]),
    )


def build_known(value: float, horizon: int, budget: float | None = None, *, delay: int = 0) -> ArmModel:
    """Arm with no uncertainty: every play shows ``value``.  States are labelled by play count."""
    if value < 0:
        raise ValueError("value must be non-negative")
    _check_common(horizon, budget, delay)
    return _enumerate(
        np.array([float(value)]), horizon, budget, delay, None,
        lambda info, cnt: np.array([1.0]), lambda info, j: None, lambda cnt: cnt[0],
    )


def build_explicit(
    states: Mapping[str, Any],
    horizon: int,
    budget: float | None = None,
    *,
    root: str | None = None,
    values: Sequence[float] | None = None,
    delay: int = 0,
    tol: float = DEFAULT_TOL,
) -> ArmModel:
    """Arm from a hand-written DAG.

    Each entry of ``states`` is ``{"reward": r, "transitions": [[value, prob, next_id], ...]}``;
    a state without transitions is terminal.  States deeper than ``horizon``
    are dropped and states at depth ``horizon`` become unplayable.  Labels are
    the original ids.
    """
    _check_common(horizon, budget, delay)
    if not states:
        raise ValueError("explicit DAG has no states")
    root_id = root if root is not None else next(iter(states))
    if root_id not in states:
        raise ValueError(f"root {root_id!r} is not a state")

    def trans(sid: str) -> list[tuple[float, float, str]]:
        raw = states[sid].get("transitions", [])
        return [(float(q), float(p), str(v)) for q, p, v in raw]

    seen_vals = {q for sid in states for q, _, _ in trans(sid)}
    vals = np.array(sorted(set(values) if values is not None else seen_vals or {0.0}), dtype=float)
    if values is not None and not seen_vals <= set(vals.tolist()):
        raise ValueError("transition values missing from the declared value support")
    if vals[0] < 0:
        raise ValueError("observed values must be non-negative")
    vpos = {float(q): j for j, q in enumerate(vals)}
    d = len(vals)
    vmax = float(vals[-1])

    order = [root_id]
    index = {root_id: 0}
    depth = [0]
    counts = [np.zeros(d, dtype=np.int64)]
    rows_p, rows_c, reward, playable = [], [], [], []
    u = 0
    while u < len(order):
        sid = order[u]
        if sid not in states:
            raise ValueError(f"transition to unknown state {sid!r}")
        reward.append(float(states[sid]["reward"]))
        tr = trans(sid)
        acc = float(counts[u] @ vals)
        ok = bool(tr) and _can_play(depth[u], acc, horizon, budget, vmax)
        p = np.zeros(d)
        kids = [-1] * d
        if ok:
            for q, pr, nxt in tr:
                j = vpos[q]
                if kids[j] != -1 or p[j] != 0:
                    raise ValueError(f"state {sid!r} lists value {q} twice")
                if pr < 0:
                    raise ValueError(f"negative probability at state {sid!r}")
                if pr == 0:
                    continue
                nc = counts[u].copy()
                nc[j] += 1
                v = index.get(nxt)
                if v is None:
                    v = len(order)
                    index[nxt] = v
                    order.append(nxt)
                    depth.append(depth[u] + 1)
                    counts.append(nc)
                else:
                    if depth[v] != depth[u] + 1:
                        raise ValueError(f"state {nxt!r} reached at two different depths")
                    if budget is not None and not np.array_equal(counts[v], nc):
                        raise ValueError(
                            f"state {nxt!r} has path-dependent accumulated reward; budgets need it fixed"
                        )
                p[j] = pr
                kids[j] = v
            if abs(p.sum() - 1.0) > tol:
                raise ValueError(f"transition probabilities at {sid!r} sum to {p.sum()}")
        rows_p.append(p)
        rows_c.append(kids)
        playable.append(ok)
        u += 1

    n = len(order)
    return ArmModel(
        values=vals,
        depth=np.asarray(depth, dtype=np.int64),
        reward=np.asarray(reward, dtype=float),
        playable=np.asarray(playable, dtype=bool),
        probs=np.asarray(rows_p, dtype=float).reshape(n, d),
        child=np.asarray(rows_c, dtype=np.int64).reshape(n, d),
        counts=np.asarray(counts, dtype=np.int64).reshape(n, d),
        horizon=int(horizon),
        budget=None if budget is None else float(budget),
        delay=int(delay),
        labels=tuple(order),
    )


def build_arm(prior: PriorSpec, horizon: int, budget: float | None = None, delay: int = 0) -> ArmModel:
    """Dispatch on the prior type."""
    if isinstance(prior, BetaPrior):
        return build_beta_bernoulli(prior.alpha1, prior.alpha0, horizon, budget, delay=delay, values=prior.values)
    if isinstance(prior, MixturePrior):
        return build_mixture_bernoulli(prior.components, horizon, budget, delay=delay)
    if isinstance(prior, KnownPrior):
        return build_known(prior.value, horizon, budget, delay=delay)
    if isinstance(prior, ExplicitPrior):
        return build_explicit(prior.states, horizon, budget, root=prior.root, values=prior.values, delay=delay)
    raise TypeError(f"unknown prior {prior!r}")


def validate_martingale(model: ArmModel, tol: float = DEFAULT_TOL) -> ValidationReport:
    """Check ``r_u`` against the successor average and the mean observed value.

    Only playable states are inspected, so a model without playable states
    passes trivially.
    """
    idx = np.flatnonzero(model.playable)
    if idx.size == 0:
        return ValidationReport(0.0, (), tol)
    r_pad = np.append(model.reward, 0.0)
    p = model.probs[idx]
    r = model.reward[idx]
    succ = (p * r_pad[model.child_padded[idx]]).sum(axis=1)
    mean_obs = p @ model.values
    dev = np.maximum(np.abs(r - succ), np.abs(r - mean_obs))
    dev = np.maximum(dev, np.abs(p.sum(axis=1) - 1.0))
    bad = idx[dev > tol]
    return ValidationReport(float(dev.max()), tuple(int(b) for b in bad), tol)

"""Problem instances as JSON: schema validation, hashing and arm construction."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np

from .statespace import ArmModel, MixturePrior, PriorSpec, build_arm, prior_from_dict, prior_to_dict
from .switching import MetricSpec

__all__ = [
    "SCHEMA_VERSION",
    "VARIANTS",
    "INSTANCE_SCHEMA",
    "SpecError",
    "ArmSpec",
    "MetricConfig",
    "InstanceSpec",
    "load_instance",
    "gen_tight_instance",
]

SCHEMA_VERSION = 1
VARIANTS = ("base", "adversarial", "switching", "delayed", "maxmab", "budgeted")

_NUM = {"type": "number"}
_PRIOR = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["beta", "mixture", "known", "explicit"]},
        "alpha1": {"type": "integer", "minimum": 1},
        "alpha0": {"type": "integer", "minimum": 1},
        "values": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "components": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "minItems": 2, "maxItems": 2,
                      "items": {"type": "number", "minimum": 0, "maximum": 1}},
        },
        "value": {"type": "number", "minimum": 0},
        "states": {"type": "object"},
        "root": {},
    },
    "allOf": [
        {"if": {"properties": {"type": {"const": "beta"}}}, "then": {"required": ["alpha1", "alpha0"]}},
        {"if": {"properties": {"type": {"const": "mixture"}}}, "then": {"required": ["components"]}},
        {"if": {"properties": {"type": {"const": "known"}}}, "then": {"required": ["value"]}},
        {"if": {"properties": {"type": {"const": "explicit"}}}, "then": {"required": ["states"]}},
    ],
}

INSTANCE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["variant", "T", "arms"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "variant": {"enum": list(VARIANTS)},
        "n": {"type": "integer", "minimum": 1},
        "T": {"type": "integer", "minimum": 1},
        "K": {"type": "integer", "minimum": 1},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "arms": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["prior"],
                "additionalProperties": False,
                "properties": {
                    "prior": _PRIOR,
                    "budget": {"type": ["number", "null"], "minimum": 0},
                    "delay": {"type": "integer", "minimum": 0},
                },
            },
        },
        "metric": {
            "type": "object",
            "required": ["L"],
            "additionalProperties": False,
            "properties": {
                "points": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 1}},
                "distances": {"type": "array", "items": {"type": "array", "items": {"type": "number", "minimum": 0}}},
                "start": {"type": "integer", "minimum": 0},
                "L": {"type": "number", "minimum": 0},
            },
            "oneOf": [{"required": ["points"]}, {"required": ["distances"]}],
        },
        "order": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "feedback_mode": {"enum": ["one_at_a_time", "simultaneous"]},
        "budget_mode": {"enum": ["all_plays", "only_max"]},
        "regime": {"enum": ["auto", "small", "large"]},
    },
}


class SpecError(ValueError):
    """Invalid instance.  ``field`` is a dotted path to the offending entry."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")


@dataclass(frozen=True)
class ArmSpec:
    prior: PriorSpec
    budget: float | None = None
    delay: int = 0

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"prior": prior_to_dict(self.prior)}
        if self.budget is not None:
            out["budget"] = self.budget
        if self.delay:
            out["delay"] = self.delay
        return out


@dataclass(frozen=True)
class MetricConfig:
    L: float
    start: int = 0
    points: tuple[tuple[float, ...], ...] | None = None
    distances: tuple[tuple[float, ...], ...] | None = None

    def matrix(self) -> np.ndarray:
        if self.distances is not None:
            return np.array(self.distances, dtype=float)
        p = np.array(self.points, dtype=float)
        return np.sqrt(((p[:, None, :] - p[None, :, :]) ** 2).sum(axis=-1))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"L": self.L, "start": self.start}
        if self.points is not None:
            out["points"] = [list(p) for p in self.points]
        else:
            out["distances"] = [list(r) for r in self.distances]
        return out


@dataclass(frozen=True)
class InstanceSpec:
    variant: str
    T: int
    arms: tuple[ArmSpec, ...]
    K: int = 1
    epsilon: float = 0.05
    metric: MetricConfig | None = None
    order: tuple[int, ...] | None = None
    alpha: float | None = None
    feedback_mode: str = "one_at_a_time"
    budget_mode: str = "all_plays"
    regime: str = "auto"
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @property
    def n(self) -> int:
        return len(self.arms)

    # -- serialisation ------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "variant": self.variant,
            "n": self.n,
            "T": self.T,
            "K": self.K,
            "epsilon": self.epsilon,
            "arms": [a.to_dict() for a in self.arms],
        }
        if self.metric is not None:
            out["metric"] = self.metric.to_dict()
        if self.order is not None:
            out["order"] = list(self.order)
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.variant == "maxmab":
            out["feedback_mode"] = self.feedback_mode
            out["budget_mode"] = self.budget_mode
        if self.variant == "delayed":
            out["regime"] = self.regime
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "InstanceSpec":
        return _parse(d)

    @classmethod
    def from_json(cls, text: str) -> "InstanceSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError("<document>", f"malformed JSON: {exc.msg} (column {exc.colno})", exc.lineno) from None
        return _parse(d, text)

    # -- arms -----------------------------------------------------------------
    def build_arms(self, horizon: int | None = None) -> list[ArmModel]:
        """Arm models truncated at ``horizon`` plays (default ``T``)."""
        h = self.T if horizon is None else int(horizon)
        key = ("arms", h)
        if key not in self._cache:
            arms = []
            for i, a in enumerate(self.arms):
                try:
                    arms.append(build_arm(a.prior, h, a.budget, a.delay))
                except (ValueError, KeyError, TypeError) as exc:
                    raise SpecError(f"arms.{i}.prior", str(exc)) from None
            self._cache[key] = arms
        return list(self._cache[key])


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else ""
        parts.append(missing)
    if err.validator == "additionalProperties":
        extra = err.message.split("'")[1] if "'" in err.message else ""
        parts.append(extra)
    return ".".join(p for p in parts if p) or "<root>"


def _line_of(text: str | None, key: str) -> int | None:
    if text is None or not key:
        return None
    needle = f'"{key}"'
    for k, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return k
    return None


def _parse(d: Any, text: str | None = None) -> InstanceSpec:
    validator = jsonschema.Draft202012Validator(INSTANCE_SCHEMA)
    errors = sorted(validator.iter_errors(d), key=lambda e: (len(list(e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        where = _path(err)
        raise SpecError(where, err.message, _line_of(text, where.split(".")[-1]))

    arms = []
    for i, a in enumerate(d["arms"]):
        pd = a["prior"]
        if pd["type"] == "mixture":
            w = sum(c[0] for c in pd["components"])
            if abs(w - 1.0) > 1e-9:
                raise SpecError(f"arms.{i}.prior.components", f"weights sum to {w}, not 1")
        if pd["type"] == "beta" and "values" in pd and len(pd["values"]) != 2:
            raise SpecError(f"arms.{i}.prior.values", "a Beta prior needs exactly two values")
        try:
            prior = prior_from_dict(pd)
        except (ValueError, KeyError, TypeError) as exc:
            raise SpecError(f"arms.{i}.prior", str(exc)) from None
        arms.append(ArmSpec(prior, a.get("budget"), int(a.get("delay", 0))))
    n = len(arms)
    if "n" in d and d["n"] != n:
        raise SpecError("n", f"n = {d['n']} but {n} arms are listed")

    variant = d["variant"]
    K = int(d.get("K", 1))
    if K > n:
        raise SpecError("K", f"K = {K} exceeds the number of arms ({n})")

    metric = None
    if variant == "switching":
        if "metric" not in d:
            raise SpecError("metric", "required for the switching variant")
        md = d["metric"]
        start = int(md.get("start", 0))
        if start >= n:
            raise SpecError("metric.start", f"start {start} is not an arm index")
        if "points" in md:
            pts = md["points"]
            if len(pts) != n:
                raise SpecError("metric.points", f"expected {n} points, got {len(pts)}")
            if len({len(p) for p in pts}) != 1:
                raise SpecError("metric.points", "all points need the same dimension")
            metric = MetricConfig(float(md["L"]), start, points=tuple(tuple(map(float, p)) for p in pts))
        else:
            D = np.array(md["distances"], dtype=float)
            if D.shape != (n, n):
                raise SpecError("metric.distances", f"expected an {n}x{n} matrix")
            if not np.allclose(D, D.T) or np.any(np.diag(D) != 0):
                raise SpecError("metric.distances", "must be symmetric with a zero diagonal")
            metric = MetricConfig(float(md["L"]), start, distances=tuple(tuple(map(float, r)) for r in D))
        try:
            MetricSpec(metric.matrix(), metric.start, metric.L)
        except ValueError as exc:
            raise SpecError("metric", str(exc)) from None
        if K != 1:
            raise SpecError("K", "the switching variant supports K = 1 only")
    elif "metric" in d:
        raise SpecError("metric", f"not used by the {variant} variant")

    order = None
    if "order" in d:
        order = tuple(int(i) for i in d["order"])
        if sorted(order) != list(range(n)):
            raise SpecError("order", f"must be a permutation of 0..{n - 1}")

    if any(a.delay for a in arms) and variant != "delayed":
        raise SpecError("arms", "delays are only meaningful for the delayed variant")
    if variant == "budgeted" and any(a.budget is not None for a in arms):
        raise SpecError("arms", "per-arm budgets are not supported by the budgeted variant")

    eps = float(d.get("epsilon", 0.05))
    alpha = d.get("alpha")
    return InstanceSpec(
        variant=variant,
        T=int(d["T"]),
        arms=tuple(arms),
        K=K,
        epsilon=eps,
        metric=metric,
        order=order,
        alpha=None if alpha is None else float(alpha),
        feedback_mode=d.get("feedback_mode", "one_at_a_time"),
        budget_mode=d.get("budget_mode", "all_plays"),
        regime=d.get("regime", "auto"),
    )


def load_instance(path: str | Path) -> InstanceSpec:
    return InstanceSpec.from_json(Path(path).read_text())


def gen_tight_instance(n: int) -> InstanceSpec:
    """``n`` identical two-type arms where the relaxation is loose by nearly a factor 2.

    An arm is "good" with prior probability ``1/n**2``; a good arm pays 1
    with probability ``1 - 1/n`` and 0 otherwise, a bad arm always pays 0.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    p, a = 1.0 / n**2, 1.0 / n
    prior = MixturePrior(((p, 1.0 - a), (1.0 - p, 0.0)))
    return InstanceSpec("base", T=n, arms=tuple(ArmSpec(prior) for _ in range(n)), K=1)


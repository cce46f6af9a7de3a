"""Experiment configuration: JSON schema, validation and a stable digest.

Example document::

    {
      "mode": "two_point", "n": 2, "a": 0.5, "b": 0.25, "limit_mode": true,
      "T": 1024, "seeds": 5,
      "cost": {"family": "pseudo_huber", "drift": "fixed", "center_bound": 1.0, "seed": 0}
    }

Optional keys and defaults: ``checkpoints`` ("dyadic"), ``mu0`` ("zero"),
``comparator`` ("auto"), ``base_seed`` (0), ``record_rounds`` (false),
``cost.drift`` ("fixed"), ``cost.center_bound`` (0.0), ``cost.seed`` (0),
``cost.scale`` (1.0). Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Union

import numpy as np

from zobandit.core import FeedbackMode, ScheduleParams, validate_schedule
from zobandit.costs import CostFamily, CostSequenceSpec, Drift, _parse_enum

Vector = tuple[float, ...]

_TOP_KEYS = {
    "mode", "n", "a", "b", "limit_mode", "T", "checkpoints", "cost", "mu0",
    "seeds", "comparator", "base_seed", "record_rounds",
}
_REQUIRED = ("mode", "n", "a", "b", "T", "seeds", "cost")
_COST_KEYS = {"family", "drift", "center_bound", "seed", "scale"}


class ConfigError(ValueError):
    """Malformed or invalid experiment configuration."""


@dataclass(frozen=True)
class CostConfig:
    family: CostFamily = CostFamily.PSEUDO_HUBER
    drift: Drift = Drift.FIXED
    center_bound: float = 0.0
    seed: int = 0
    scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", _parse_enum(CostFamily, self.family))
        object.__setattr__(self, "drift", _parse_enum(Drift, self.drift))
        object.__setattr__(self, "center_bound", float(self.center_bound))
        object.__setattr__(self, "scale", float(self.scale))


@dataclass(frozen=True)
class ExperimentConfig:
    mode: FeedbackMode
    n: int
    a: float
    b: float
    T: int
    seeds: int
    cost: CostConfig = field(default_factory=CostConfig)
    limit_mode: bool = False
    checkpoints: str = "dyadic"
    mu0: Union[str, Vector] = "zero"
    comparator: Union[str, Vector] = "auto"
    base_seed: int = 0
    record_rounds: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", FeedbackMode.parse(self.mode))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        errors = _validate(self)
        if errors:
            raise ConfigError("; ".join(errors))

    @property
    def schedule(self) -> ScheduleParams:
        return ScheduleParams(self.a, self.b, self.n, self.mode, self.limit_mode)

    @property
    def sequence(self) -> CostSequenceSpec:
        c = self.cost
        return CostSequenceSpec(c.family, self.n, c.center_bound, c.drift, c.seed, c.scale)

    def mu0_vector(self) -> np.ndarray:
        if self.mu0 == "zero":
            return np.zeros(self.n)
        return np.array(self.mu0, dtype=np.float64)

    def checkpoint_rounds(self) -> list[int]:
        if self.checkpoints == "dyadic":
            pts = [1 << k for k in range(self.T.bit_length()) if (1 << k) <= self.T]
        else:
            step = max(1, self.T // 16)
            pts = list(range(step, self.T + 1, step))
        if pts[-1] != self.T:
            pts.append(self.T)
        return pts

    def to_dict(self) -> dict[str, Any]:
        c = self.cost
        return {
            "mode": self.mode.value,
            "n": self.n,
            "a": self.a,
            "b": self.b,
            "limit_mode": self.limit_mode,
            "T": self.T,
            "checkpoints": self.checkpoints,
            "cost": {
                "family": c.family.value,
                "drift": c.drift.value,
                "center_bound": c.center_bound,
                "seed": c.seed,
                "scale": c.scale,
            },
            "mu0": self.mu0 if isinstance(self.mu0, str) else list(self.mu0),
            "seeds": self.seeds,
            "comparator": self.comparator if isinstance(self.comparator, str) else list(self.comparator),
            "base_seed": self.base_seed,
            "record_rounds": self.record_rounds,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def replace(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def _validate(cfg: ExperimentConfig) -> list[str]:
    errors = []
    verdict = validate_schedule(cfg.schedule)
    errors += [f"schedule constraint {v} violated (a={cfg.a}, b={cfg.b}, mode={cfg.mode.value})" for v in verdict.violations]
    if cfg.seeds < 1:
        errors.append("seeds must be >= 1")
    if cfg.T < 2:
        errors.append("T must be >= 2")
    if cfg.checkpoints not in ("dyadic", "linear"):
        errors.append(f"checkpoints must be 'dyadic' or 'linear', got {cfg.checkpoints!r}")
    for name in ("mu0", "comparator"):
        v = getattr(cfg, name)
        if isinstance(v, str):
            allowed = ("zero",) if name == "mu0" else ("auto", "origin")
            if v not in allowed:
                errors.append(f"{name} must be one of {allowed} or a vector, got {v!r}")
        elif len(v) != cfg.n or not all(math.isfinite(x) for x in v):
            errors.append(f"{name} must be a finite vector of length n={cfg.n}")
    c = cfg.cost
    if not (c.center_bound >= 0 and math.isfinite(c.center_bound)):
        errors.append("cost.center_bound must be finite and >= 0")
    if not c.scale > 0:
        errors.append("cost.scale must be positive")
    return errors


def _expect(value, kind, key):
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key {key!r}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key {key!r}: expected a number, got {value!r}")
        return float(value)
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"key {key!r}: expected true/false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"key {key!r}: expected a string, got {value!r}")
        return value
    raise AssertionError(kind)


def _vector_or_keyword(value, key) -> Union[str, Vector]:
    if isinstance(value, str):
        return value.strip().lower()
    if isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        return tuple(float(v) for v in value)
    raise ConfigError(f"key {key!r}: expected a keyword or a list of numbers, got {value!r}")


def config_from_dict(doc: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    cost_doc = doc["cost"]
    if not isinstance(cost_doc, dict):
        raise ConfigError("key 'cost': expected an object")
    unknown = sorted(set(cost_doc) - _COST_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join('cost.' + k for k in unknown)}")
    if "family" not in cost_doc:
        raise ConfigError("missing required key(s): cost.family")
    try:
        cost = CostConfig(
            family=_parse_enum(CostFamily, _expect(cost_doc["family"], str, "cost.family")),
            drift=_parse_enum(Drift, _expect(cost_doc.get("drift", "fixed"), str, "cost.drift")),
            center_bound=_expect(cost_doc.get("center_bound", 0.0), float, "cost.center_bound"),
            seed=_expect(cost_doc.get("seed", 0), int, "cost.seed"),
            scale=_expect(cost_doc.get("scale", 1.0), float, "cost.scale"),
        )
        mode = FeedbackMode.parse(_expect(doc["mode"], str, "mode"))
        n = _expect(doc["n"], int, "n")
        if n < 1:
            raise ConfigError("key 'n': dimension must be >= 1")
        return ExperimentConfig(
            mode=mode,
            n=n,
            a=_expect(doc["a"], float, "a"),
            b=_expect(doc["b"], float, "b"),
            T=_expect(doc["T"], int, "T"),
            seeds=_expect(doc["seeds"], int, "seeds"),
            cost=cost,
            limit_mode=_expect(doc.get("limit_mode", False), bool, "limit_mode"),
            checkpoints=_expect(doc.get("checkpoints", "dyadic"), str, "checkpoints"),
            mu0=_vector_or_keyword(doc.get("mu0", "zero"), "mu0"),
            comparator=_vector_or_keyword(doc.get("comparator", "auto"), "comparator"),
            base_seed=_expect(doc.get("base_seed", 0), int, "base_seed"),
            record_rounds=_expect(doc.get("record_rounds", False), bool, "record_rounds"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a JSON config document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(doc)


def config_hash(cfg: ExperimentConfig) -> str:
    """Digest of the canonical config. Episode seeds are not part of the config."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

"""Shared domain types and the step-size / exploration schedules.

Rounds are 1-indexed. ``t = 0`` only ever labels the initial mean.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

ActionVector = np.ndarray
ArrayLike = Union[np.ndarray, Sequence[float]]

# Exact limit configurations admitted by ``limit_mode``.
LIMIT_POINTS = {
    "one_point": (2.0 / 3.0, 1.0 / 6.0),
    "two_point": (0.5, 0.25),
}


class FeedbackMode(str, enum.Enum):
    ONE_POINT = "one_point"
    TWO_POINT = "two_point"

    @property
    def queries_per_round(self) -> int:
        return 1 if self is FeedbackMode.ONE_POINT else 2

    @classmethod
    def parse(cls, value: Union[str, "FeedbackMode"]) -> "FeedbackMode":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"onepoint": "one_point", "twopoint": "two_point", "1": "one_point", "2": "two_point"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown feedback mode {value!r}") from None


def as_action(x: ArrayLike, n: int | None = None) -> ActionVector:
    """Coerce ``x`` to a finite float64 vector, optionally checking its length."""
    arr = np.array(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"action vector must be one-dimensional, got shape {arr.shape}")
    if arr.size < 1:
        raise ValueError("action vector must have at least one coordinate")
    if n is not None and arr.size != n:
        raise ValueError(f"expected dimension {n}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("action vector has non-finite coordinates")
    return arr


@dataclass(frozen=True)
class ScheduleParams:
    """Decay exponents for ``alpha_t = (n t)^-a`` and ``sigma_t = (n t)^-b``."""

    a: float
    b: float
    n: int
    mode: FeedbackMode = FeedbackMode.ONE_POINT
    limit_mode: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", FeedbackMode.parse(self.mode))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"dimension n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    def alpha(self, t):
        return schedule_alpha(self, t)

    def sigma(self, t):
        return schedule_sigma(self, t)


@dataclass(frozen=True)
class ScheduleVerdict:
    violations: tuple[str, ...] = field(default_factory=tuple)
    at_limit: bool = False

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def describe(self) -> str:
        if self.ok:
            return "ok (closed-boundary limit point)" if self.at_limit else "ok"
        return "violated: " + ", ".join(self.violations)


@dataclass(frozen=True)
class EstimatorNoise:
    """A realized gradient-noise sample (``xi`` for one-point, ``zeta`` for two-point)."""

    vector: ActionVector
    mode: FeedbackMode

    def __post_init__(self) -> None:
        object.__setattr__(self, "vector", as_action(self.vector))
        object.__setattr__(self, "mode", FeedbackMode.parse(self.mode))


def _check_rounds(t) -> np.ndarray:
    arr = np.asarray(t)
    if arr.dtype.kind not in "iuf":
        raise TypeError(f"round index must be numeric, got {t!r}")
    if np.any(arr < 1):
        raise ValueError("schedules are defined for rounds t >= 1")
    return arr.astype(np.float64)


def schedule_alpha(params: ScheduleParams, t):
    """Step size ``(n t)^(-a)``; accepts a scalar round or an array of rounds."""
    tt = _check_rounds(t)
    out = (params.n * tt) ** (-params.a)
    return float(out) if np.ndim(out) == 0 else out


def schedule_sigma(params: ScheduleParams, t):
    """Exploration scale (standard deviation) ``(n t)^(-b)``."""
    tt = _check_rounds(t)
    out = (params.n * tt) ** (-params.b)
    return float(out) if np.ndim(out) == 0 else out


def _is_limit_point(a: float, b: float, mode: FeedbackMode, tol: float = 1e-12) -> bool:
    la, lb = LIMIT_POINTS[mode.value]
    return abs(a - la) <= tol and abs(b - lb) <= tol


def validate_schedule(params: ScheduleParams, limit_mode: bool | None = None) -> ScheduleVerdict:
    """Check the exponent constraints for the schedule's feedback mode.

    Strict interior points only, unless ``limit_mode`` is set, in which case the
    exact optimum of the mode (2/3, 1/6 one-point; 1/2, 1/4 two-point) also passes.
    """
    if limit_mode is None:
        limit_mode = params.limit_mode
    a, b = params.a, params.b
    violations = []
    if not (0.0 < a < 1.0):
        violations.append("0<a<1")
    if not (b > 0.0):
        violations.append("b>0")
    if params.mode is FeedbackMode.ONE_POINT and not (2 * a - 2 * b > 1.0):
        violations.append("2a-2b>1")
    at_limit = _is_limit_point(a, b, params.mode)
    if violations and limit_mode and at_limit:
        return ScheduleVerdict((), at_limit=True)
    return ScheduleVerdict(tuple(violations), at_limit=at_limit and not violations)

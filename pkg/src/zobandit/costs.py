"""Admissible convex cost families with certified constants (l, L, K).

Every family is a function of ``d = x - center`` only, so one round of the
sequence is fully described by its center. Kernels broadcast over leading
axes: ``x`` may be a single action ``(n,)`` or a batch ``(..., n)``.

The learner never sees anything here except ``CostInstance.value``; gradients
are exposed for the harness (comparator search) and the verification oracles.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.optimize import brentq

from zobandit.core import ActionVector, ArrayLike, as_action

EPS_K = 1e-6
DEFAULT_OMEGA = 0.1
DEFAULT_WALK_STEP = 0.05
_LOG2 = math.log(2.0)


class CostFamily(str, enum.Enum):
    PSEUDO_HUBER = "pseudo_huber"
    SOFT_ABS = "soft_abs"
    LINEAR_SATURATING = "linear_saturating"
    MIXTURE = "mixture"


class Drift(str, enum.Enum):
    FIXED = "fixed"
    ROTATING = "rotating"
    RANDOM_WALK = "random_walk"


def _parse_enum(cls, value):
    if isinstance(value, cls):
        return value
    try:
        return cls(str(value).strip().lower())
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown {cls.__name__} {value!r} (expected one of: {choices})") from None


# -- kernels on d = x - center ------------------------------------------------


def _sqnorm(d: np.ndarray) -> np.ndarray:
    return (d * d).sum(axis=-1)


def _pseudo_huber_value(d, s):
    r2 = _sqnorm(d)
    # sqrt(s^2 + r^2) - s without cancellation near the center
    return r2 / (np.sqrt(s * s + r2) + s)


def _pseudo_huber_grad(d, s):
    return d / np.sqrt(s * s + _sqnorm(d))[..., None]


def _soft_abs_value(d, s):
    u = np.abs(d / s)
    return s * (u + np.log1p(np.exp(-2.0 * u)) - _LOG2).sum(axis=-1)


def _soft_abs_grad(d, s):
    return np.tanh(d / s)


def _linear_saturating_value(d, s):
    r = np.sqrt(_sqnorm(d))
    return np.where(r <= s, r * r / (2.0 * s), r - 0.5 * s)


def _linear_saturating_grad(d, s):
    r = np.sqrt(_sqnorm(d))[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        outer = d / r
    return np.where(r <= s, d / s, outer)


_MIXTURE_PARTS = (CostFamily.PSEUDO_HUBER, CostFamily.SOFT_ABS, CostFamily.LINEAR_SATURATING)


def _mixture_value(d, s):
    return sum(_VALUE[f](d, s) for f in _MIXTURE_PARTS) / len(_MIXTURE_PARTS)


def _mixture_grad(d, s):
    return sum(_GRAD[f](d, s) for f in _MIXTURE_PARTS) / len(_MIXTURE_PARTS)


_VALUE = {
    CostFamily.PSEUDO_HUBER: _pseudo_huber_value,
    CostFamily.SOFT_ABS: _soft_abs_value,
    CostFamily.LINEAR_SATURATING: _linear_saturating_value,
    CostFamily.MIXTURE: _mixture_value,
}
_GRAD = {
    CostFamily.PSEUDO_HUBER: _pseudo_huber_grad,
    CostFamily.SOFT_ABS: _soft_abs_grad,
    CostFamily.LINEAR_SATURATING: _linear_saturating_grad,
    CostFamily.MIXTURE: _mixture_grad,
}


def family_value(family: CostFamily, d: np.ndarray, scale: float = 1.0) -> np.ndarray:
    return _VALUE[family](np.asarray(d, dtype=np.float64), scale)


def family_gradient(family: CostFamily, d: np.ndarray, scale: float = 1.0) -> np.ndarray:
    return _GRAD[family](np.asarray(d, dtype=np.float64), scale)


# -- single-round costs ----------------------------------------------------------


class Cost(Protocol):
    """Anything the oracles and the harness can evaluate."""

    @property
    def dim(self) -> int: ...

    def value(self, x: ArrayLike) -> np.ndarray: ...

    def gradient(self, x: ArrayLike) -> np.ndarray: ...


def _check_batch(x: ArrayLike, n: int) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] != n:
        raise ValueError(f"dimension mismatch: cost has n={n}, query has shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class CostInstance:
    """One round's cost ``c_t``."""

    family: CostFamily
    center: ActionVector
    scale: float = 1.0
    round: int = 1
    admissible = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", _parse_enum(CostFamily, self.family))
        object.__setattr__(self, "center", as_action(self.center))
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale!r}")

    @property
    def dim(self) -> int:
        return self.center.size

    def value(self, x):
        d = _check_batch(x, self.dim) - self.center
        return _VALUE[self.family](d, self.scale)

    def gradient(self, x):
        d = _check_batch(x, self.dim) - self.center
        return _GRAD[self.family](d, self.scale)


@dataclass(frozen=True, eq=False)
class LinearCost:
    """``(g, x) + offset``. Test function only: unbounded below, no radial condition."""

    g: ActionVector
    offset: float = 0.0
    admissible = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "g", as_action(self.g))

    @property
    def dim(self) -> int:
        return self.g.size

    def value(self, x):
        x = _check_batch(x, self.dim)
        return (x * self.g).sum(axis=-1) + self.offset

    def gradient(self, x):
        x = _check_batch(x, self.dim)
        return np.broadcast_to(self.g, x.shape).copy()

    def smoothed_exact(self, mu, sigma):
        return self.value(mu), self.gradient(mu)


@dataclass(frozen=True, eq=False)
class ConstantCost:
    level: float
    n: int
    admissible = False

    @property
    def dim(self) -> int:
        return self.n

    def value(self, x):
        x = _check_batch(x, self.dim)
        return np.full(x.shape[:-1], float(self.level))

    def gradient(self, x):
        x = _check_batch(x, self.dim)
        return np.zeros_like(x)

    def smoothed_exact(self, mu, sigma):
        return self.value(mu), self.gradient(mu)


@dataclass(frozen=True, eq=False)
class QuadraticCost:
    """``0.5 ||x - center||^2``: tight case for the smoothing gap, unbounded gradient."""

    center: ActionVector
    admissible = False
    lipschitz_gradient = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", as_action(self.center))

    @property
    def dim(self) -> int:
        return self.center.size

    def value(self, x):
        d = _check_batch(x, self.dim) - self.center
        return 0.5 * _sqnorm(d)

    def gradient(self, x):
        return _check_batch(x, self.dim) - self.center

    def smoothed_exact(self, mu, sigma):
        return self.value(mu) + 0.5 * self.dim * sigma**2, self.gradient(mu)


def evaluate(inst: Cost, x: ArrayLike) -> float:
    """Bandit feedback: the cost value at one action."""
    x = as_action(x)
    if x.size != inst.dim:
        raise ValueError(f"dimension mismatch: cost has n={inst.dim}, x has n={x.size}")
    return float(inst.value(x))


def true_gradient(inst: Cost, x: ArrayLike) -> ActionVector:
    x = as_action(x)
    if x.size != inst.dim:
        raise ValueError(f"dimension mismatch: cost has n={inst.dim}, x has n={x.size}")
    return np.asarray(inst.gradient(x), dtype=np.float64)


# -- sequences ---------------------------------------------------------------


@dataclass(frozen=True)
class CostSequenceSpec:
    """An oblivious cost sequence: one family, centers that drift inside a ball."""

    family: CostFamily
    dimension: int
    center_bound: float
    drift: Drift = Drift.FIXED
    seed: int = 0
    scale: float = 1.0
    omega: float = DEFAULT_OMEGA
    walk_step: float = DEFAULT_WALK_STEP

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", _parse_enum(CostFamily, self.family))
        object.__setattr__(self, "drift", _parse_enum(Drift, self.drift))
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dimension!r}")
        object.__setattr__(self, "dimension", int(self.dimension))
        if not (self.center_bound >= 0 and math.isfinite(self.center_bound)):
            raise ValueError(f"center_bound must be finite and >= 0, got {self.center_bound!r}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale!r}")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def dim(self) -> int:
        return self.dimension

    def centers(self, horizon: int) -> np.ndarray:
        return centers(self, horizon)

    def round_value(self, center: np.ndarray, x: np.ndarray) -> np.ndarray:
        return _VALUE[self.family](x - center, self.scale)

    def round_gradient(self, center: np.ndarray, x: np.ndarray) -> np.ndarray:
        return _GRAD[self.family](x - center, self.scale)


def _unit_direction(seed: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xC0FFEE])))
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


@functools.lru_cache(maxsize=16)
def _random_walk(seed: int, n: int, radius: float, step: float, horizon: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xBEEF])))
    steps = rng.standard_normal((horizon, n)) * (step * radius / math.sqrt(n))
    out = np.empty((horizon, n))
    theta = np.zeros(n)
    for i in range(horizon):
        theta = theta + steps[i]
        norm = math.sqrt(float(theta @ theta))
        if norm > radius:
            theta = theta * (radius / norm)
        out[i] = theta
    out.setflags(write=False)
    return out


def centers(spec: CostSequenceSpec, horizon: int) -> np.ndarray:
    """Centers for rounds ``1..horizon`` as a ``(horizon, n)`` array.

    Prefixes agree: ``centers(spec, T1) == centers(spec, T2)[:T1]``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    n, R = spec.dimension, spec.center_bound
    if spec.drift is Drift.FIXED:
        theta = R * _unit_direction(spec.seed, n)
        return np.broadcast_to(theta, (horizon, n)).copy()
    if spec.drift is Drift.ROTATING:
        t = np.arange(1, horizon + 1, dtype=np.float64)
        out = np.zeros((horizon, n))
        out[:, 0] = R * np.cos(spec.omega * t)
        if n >= 2:
            out[:, 1] = R * np.sin(spec.omega * t)
        return out
    if R == 0:
        return np.zeros((horizon, n))
    return np.array(_random_walk(spec.seed, n, R, spec.walk_step, horizon))


def generate_round(spec: CostSequenceSpec, t: int) -> CostInstance:
    if t < 1:
        raise ValueError("rounds start at t = 1")
    theta = centers(spec, t)[t - 1]
    return CostInstance(spec.family, theta, spec.scale, t)


# -- certified constants --------------------------------------------------------


@dataclass(frozen=True)
class CostConstants:
    l: float  # uniform gradient bound
    L: float  # gradient Lipschitz constant
    K: float  # radial threshold: (x, grad c(x)) > 0 whenever ||x||^2 > K

    def __iter__(self):
        return iter((self.l, self.L, self.K))


def _soft_abs_radius_sq(n: int, R: float, s: float) -> float:
    """Smallest K certified by a coordinate-wise argument for the soft-abs family.

    Coordinates between 0 and their center pull inward by at most
    ``sum |theta_i| <= sqrt(n) R`` in total; the largest coordinate
    ``m >= ||x|| / sqrt(n)`` pushes outward by at least ``m tanh((m - R)/s)``.
    """
    if R == 0:
        return 0.0
    target = math.sqrt(n) * R

    def excess(m):
        return m * math.tanh((m - R) / s) - target

    hi = R + target + s
    while excess(hi) <= 0:
        hi *= 2
    m_star = brentq(excess, R, hi, xtol=1e-14, rtol=1e-14)
    return n * m_star * m_star * (1 + 1e-12)


def constants(spec: CostSequenceSpec) -> CostConstants:
    n, R, s = spec.dimension, spec.center_bound, spec.scale
    fam = spec.family
    if fam is CostFamily.PSEUDO_HUBER or fam is CostFamily.LINEAR_SATURATING:
        l, L, K = 1.0, 1.0 / s, R * R
    elif fam is CostFamily.SOFT_ABS:
        l, L, K = math.sqrt(n), 1.0 / s, _soft_abs_radius_sq(n, R, s)
    elif fam is CostFamily.MIXTURE:
        l = (2.0 + math.sqrt(n)) / 3.0
        L = 1.0 / s
        K = max(R * R, _soft_abs_radius_sq(n, R, s))
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown cost family {fam!r}")
    return CostConstants(l, L, max(K, EPS_K))


@dataclass(frozen=True, eq=False)
class StaticSequence:
    """The same cost every round; lets test functions drive the harness."""

    cost: Cost
    constants: CostConstants = field(default_factory=lambda: CostConstants(0.0, 0.0, EPS_K))

    @property
    def dim(self) -> int:
        return self.cost.dim

    def centers(self, horizon: int) -> np.ndarray:
        return np.zeros((horizon, 0))

    def round_value(self, center, x):
        return self.cost.value(x)

    def round_gradient(self, center, x):
        return self.cost.gradient(x)

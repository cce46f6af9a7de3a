"""Numerical oracle for the Gaussian-smoothed cost and its gradient.

``smoothed(mu) = E[c(mu + sigma Z)]`` and ``grad smoothed(mu) = E[grad c(mu + sigma Z)]``
with ``Z ~ N(0, I_n)``. Two routes: tensor-product Gauss-Hermite quadrature
(n <= 6) and plain Monte Carlo. Every result carries an error estimate, and
every check compares against ``bound + error``.

Verification only. The learner never imports this module.
"""

from __future__ import annotations

import enum
import functools
import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from zobandit.core import ActionVector, ArrayLike, FeedbackMode, as_action
from zobandit.costs import Cost
from zobandit.optimizer import gradient_estimate_one_point, gradient_estimate_two_point

MAX_QUADRATURE_DIM = 6
_CHUNK = 1 << 16


class SmoothingMethod(str, enum.Enum):
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte_carlo"


def default_budget(method: SmoothingMethod, n: int) -> int:
    if method is SmoothingMethod.MONTE_CARLO:
        return 1_000_000
    return 64 if n <= 2 else 16


@dataclass(frozen=True)
class SmoothedQuery:
    mu: ActionVector
    sigma: float
    method: SmoothingMethod = SmoothingMethod.QUADRATURE
    sample_budget: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mu", as_action(self.mu))
        object.__setattr__(self, "method", SmoothingMethod(self.method))
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        if self.sample_budget is None:
            object.__setattr__(self, "sample_budget", default_budget(self.method, self.mu.size))
        if self.sample_budget < 2:
            raise ValueError(f"sample_budget must be >= 2, got {self.sample_budget}")
        if self.method is SmoothingMethod.QUADRATURE and self.mu.size > MAX_QUADRATURE_DIM:
            raise ValueError(
                f"quadrature supports n <= {MAX_QUADRATURE_DIM} (nodes grow as budget^n), got n={self.mu.size}"
            )


@functools.lru_cache(maxsize=32)
def _hermite_rule(m: int) -> tuple[np.ndarray, np.ndarray]:
    # probabilists' Hermite: weight exp(-z^2/2); normalize to a N(0,1) expectation
    z, w = np.polynomial.hermite_e.hermegauss(m)
    return z, w / w.sum()


def _tensor_expectation(func, mu: np.ndarray, sigma: float, m: int):
    """``E[func(mu + sigma Z)]`` by an m^n tensor rule, plus ``sum w |func|`` for a rounding floor."""
    n = mu.size
    z, w = _hermite_rule(m)
    total = None
    abs_total = 0.0
    # Chunk over the leading axis so n = 6 at 16 nodes stays in memory.
    lead = max(1, min(m, _CHUNK // max(1, m ** (n - 1))))
    rest = list(itertools.product(range(m), repeat=n - 1))
    rest_idx = np.array(rest, dtype=np.intp).reshape(len(rest), n - 1)
    rest_w = np.prod(w[rest_idx], axis=1) if n > 1 else np.ones(1)
    rest_z = z[rest_idx] if n > 1 else np.zeros((1, 0))
    for start in range(0, m, lead):
        heads = np.arange(start, min(m, start + lead))
        pts = np.empty((heads.size, rest_z.shape[0], n))
        pts[:, :, 0] = z[heads][:, None]
        pts[:, :, 1:] = rest_z[None, :, :]
        weights = (w[heads][:, None] * rest_w[None, :]).reshape(-1)
        vals = np.asarray(func(mu + sigma * pts.reshape(-1, n)))
        contrib = np.tensordot(weights, vals, axes=(0, 0))
        total = contrib if total is None else total + contrib
        abs_total += float(np.tensordot(weights, np.abs(vals), axes=(0, 0)).sum())
    return total, abs_total


def _quadrature(func, q: SmoothedQuery):
    m = q.sample_budget
    fine, scale = _tensor_expectation(func, q.mu, q.sigma, m)
    coarse, _ = _tensor_expectation(func, q.mu, q.sigma, max(1, m // 2))
    err = float(np.linalg.norm(np.atleast_1d(fine - coarse)))
    floor = 64 * np.finfo(float).eps * max(scale, 1e-300)
    return fine, max(err, floor)


def _monte_carlo(func, q: SmoothedQuery, rng: np.random.Generator):
    n, N = q.mu.size, q.sample_budget
    s1 = None
    s2 = None
    done = 0
    while done < N:
        k = min(_CHUNK * 4, N - done)
        vals = np.asarray(func(q.mu + q.sigma * rng.standard_normal((k, n))))
        a = vals.sum(axis=0)
        b = (vals * vals).sum(axis=0)
        s1 = a if s1 is None else s1 + a
        s2 = b if s2 is None else s2 + b
        done += k
    mean = s1 / N
    var = np.maximum(s2 / N - mean * mean, 0.0) * N / (N - 1)
    se = np.sqrt(var / N)
    return mean, float(3.0 * np.linalg.norm(np.atleast_1d(se)))


def _default_rng(rng):
    if rng is None:
        return np.random.Generator(np.random.Philox(0))
    return rng


def _check_dim(c: Cost, q: SmoothedQuery) -> None:
    if c.dim != q.mu.size:
        raise ValueError(f"dimension mismatch: cost has n={c.dim}, mu has n={q.mu.size}")


def smoothed_cost(c: Cost, q: SmoothedQuery, rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Gaussian-smoothed cost at ``q.mu`` and an upper estimate of its numerical error.

    Quadrature error is the gap to the rule with half the nodes per axis;
    Monte Carlo error is three standard errors.
    """
    _check_dim(c, q)
    if q.method is SmoothingMethod.QUADRATURE:
        val, err = _quadrature(c.value, q)
    else:
        val, err = _monte_carlo(c.value, q, _default_rng(rng))
    return float(val), err


def smoothed_gradient(c: Cost, q: SmoothedQuery, rng: np.random.Generator | None = None) -> tuple[ActionVector, float]:
    """Gaussian average of the true gradient; error is a Euclidean-norm estimate."""
    _check_dim(c, q)
    if q.method is SmoothingMethod.QUADRATURE:
        vec, err = _quadrature(c.gradient, q)
    else:
        vec, err = _monte_carlo(c.gradient, q, _default_rng(rng))
    return np.asarray(vec, dtype=np.float64).reshape(q.mu.size), err


def reference_gradient(c: Cost, mu: ActionVector, sigma: float) -> tuple[ActionVector, float]:
    """Best available smoothed gradient: closed form if the cost has one, else quadrature."""
    mu = as_action(mu, c.dim)
    exact = getattr(c, "smoothed_exact", None)
    if exact is not None:
        return np.asarray(exact(mu, sigma)[1], dtype=np.float64), 0.0
    if mu.size > MAX_QUADRATURE_DIM:
        return smoothed_gradient(c, SmoothedQuery(mu, sigma, SmoothingMethod.MONTE_CARLO, 4_000_000))
    return smoothed_gradient(c, SmoothedQuery(mu, sigma))


@dataclass(frozen=True)
class SmoothingGap:
    gap: float
    bound: float
    error_estimate: float
    ok: bool


def verify_smoothing_gap(
    c: Cost,
    mu: ArrayLike,
    sigma: float,
    L: float,
    method: SmoothingMethod = SmoothingMethod.QUADRATURE,
    sample_budget: int | None = None,
    rng: np.random.Generator | None = None,
) -> SmoothingGap:
    """``|c(mu) - smoothed(mu)| <= n L sigma^2 / 2`` up to the oracle's error."""
    q = SmoothedQuery(mu, sigma, method, sample_budget)
    sm, err = smoothed_cost(c, q, rng)
    gap = abs(float(c.value(q.mu)) - sm)
    bound = q.mu.size * L * sigma * sigma / 2.0
    return SmoothingGap(gap, bound, err, bool(gap <= bound + err))


@dataclass(frozen=True)
class UnbiasednessReport:
    mc_mean: ActionVector
    oracle_grad: ActionVector
    standard_error: ActionVector
    z_scores: ActionVector
    samples: int
    threshold: float = 4.0

    @property
    def ok(self) -> bool:
        return bool(np.all(np.abs(self.z_scores) < self.threshold))


def sample_estimator(
    c: Cost,
    mu: ActionVector,
    sigma: float,
    mode: FeedbackMode,
    samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``samples`` independent draws of the learner's gradient estimator at ``mu``."""
    mode = FeedbackMode.parse(mode)
    x = mu + sigma * rng.standard_normal((samples, mu.size))
    cx = c.value(x)
    if mode is FeedbackMode.TWO_POINT:
        return gradient_estimate_two_point(cx, float(c.value(mu)), x, mu, sigma)
    return gradient_estimate_one_point(cx, x, mu, sigma)


def _z(diff: np.ndarray, se: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        z = diff / se
    z = np.where(se > 0, z, np.where(diff == 0, 0.0, np.inf))
    return z


def verify_unbiasedness(
    c: Cost,
    mu: ArrayLike,
    sigma: float,
    mode: FeedbackMode,
    mc_samples: int = 1_000_000,
    rng: np.random.Generator | None = None,
) -> UnbiasednessReport:
    """Monte Carlo mean of the estimator against the smoothed-gradient oracle."""
    if mc_samples < 10_000:
        raise ValueError("mc_samples must be >= 10^4")
    mu = as_action(mu, c.dim)
    rng = _default_rng(rng)
    oracle, _ = reference_gradient(c, mu, sigma)
    s1 = np.zeros(mu.size)
    s2 = np.zeros(mu.size)
    done = 0
    while done < mc_samples:
        k = min(_CHUNK * 4, mc_samples - done)
        est = sample_estimator(c, mu, sigma, mode, k, rng)
        s1 += est.sum(axis=0)
        s2 += (est * est).sum(axis=0)
        done += k
    mean = s1 / mc_samples
    var = np.maximum(s2 / mc_samples - mean * mean, 0.0) * mc_samples / (mc_samples - 1)
    se = np.sqrt(var / mc_samples)
    return UnbiasednessReport(mean, oracle, se, _z(mean - oracle, se), mc_samples)


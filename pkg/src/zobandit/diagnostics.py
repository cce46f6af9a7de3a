"""Empirical checks of the estimator-noise moments and of iterate boundedness.

Noise is ``reference_gradient - estimator``: the deviation of one draw of the
learner's gradient estimate from the smoothed gradient it targets in
expectation. Growth orders are checked as log-log slopes, never as constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from zobandit.config import ExperimentConfig
from zobandit.core import ActionVector, ArrayLike, FeedbackMode, as_action, validate_schedule
from zobandit.costs import Cost, constants
from zobandit.harness import fit_loglog, run_batch
from zobandit.smoothing import _CHUNK, reference_gradient, sample_estimator

MIN_SAMPLES = 10_000


@dataclass(frozen=True)
class MomentReport:
    mode: FeedbackMode
    mu: ActionVector
    sigma: float
    n: int
    samples: int
    m2: float
    m3: float
    m4: float
    standard_errors: tuple[float, float, float]

    def lyapunov_ok(self, k: float = 4.0) -> bool:
        """``m2^(1/2) <= m3^(1/3) <= m4^(1/4)``, each with ``k`` standard errors of slack.

        The root moments' standard errors come from the delta method.
        """
        se2, se3, se4 = self.standard_errors
        r2, r3, r4 = self.m2 ** 0.5, self.m3 ** (1 / 3), self.m4 ** 0.25
        d2 = se2 / (2 * r2) if r2 > 0 else 0.0
        d3 = se3 / (3 * r3 * r3) if r3 > 0 else 0.0
        d4 = se4 / (4 * r4 ** 3) if r4 > 0 else 0.0
        return r2 <= r3 + k * math.hypot(d2, d3) and r3 <= r4 + k * math.hypot(d3, d4)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "mu": self.mu.tolist(),
            "sigma": self.sigma,
            "n": self.n,
            "samples": self.samples,
            "m2": self.m2,
            "m3": self.m3,
            "m4": self.m4,
            "standard_errors": list(self.standard_errors),
        }


def estimate_noise_moments(
    c: Cost,
    mu: ArrayLike,
    sigma: float,
    mode: FeedbackMode,
    samples: int = 1_000_000,
    rng: np.random.Generator | None = None,
) -> MomentReport:
    """Empirical ``E||noise||^k`` for k = 2, 3, 4 with their standard errors."""
    if samples < MIN_SAMPLES:
        raise ValueError(f"samples must be >= {MIN_SAMPLES}, got {samples}")
    mode = FeedbackMode.parse(mode)
    mu = as_action(mu, c.dim)
    rng = np.random.Generator(np.random.Philox(0)) if rng is None else rng
    oracle, _ = reference_gradient(c, mu, sigma)
    sums = np.zeros(3)
    sq = np.zeros(3)
    done = 0
    while done < samples:
        k = min(_CHUNK * 4, samples - done)
        noise = oracle - sample_estimator(c, mu, sigma, mode, k, rng)
        r2 = (noise * noise).sum(axis=1)
        r = np.sqrt(r2)
        powers = np.stack([r2, r2 * r, r2 * r2])
        sums += powers.sum(axis=1)
        sq += (powers * powers).sum(axis=1)
        done += k
    means = sums / samples
    var = np.maximum(sq / samples - means * means, 0.0) * samples / (samples - 1)
    se = np.sqrt(var / samples)
    return MomentReport(
        mode, mu, float(sigma), mu.size, samples,
        float(means[0]), float(means[1]), float(means[2]),
        (float(se[0]), float(se[1]), float(se[2])),
    )


@dataclass(frozen=True)
class ScalingFit:
    sigmas: tuple[float, ...]
    m2: tuple[float, ...]
    slope: float
    intercept: float
    ci_95: tuple[float, float]


MIN_SIGMA_SPAN = 8.0


def fit_scaling_slope(sigmas: Sequence[float], m2: Sequence[float]) -> ScalingFit:
    """Least-squares slope of ``log m2`` against ``log sigma``."""
    s = np.asarray(sigmas, dtype=np.float64)
    m = np.asarray(m2, dtype=np.float64)
    if s.size < 4 or s.size != m.size:
        raise ValueError("need at least 4 (sigma, m2) pairs")
    if np.any(s <= 0) or np.any(s > 1):
        raise ValueError("sigmas must lie in (0, 1]")
    if s.max() / s.min() < MIN_SIGMA_SPAN * (1 - 1e-12):
        raise ValueError(f"sigma grid must span a factor of at least {MIN_SIGMA_SPAN:g}")
    if np.any(m <= 0):
        raise ValueError("m2 values must be positive for a log-log fit")
    slope, intercept, _, ci, _, _ = fit_loglog(s, m)
    return ScalingFit(tuple(s.tolist()), tuple(m.tolist()), slope, intercept, (float(ci[0]), float(ci[1])))


def fit_sigma_scaling(
    c: Cost,
    mu: ArrayLike,
    mode: FeedbackMode,
    sigmas: Sequence[float],
    samples: int = 1_000_000,
    rng: np.random.Generator | None = None,
) -> ScalingFit:
    """How ``E||noise||^2`` scales with sigma at a fixed mean.

    One-point noise should grow like ``sigma^-2`` away from the minimizer;
    two-point noise should not depend on sigma.
    """
    mode = FeedbackMode.parse(mode)
    mu = as_action(mu, c.dim)
    if mode is FeedbackMode.ONE_POINT and np.linalg.norm(mu) < 1:
        raise ValueError("one-point scaling needs ||mu|| >= 1 so the 1/sigma^2 term dominates")
    # validate the grid before spending any samples
    if len(sigmas) < 4:
        raise ValueError("need at least 4 sigma values")
    fit_scaling_slope(sigmas, np.ones(len(sigmas)))
    rng = np.random.Generator(np.random.Philox(0)) if rng is None else rng
    m2 = [estimate_noise_moments(c, mu, s, mode, samples, rng).m2 for s in sigmas]
    return fit_scaling_slope(sigmas, m2)


# -- boundedness ---------------------------------------------------------------


@dataclass(frozen=True)
class BoundednessReport:
    max_norm: float
    first_excursion_round: Optional[int]
    threshold: float
    seeds: int
    horizon: int
    per_seed_max: tuple[float, ...] = ()
    aborts: tuple[tuple[int, int, str], ...] = field(default=())  # (seed, round, reason)

    @property
    def ok(self) -> bool:
        return not self.aborts and math.isfinite(self.max_norm) and self.max_norm <= self.threshold

    def to_dict(self) -> dict:
        return {
            "max_norm": self.max_norm,
            "first_excursion_round": self.first_excursion_round,
            "threshold": self.threshold,
            "seeds": self.seeds,
            "horizon": self.horizon,
            "per_seed_max": list(self.per_seed_max),
            "aborts": [list(a) for a in self.aborts],
            "ok": self.ok,
        }


def boundedness_threshold(K: float, mu0: ArrayLike) -> float:
    return 10.0 * max(math.sqrt(K), float(np.linalg.norm(mu0)), 1.0)


def monitor_boundedness(
    config: ExperimentConfig,
    horizon: int | None = None,
    seeds: int | None = None,
    sequence=None,
) -> BoundednessReport:
    """Run ``seeds`` episodes of ``horizon`` rounds and track ``max_t ||mu_t||``.

    An aborted episode counts as a failure, not as a skipped seed.
    """
    verdict = validate_schedule(config.schedule)
    if not verdict.ok:
        raise ValueError(verdict.describe())
    horizon = config.T if horizon is None else int(horizon)
    seeds = config.seeds if seeds is None else int(seeds)
    cfg = config.replace(T=horizon, seeds=seeds, comparator="origin")
    if sequence is None:
        sequence = cfg.sequence
        K = constants(sequence).K
    else:
        K = sequence.constants.K
    threshold = boundedness_threshold(K, cfg.mu0_vector())
    batch = run_batch(cfg, range(seeds), sequence=sequence, excursion_threshold=threshold)
    per_seed = tuple(tr.max_norm for tr in batch.traces)
    excursions = [tr.first_excursion_round for tr in batch.traces if tr.first_excursion_round is not None]
    aborts = tuple(
        (tr.seed, tr.aborted_round, tr.abort_reason) for tr in batch.traces if tr.aborted_round is not None
    )
    max_norm = max(per_seed) if not aborts else math.inf
    return BoundednessReport(
        max_norm=float(max_norm),
        first_excursion_round=min(excursions) if excursions else None,
        threshold=threshold,
        seeds=seeds,
        horizon=horizon,
        per_seed_max=per_seed,
        aborts=aborts,
    )

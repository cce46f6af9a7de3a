"""The bandit learner: Gaussian query sampling and the mean-iterate update.

One-point round::

    x_t ~ N(mu_t, sigma_t^2 I)
    mu_{t+1} = mu_t - alpha_t * c_t(x_t) * (x_t - mu_t) / sigma_t^2

Two-point round replaces ``c_t(x_t)`` by ``c_t(x_t) - c_t(mu_t)``.

The learner touches the environment only through :class:`BanditOracle.query`;
nothing in this module imports the gradient or smoothing oracles.

``mu`` may carry a leading batch axis ``(S, n)`` holding S independent
episodes. Every operation is row-wise, and each row owns its random stream,
so a row's trajectory does not depend on which other rows share the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from zobandit.core import FeedbackMode, ScheduleParams, schedule_alpha, schedule_sigma


class EpisodeAborted(RuntimeError):
    """A round produced a non-finite cost or iterate."""

    def __init__(self, t: int, rows: Sequence[int], reason: str):
        self.t = t
        self.rows = tuple(int(r) for r in rows)
        self.reason = reason
        super().__init__(f"episode aborted at round {t} (rows {list(self.rows)}): {reason}")


class BanditOracle(Protocol):
    def query(self, t: int, points: np.ndarray) -> np.ndarray:
        """Cost values of round ``t`` at ``points`` (shape ``(..., n)``)."""
        ...


def episode_generator(seed: int, base_seed: int = 0) -> np.random.Generator:
    """Counter-based stream for one episode, split deterministically from ``base_seed``."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(seed),))
    return np.random.Generator(np.random.Philox(ss))


class NormalStream:
    """Standard normal draws of shape ``(n,)`` or ``(S, n)``, one generator per row.

    Draws are prefetched in blocks; the per-row sequence is the same whatever
    the block size, because generators fill arrays sequentially.
    """

    def __init__(self, generators: Sequence[np.random.Generator], n: int, batched: bool, block: int = 2048):
        if not batched and len(generators) != 1:
            raise ValueError("an unbatched stream needs exactly one generator")
        self.generators = list(generators)
        self.n = n
        self.batched = batched
        self.block = block
        self._buf = np.empty((0, len(self.generators), n))
        self._pos = 0

    @classmethod
    def for_seeds(cls, seeds: Sequence[int] | int, n: int, base_seed: int = 0, block: int = 2048) -> "NormalStream":
        if isinstance(seeds, (int, np.integer)):
            return cls([episode_generator(seeds, base_seed)], n, batched=False, block=block)
        return cls([episode_generator(s, base_seed) for s in seeds], n, batched=True, block=block)

    def _refill(self) -> None:
        parts = [g.standard_normal((self.block, self.n)) for g in self.generators]
        self._buf = np.stack(parts, axis=1)
        self._pos = 0

    def draw(self) -> np.ndarray:
        if self._pos >= self._buf.shape[0]:
            self._refill()
        z = self._buf[self._pos]
        self._pos += 1
        return z if self.batched else z[0]

    def rewind(self) -> None:
        """Un-read the most recent draw."""
        if self._pos == 0:
            raise RuntimeError("nothing to rewind")
        self._pos -= 1

    def select(self, rows: np.ndarray) -> None:
        """Keep only ``rows`` (used when some episodes of a batch abort)."""
        self.generators = [self.generators[i] for i in rows]
        self._buf = self._buf[:, rows]


@dataclass
class OptimizerState:
    mu: np.ndarray
    params: ScheduleParams
    rng: NormalStream
    t: int = 1

    @property
    def mode(self) -> FeedbackMode:
        return self.params.mode

    @classmethod
    def start(
        cls,
        params: ScheduleParams,
        mu0: np.ndarray | None = None,
        seed: int | Sequence[int] = 0,
        base_seed: int = 0,
    ) -> "OptimizerState":
        n = params.n
        mu = np.zeros(n) if mu0 is None else np.array(mu0, dtype=np.float64)
        if mu.shape[-1] != n:
            raise ValueError(f"mu0 has dimension {mu.shape[-1]}, schedule has n={n}")
        rng = NormalStream.for_seeds(seed, n, base_seed)
        if rng.batched:
            mu = np.broadcast_to(mu, (len(rng.generators), n)).copy()
        return cls(mu=mu, params=params, rng=rng)


@dataclass(frozen=True)
class RoundOutcome:
    t: int
    alpha: float
    sigma: float
    mu: np.ndarray
    query: np.ndarray
    cost_at_query: np.ndarray
    gradient_estimate: np.ndarray
    next_mu: np.ndarray
    mean_query: Optional[np.ndarray] = None
    cost_at_mean: Optional[np.ndarray] = None
    step_vector: np.ndarray = field(default=None, repr=False)


def sample_query(state: OptimizerState) -> np.ndarray:
    sigma = schedule_sigma(state.params, state.t)
    return state.mu + sigma * state.rng.draw()


def _check_sigma(sigma: float) -> None:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")


def gradient_estimate_one_point(cost_value, x, mu, sigma: float) -> np.ndarray:
    """``cost_value * (x - mu) / sigma^2``; batched over leading axes."""
    _check_sigma(sigma)
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if x.shape[-1] != mu.shape[-1]:
        raise ValueError(f"dimension mismatch: x {x.shape} vs mu {mu.shape}")
    c = np.asarray(cost_value, dtype=np.float64)[..., None]
    return c * (x - mu) / (sigma * sigma)


def gradient_estimate_two_point(cost_at_x, cost_at_mu, x, mu, sigma: float) -> np.ndarray:
    """``(cost_at_x - cost_at_mu) * (x - mu) / sigma^2``."""
    diff = np.asarray(cost_at_x, dtype=np.float64) - np.asarray(cost_at_mu, dtype=np.float64)
    return gradient_estimate_one_point(diff, x, mu, sigma)


def _nonfinite_rows(arr: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(arr)
    if bad.ndim > 1:
        bad = bad.reshape(bad.shape[0], -1).any(axis=1)
    return np.flatnonzero(np.atleast_1d(bad))


def step(state: OptimizerState, env: BanditOracle) -> tuple[OptimizerState, RoundOutcome]:
    """Play one round: query the environment, update the mean, advance ``t``."""
    t = state.t
    alpha = schedule_alpha(state.params, t)
    sigma = schedule_sigma(state.params, t)
    mu = state.mu
    x = mu + sigma * state.rng.draw()

    cost_x = np.asarray(env.query(t, x), dtype=np.float64)
    bad = _nonfinite_rows(cost_x)
    if bad.size:
        raise EpisodeAborted(t, bad, "non-finite cost value")

    cost_mu = None
    if state.mode is FeedbackMode.TWO_POINT:
        cost_mu = np.asarray(env.query(t, mu), dtype=np.float64)
        bad = _nonfinite_rows(cost_mu)
        if bad.size:
            raise EpisodeAborted(t, bad, "non-finite cost value at the mean")
        g = gradient_estimate_two_point(cost_x, cost_mu, x, mu, sigma)
    else:
        g = gradient_estimate_one_point(cost_x, x, mu, sigma)

    delta = alpha * g
    next_mu = mu - delta
    bad = _nonfinite_rows(next_mu)
    if bad.size:
        raise EpisodeAborted(t, bad, "non-finite iterate")

    outcome = RoundOutcome(
        t=t,
        alpha=alpha,
        sigma=sigma,
        mu=mu,
        query=x,
        cost_at_query=cost_x,
        gradient_estimate=g,
        next_mu=next_mu,
        mean_query=mu if cost_mu is not None else None,
        cost_at_mean=cost_mu,
        step_vector=delta,
    )
    state.mu = next_mu
    state.t = t + 1
    return state, outcome

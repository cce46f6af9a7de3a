"""Episodes, regret accounting, seed aggregation and rate fitting."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from zobandit.config import ExperimentConfig, config_from_dict, config_hash
from zobandit.core import FeedbackMode
from zobandit.costs import CostSequenceSpec, constants
from zobandit.optimizer import EpisodeAborted, OptimizerState, step

log = logging.getLogger(__name__)


class SequenceOracle:
    """Bandit access to a cost sequence, with query accounting."""

    def __init__(self, sequence, horizon: int):
        self.sequence = sequence
        self.centers = sequence.centers(horizon)
        self.calls = 0
        self.points = 0

    def query(self, t: int, points: np.ndarray) -> np.ndarray:
        self.calls += 1
        self.points += int(np.prod(np.shape(points)[:-1], dtype=np.int64))
        return np.asarray(self.sequence.round_value(self.centers[t - 1], points), dtype=np.float64)


# -- comparator ----------------------------------------------------------------


@dataclass(frozen=True)
class ComparatorResult:
    x: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool


def _average_objective(sequence, cs: np.ndarray):
    def fun(x):
        v = np.asarray(sequence.round_value(cs, x), dtype=np.float64)
        g = np.asarray(sequence.round_gradient(cs, x), dtype=np.float64)
        if g.ndim == 2:
            g = g.mean(axis=0)
        return float(np.mean(v)), g

    return fun


def compute_comparator(
    sequence,
    horizon: int,
    tol: float = 1e-8,
    max_iter: int = 100_000,
) -> ComparatorResult:
    """Static minimizer of the average cost over rounds ``1..horizon``.

    Quasi-Newton first, then plain gradient steps of size ``1/L`` if the
    gradient-norm target was missed.
    """
    cs = sequence.centers(horizon)
    n = sequence.dim
    if cs.shape[1] and np.all(cs == cs[0]):
        return ComparatorResult(cs[0].copy(), 0.0, 0, True)
    fun = _average_objective(sequence, cs)
    res = optimize.minimize(
        fun, np.zeros(n), jac=True, method="L-BFGS-B",
        options={"gtol": tol * 1e-2, "ftol": 1e-16, "maxiter": 10_000},
    )
    x = np.asarray(res.x, dtype=np.float64)
    _, g = fun(x)
    gnorm = float(np.linalg.norm(g))
    iters = int(res.nit)
    if gnorm > tol:
        L = constants(sequence).L if isinstance(sequence, CostSequenceSpec) else 1.0
        for _ in range(max_iter):
            if gnorm <= tol:
                break
            x = x - g / L
            _, g = fun(x)
            gnorm = float(np.linalg.norm(g))
            iters += 1
    converged = gnorm <= tol
    if not converged:
        log.warning("comparator did not reach |grad| <= %g (final %g)", tol, gnorm)
    return ComparatorResult(x, gnorm, iters, converged)


def resolve_comparator(config: ExperimentConfig, sequence) -> ComparatorResult:
    if config.comparator == "auto":
        return compute_comparator(sequence, config.T)
    if config.comparator == "origin":
        x = np.zeros(config.n)
    else:
        x = np.array(config.comparator, dtype=np.float64)
    return ComparatorResult(x, float("nan"), 0, True)


# -- episodes ----------------------------------------------------------------


@dataclass
class RegretTrace:
    """Per-episode record. Regret is charged at the queried points only."""

    seed: int
    config_hash: str
    horizon: int
    costs: np.ndarray  # c_t(x_t), rounds played so far
    comparator: np.ndarray
    comparator_costs: np.ndarray  # c_t(x*), t = 1..horizon
    checkpoints: list[int]
    cumulative_regret: list[float]
    max_norm: float
    first_excursion_round: Optional[int] = None
    aborted_round: Optional[int] = None
    abort_reason: Optional[str] = None
    queries: Optional[np.ndarray] = None
    queries_issued: int = 0

    @property
    def rounds_played(self) -> int:
        return int(self.costs.size)

    @property
    def comparator_cost_sum(self) -> float:
        return float(np.sum(self.comparator_costs[: self.rounds_played]))

    @property
    def per_round(self):
        xs = self.queries if self.queries is not None else itertools.repeat(None)
        return [(t + 1, x, float(c)) for t, (x, c) in enumerate(zip(xs, self.costs))]

    def regret_at(self, t: int) -> float:
        return float(np.sum(self.costs[:t]) - np.sum(self.comparator_costs[:t]))

    def regret_over_t(self) -> list[float]:
        return [r / t for r, t in zip(self.cumulative_regret, self.checkpoints)]


def _row_norms(mu: np.ndarray) -> np.ndarray:
    out = np.sqrt((mu * mu).sum(axis=-1))
    bad = ~np.isfinite(out)
    if bad.any():  # squares overflowed; hypot rescales
        out[bad] = np.hypot.reduce(mu[bad], axis=-1)
    return out


@dataclass
class BatchResult:
    traces: list[RegretTrace]
    comparator: ComparatorResult
    queries_per_episode: int
    oracle_calls: int


def run_batch(
    config: ExperimentConfig,
    seeds: Sequence[int],
    sequence=None,
    comparator: ComparatorResult | None = None,
    excursion_threshold: float | None = None,
    on_round: Callable | None = None,
) -> BatchResult:
    """Run one episode per seed, vectorized across seeds.

    Each seed owns its random stream, so a trace depends only on (config, seed).
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    sequence = config.sequence if sequence is None else sequence
    comparator = resolve_comparator(config, sequence) if comparator is None else comparator
    T, n, S = config.T, config.n, len(seeds)
    chash = config_hash(config)
    env = SequenceOracle(sequence, T)

    comp_costs = np.broadcast_to(
        np.asarray(sequence.round_value(env.centers, comparator.x), dtype=np.float64), (T,)
    ).copy()

    state = OptimizerState.start(config.schedule, config.mu0_vector(), seeds, config.base_seed)
    costs = np.full((T, S), np.nan)
    queries = np.full((T, S, n), np.nan) if config.record_rounds else None
    max_norm = _row_norms(state.mu)
    first_exc = [None] * S
    if excursion_threshold is not None:
        for i in np.flatnonzero(max_norm > excursion_threshold):
            first_exc[i] = 0
    played = np.full(S, T)
    abort = [None] * S
    active = np.arange(S)

    t = 1
    while t <= T and active.size:
        try:
            state, out = step(state, env)
        except EpisodeAborted as exc:
            bad = active[list(exc.rows)]
            for i in bad:
                played[i] = t - 1
                abort[i] = exc.reason
            keep = np.setdiff1d(np.arange(active.size), exc.rows)
            active = active[keep]
            state.rng.select(keep)
            state.rng.rewind()  # survivors replay round t with the same draw
            state.mu = state.mu[keep]
            continue
        costs[t - 1, active] = out.cost_at_query
        if queries is not None:
            queries[t - 1, active] = out.query
        norms = _row_norms(out.next_mu)
        max_norm[active] = np.maximum(max_norm[active], norms)
        if excursion_threshold is not None:
            for j in np.flatnonzero(norms > excursion_threshold):
                i = active[j]
                if first_exc[i] is None:
                    first_exc[i] = t
        if on_round is not None:
            on_round(out)
        t += 1

    cps = config.checkpoint_rounds()
    cum_comp = np.cumsum(comp_costs)
    traces = []
    for i, seed in enumerate(seeds):
        c = costs[: played[i], i].copy()
        cum = np.cumsum(c)
        reached = [k for k in cps if k <= played[i]]
        traces.append(
            RegretTrace(
                seed=seed,
                config_hash=chash,
                horizon=T,
                costs=c,
                comparator=comparator.x,
                comparator_costs=comp_costs,
                checkpoints=reached,
                cumulative_regret=[float(cum[k - 1] - cum_comp[k - 1]) for k in reached],
                max_norm=float(max_norm[i]),
                first_excursion_round=first_exc[i],
                aborted_round=None if abort[i] is None else int(played[i] + 1),
                abort_reason=abort[i],
                queries=None if queries is None else queries[: played[i], i].copy(),
                queries_issued=int(played[i]) * config.mode.queries_per_round,
            )
        )
    return BatchResult(traces, comparator, T * config.mode.queries_per_round, env.calls)


def run_episode(config: ExperimentConfig, seed: int, sequence=None, comparator=None) -> RegretTrace:
    return run_batch(config, [seed], sequence, comparator).traces[0]


# -- aggregation and rate fits ------------------------------------------------------


@dataclass(frozen=True)
class RegretAggregate:
    checkpoints: list[int]
    mean: list[float]  # mean of R(T_i)/T_i across seeds
    se: list[Optional[float]]  # None when only one trace reaches the checkpoint
    count: list[int]


def aggregate_regret(traces: Sequence[RegretTrace]) -> RegretAggregate:
    if not traces:
        raise ValueError("no traces to aggregate")
    hashes = {tr.config_hash for tr in traces}
    if len(hashes) > 1:
        raise ValueError(f"traces come from different configs: {sorted(hashes)}")
    cps = sorted({k for tr in traces for k in tr.checkpoints})
    mean, se, count = [], [], []
    for k in cps:
        vals = np.array([tr.cumulative_regret[tr.checkpoints.index(k)] / k for tr in traces if k in tr.checkpoints])
        mean.append(float(vals.mean()))
        se.append(float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else None)
        count.append(int(vals.size))
    return RegretAggregate(cps, mean, se, count)


@dataclass(frozen=True)
class RateFit:
    points: list[tuple[float, float]]  # (log T_i, log mean R/T)
    slope: float
    intercept: float
    r_squared: float
    ci_95: tuple[float, float]
    excluded: list[int] = field(default_factory=list)  # checkpoints with non-positive mean

    @property
    def flagged(self) -> bool:
        return bool(self.excluded)

    def to_dict(self) -> dict[str, Any]:
        return {
            "points": [list(p) for p in self.points],
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "ci_95": list(self.ci_95),
            "excluded": list(self.excluded),
        }


def fit_loglog(xs: Sequence[float], ys: Sequence[float]):
    """OLS of log y on log x: slope, intercept, r^2 and a t-based 95% slope interval."""
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    res = stats.linregress(lx, ly)
    k = lx.size
    if k > 2:
        half = float(stats.t.ppf(0.975, k - 2) * res.stderr)
    else:
        half = 0.0
    return float(res.slope), float(res.intercept), float(res.rvalue**2), (res.slope - half, res.slope + half), lx, ly


def fit_rate(
    aggregate: RegretAggregate | tuple[Sequence[int], Sequence[float]],
    t_min: int = 1,
    t_max: int | None = None,
) -> RateFit:
    """Power-law fit of mean R/T against T over checkpoints in ``[t_min, t_max]``."""
    if isinstance(aggregate, RegretAggregate):
        cps, means = aggregate.checkpoints, aggregate.mean
    else:
        cps, means = aggregate
    sel = [(k, m) for k, m in zip(cps, means) if k >= t_min and (t_max is None or k <= t_max)]
    if any(b[0] <= a[0] for a, b in zip(sel, sel[1:])):
        raise ValueError("checkpoints must be strictly increasing")
    excluded = [k for k, m in sel if not m > 0]
    pos = [(k, m) for k, m in sel if m > 0]
    if len(pos) < 4:
        raise ValueError(f"need at least 4 checkpoints with positive mean, got {len(pos)}")
    slope, intercept, r2, ci, lx, ly = fit_loglog([k for k, _ in pos], [m for _, m in pos])
    return RateFit(
        points=[(float(a), float(b)) for a, b in zip(lx, ly)],
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        ci_95=(float(ci[0]), float(ci[1])),
        excluded=excluded,
    )


# -- sweeps --------------------------------------------------------------------


def expand_grid(base: ExperimentConfig, grid: dict[str, Iterable[Any]]) -> list[ExperimentConfig]:
    """Cartesian product over ``grid`` in sorted-key order; ``cost.*`` keys reach into the cost block."""
    if not grid:
        return []
    keys = sorted(grid)
    out = []
    for values in itertools.product(*(list(grid[k]) for k in keys)):
        top, cost = {}, {}
        for k, v in zip(keys, values):
            if k.startswith("cost."):
                cost[k[5:]] = v
            else:
                top[k] = v
        doc = base.to_dict()
        doc.update(top)
        doc["cost"].update(cost)
        if "mode" in top and isinstance(top["mode"], FeedbackMode):
            doc["mode"] = top["mode"].value
        out.append(config_from_dict(doc))
    return out


@dataclass
class SweepPoint:
    config: ExperimentConfig
    config_hash: str
    status: str  # "ok", "skipped" (already persisted) or "error"
    traces: list[RegretTrace] = field(default_factory=list)
    error: Optional[str] = None


def sweep(
    configs: Sequence[ExperimentConfig],
    sink=None,
    done_keys: set[tuple[str, int]] | None = None,
) -> list[SweepPoint]:
    """Run every config for its seeds, in the given order.

    ``sink(config, trace)`` is called as each episode completes; keys in
    ``done_keys`` (``(config_hash, seed)``) are skipped so a resumed sweep adds
    no duplicates. A failing point is recorded and the sweep moves on.
    """
    done_keys = set() if done_keys is None else done_keys
    results = []
    for cfg in configs:
        chash = config_hash(cfg)
        todo = [s for s in range(cfg.seeds) if (chash, s) not in done_keys]
        if not todo:
            results.append(SweepPoint(cfg, chash, "skipped"))
            continue
        try:
            batch = run_batch(cfg, todo)
        except Exception as exc:  # isolate per-point failures
            log.error("sweep point %s failed: %s", chash, exc)
            results.append(SweepPoint(cfg, chash, "error", error=f"{type(exc).__name__}: {exc}"))
            continue
        for tr in batch.traces:
            if sink is not None:
                sink(cfg, tr)
            done_keys.add((chash, tr.seed))
        results.append(SweepPoint(cfg, chash, "ok", batch.traces))
    return results

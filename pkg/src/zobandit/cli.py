"""Command-line entry point: ``zobandit run | check | rate``.

Exit codes: 0 success, 1 failed check or slope outside the expected band,
2 configuration or input error, 3 episode abort.

The default output directory for ``run`` comes from ``ZOBANDIT_OUTPUT_DIR``
(falling back to ``./zobandit-out``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from zobandit.config import ConfigError, ExperimentConfig, CostConfig, parse_config
from zobandit.core import FeedbackMode, LIMIT_POINTS
from zobandit.costs import ConstantCost, CostInstance, LinearCost, QuadraticCost
from zobandit.harness import aggregate_regret, fit_rate, resolve_comparator, run_batch
from zobandit.records import (
    RecordError, RecordKind, read_records, trace_from_record, trace_record,
    write_plot_csv, write_records, write_summary_csv,
)

ENV_OUTPUT_DIR = "ZOBANDIT_OUTPUT_DIR"
RESULTS_FILE = "results.jsonl"
SUMMARY_FILE = "summary.csv"
RATE_TOLERANCE = 0.15

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

log = logging.getLogger("zobandit")


def _err(msg: str) -> None:
    print(f"zobandit: {msg}", file=sys.stderr)


# -- run -----------------------------------------------------------------------


def _run_chunk(args):
    config, seeds, comparator = args
    return run_batch(config, seeds, comparator=comparator).traces


def execute(config: ExperimentConfig, parallelism: int = 1):
    """All episodes of ``config``, in seed order. Chunks run in worker processes when ``parallelism > 1``."""
    seeds = list(range(config.seeds))
    comparator = resolve_comparator(config, config.sequence)
    workers = max(1, min(int(parallelism), len(seeds)))
    if workers == 1:
        return run_batch(config, seeds, comparator=comparator).traces
    chunks = [seeds[i::workers] for i in range(workers)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(config, c, comparator) for c in chunks]))
    by_seed = {tr.seed: tr for part in parts for tr in part}
    return [by_seed[s] for s in seeds]


def cmd_run(config_path: str, out_dir: Optional[str], parallelism: int = 1, force: bool = False) -> int:
    try:
        text = Path(config_path).read_text(encoding="utf-8")
        config = parse_config(text)
    except OSError as exc:
        _err(f"cannot read config: {exc}")
        return EXIT_CONFIG
    except ConfigError as exc:
        _err(f"invalid config {config_path}: {exc}")
        return EXIT_CONFIG

    out = Path(out_dir or os.environ.get(ENV_OUTPUT_DIR) or "zobandit-out")
    results = out / RESULTS_FILE
    if results.exists() and not force:
        _err(f"{results} already exists; pass --force to overwrite")
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)

    traces = execute(config, parallelism)
    write_records(results, (trace_record(config, tr) for tr in traces), append=False)
    write_summary_csv(out / SUMMARY_FILE, aggregate_regret(traces), config)

    aborted = [tr for tr in traces if tr.aborted_round is not None]
    for tr in aborted:
        _err(f"seed {tr.seed} aborted at round {tr.aborted_round}: {tr.abort_reason}")
    print(f"wrote {len(traces)} trace record(s) to {results}")
    return EXIT_ABORT if aborted else EXIT_OK


# -- check -----------------------------------------------------------------------


@dataclass
class CheckRow:
    scope: str
    name: str
    property: str
    value: str
    target: str
    ok: bool


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(stream,))))


def _checks_smoothing(seed: int) -> list[CheckRow]:
    from zobandit.smoothing import smoothed_gradient, SmoothedQuery, verify_smoothing_gap, verify_unbiasedness

    rows = []
    ph = CostInstance("pseudo_huber", [0.0, 0.0])
    mu = np.array([1.0, 0.0])
    for i, mode in enumerate(FeedbackMode):
        rep = verify_unbiasedness(ph, mu, 0.3, mode, 1_000_000, _rng(seed, i))
        rows.append(CheckRow("smoothing", f"unbiased_{mode.value}", "estimator unbiasedness",
                             f"max|z|={np.max(np.abs(rep.z_scores)):.3f}", "< 4", rep.ok))
    lin = LinearCost([0.6, -0.8])
    rep = verify_unbiasedness(lin, [0.5, 2.0], 0.5, FeedbackMode.ONE_POINT, 1_000_000, _rng(seed, 2))
    rows.append(CheckRow("smoothing", "unbiased_linear", "estimator unbiasedness",
                         f"max|z|={np.max(np.abs(rep.z_scores)):.3f}", "< 4", rep.ok))
    gap = verify_smoothing_gap(QuadraticCost([0.0, 0.0, 0.0]), [0.3, -0.2, 1.0], 0.5, 1.0)
    tight = abs(gap.gap - gap.bound) <= 1e-10
    rows.append(CheckRow("smoothing", "gap_quadratic_tight", "smoothing gap bound",
                         f"gap={gap.gap:.12f}", f"= {gap.bound:.12f}", tight and gap.ok))
    gap = verify_smoothing_gap(ph, [1.0, 1.0], 0.4, 1.0)
    rows.append(CheckRow("smoothing", "gap_pseudo_huber", "smoothing gap bound",
                         f"gap={gap.gap:.6f}", f"<= {gap.bound:.6f}+{gap.error_estimate:.1e}", gap.ok))
    g, err = smoothed_gradient(ph, SmoothedQuery([3.0, -4.0], 0.8))
    norm = float(np.linalg.norm(g))
    rows.append(CheckRow("smoothing", "gradient_bounded", "smoothed gradient bound",
                         f"|grad|={norm:.6f}", f"<= 1+{err:.1e}", norm <= 1.0 + err))
    return rows


def _checks_moments(seed: int) -> list[CheckRow]:
    from zobandit.diagnostics import estimate_noise_moments, fit_sigma_scaling

    rows = []
    g2 = np.array([0.6, 0.8])
    r = estimate_noise_moments(LinearCost(g2), [0.5, -1.0], 0.7, FeedbackMode.TWO_POINT, 1_000_000, _rng(seed, 10))
    ok = abs(r.m2 - 3.0) <= 4 * r.standard_errors[0]
    rows.append(CheckRow("moments", "two_point_linear_m2", "noise second moment",
                         f"m2={r.m2:.4f}", f"3 +/- {4 * r.standard_errors[0]:.4f}", ok))
    rows.append(CheckRow("moments", "two_point_lyapunov", "moment ordering", "", "m2^1/2<=m3^1/3<=m4^1/4", r.lyapunov_ok()))
    r = estimate_noise_moments(LinearCost([1.0]), [1.0], 0.5, FeedbackMode.ONE_POINT, 1_000_000, _rng(seed, 11))
    ok = abs(r.m2 - 6.0) <= 4 * r.standard_errors[0]
    rows.append(CheckRow("moments", "one_point_linear_m2", "noise second moment",
                         f"m2={r.m2:.4f}", f"6 +/- {4 * r.standard_errors[0]:.4f}", ok))
    rows.append(CheckRow("moments", "one_point_lyapunov", "moment ordering", "", "m2^1/2<=m3^1/3<=m4^1/4", r.lyapunov_ok()))

    ph = CostInstance("pseudo_huber", [0.0, 0.0])
    mu = np.array([2.0, 0.0])
    grid = [0.5, 0.25, 0.125, 0.0625]
    f = fit_sigma_scaling(ph, mu, FeedbackMode.ONE_POINT, grid, 1_000_000, _rng(seed, 12))
    rows.append(CheckRow("moments", "one_point_sigma_slope", "noise growth in sigma",
                         f"slope={f.slope:.3f}", "[-2.2, -1.8]", -2.2 <= f.slope <= -1.8))
    f = fit_sigma_scaling(ph, mu, FeedbackMode.TWO_POINT, grid, 1_000_000, _rng(seed, 13))
    rows.append(CheckRow("moments", "two_point_sigma_slope", "noise growth in sigma",
                         f"slope={f.slope:.3f}", "[-0.2, 0.2]", -0.2 <= f.slope <= 0.2))
    ratios = []
    for n in (2, 8, 32):
        g = np.ones(n) / math.sqrt(n)
        r = estimate_noise_moments(LinearCost(g), np.zeros(n), 0.5, FeedbackMode.TWO_POINT, 200_000, _rng(seed, 14 + n))
        ratios.append(r.m2 / n)
    spread = max(ratios) / min(ratios)
    rows.append(CheckRow("moments", "two_point_dimension", "noise growth in dimension",
                         f"max/min(m2/n)={spread:.3f}", "<= 3", spread <= 3.0))
    return rows


BOUNDEDNESS_SCHEDULES = {
    FeedbackMode.ONE_POINT: (0.9, 0.05),
    FeedbackMode.TWO_POINT: LIMIT_POINTS["two_point"],
}


def _checks_boundedness(seed: int, horizon: int = 10_000, seeds: int = 5) -> list[CheckRow]:
    from zobandit.diagnostics import monitor_boundedness

    rows = []
    for mode, (a, b) in BOUNDEDNESS_SCHEDULES.items():
        for start in ("zero", "far"):
            mu0 = "zero" if start == "zero" else (10.0 / math.sqrt(2), 10.0 / math.sqrt(2))
            cfg = ExperimentConfig(
                mode=mode, n=2, a=a, b=b, T=horizon, seeds=seeds,
                cost=CostConfig("pseudo_huber", "rotating", center_bound=1.0),
                mu0=mu0, base_seed=seed,
            )
            rep = monitor_boundedness(cfg)
            rows.append(CheckRow("boundedness", f"{mode.value}_{start}", "iterate boundedness",
                                 f"max|mu|={rep.max_norm:.3f}", f"<= {rep.threshold:g}, no aborts", rep.ok))
    return rows


CHECKS: dict[str, Callable[[int], list[CheckRow]]] = {
    "smoothing": _checks_smoothing,
    "moments": _checks_moments,
    "boundedness": _checks_boundedness,
}


def cmd_check(scope: str, seed: int = 0, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    scopes = list(CHECKS) if scope == "all" else [scope]
    rows: list[CheckRow] = []
    for s in scopes:
        rows += CHECKS[s](seed)
    width = max(len(r.name) for r in rows)
    print(f"{'check':<{width}}  {'result':<6}  {'property':<26}  {'value':<24}  target", file=stream)
    for r in rows:
        print(f"{r.name:<{width}}  {'PASS' if r.ok else 'FAIL':<6}  {r.property:<26}  {r.value:<24}  {r.target}", file=stream)
    failed = [r for r in rows if not r.ok]
    for r in failed:
        _err(f"check {r.name} failed: {r.property} not confirmed ({r.value}, target {r.target})")
    return EXIT_FAIL if failed else EXIT_OK


# -- rate ----------------------------------------------------------------------


def cmd_rate(
    inputs: Sequence[str],
    expected: Optional[float] = None,
    plot_csv: Optional[str] = None,
    t_min: int = 1,
    stream=None,
) -> int:
    stream = sys.stdout if stream is None else stream
    traces = []
    try:
        for path in inputs:
            traces += [trace_from_record(r) for r in read_records(Path(path)) if r.record_kind is RecordKind.TRACE]
    except (OSError, RecordError) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if not traces:
        _err("no trace records in input")
        return EXIT_CONFIG
    try:
        agg = aggregate_regret(traces)
        fit = fit_rate(agg, t_min=t_min)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG

    doc = {"config_hash": traces[0].config_hash, "traces": len(traces), **fit.to_dict()}
    if expected is not None:
        lo, hi = fit.ci_95
        doc["expected"] = expected
        doc["consistent"] = bool(lo <= expected + RATE_TOLERANCE and hi >= expected - RATE_TOLERANCE)
    print(json.dumps(doc), file=stream)
    plot_path = Path(plot_csv) if plot_csv else Path(inputs[0]).with_suffix(".rate.csv")
    write_plot_csv(plot_path, agg)
    if fit.excluded:
        _err(f"checkpoints with non-positive mean excluded from the fit: {fit.excluded}")
    if expected is not None and not doc["consistent"]:
        _err(f"slope CI {fit.ci_95} does not meet {expected} +/- {RATE_TOLERANCE}")
        return EXIT_FAIL
    return EXIT_OK


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zobandit", description="Zeroth-order bandit convex optimization experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the episodes of one config")
    r.add_argument("config", help="JSON config file")
    r.add_argument("-o", "--out", help=f"output directory (default ${ENV_OUTPUT_DIR} or ./zobandit-out)")
    r.add_argument("-j", "--parallelism", type=int, default=1, help="worker processes")
    r.add_argument("--force", action="store_true", help="overwrite existing results")

    c = sub.add_parser("check", help="numerical verification suites")
    c.add_argument("scope", choices=["smoothing", "moments", "boundedness", "all"])
    c.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("rate", help="fit the regret decay rate of stored traces")
    t.add_argument("inputs", nargs="+", help="JSONL result files")
    t.add_argument("--expected", type=float, help="expected slope; exit 1 unless the 95%% CI meets it +/- 0.15")
    t.add_argument("--plot-csv", help="plot-data CSV path (default: next to the first input)")
    t.add_argument("--t-min", type=int, default=1, help="smallest checkpoint included in the fit")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.out, args.parallelism, args.force)
    if args.command == "check":
        return cmd_check(args.scope, args.seed)
    return cmd_rate(args.inputs, args.expected, args.plot_csv, args.t_min)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

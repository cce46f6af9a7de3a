"""JSONL result records and the derived CSV summary.

Every line of a results file is one self-contained record::

    {"schema_version": 1, "record_kind": "trace", "config_hash": "...",
     "seed": 0, "payload": {...}}

A trace payload embeds the full config, so a results file can be aggregated
with no other state. Per-round costs and queries are stored only when the
config sets ``record_rounds``.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional

import numpy as np

from zobandit.config import ExperimentConfig, config_from_dict
from zobandit.harness import RegretAggregate, RegretTrace

SCHEMA_VERSION = 1
CSV_COLUMNS = ("T_checkpoint", "mean_R_over_T", "se", "n", "mode", "a", "b")


class RecordKind(str, enum.Enum):
    TRACE = "trace"
    MOMENT_REPORT = "moment_report"
    BOUNDEDNESS_REPORT = "boundedness_report"
    RATE_FIT = "rate_fit"


class RecordError(ValueError):
    """A results line that is not a valid record."""


@dataclass(frozen=True)
class ResultRecord:
    record_kind: RecordKind
    config_hash: str
    seed: Optional[int]
    payload: dict[str, Any]
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        doc = {
            "schema_version": self.schema_version,
            "record_kind": self.record_kind.value,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "payload": self.payload,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "ResultRecord":
        try:
            doc = json.loads(line)
            kind = RecordKind(doc["record_kind"])
            version = int(doc["schema_version"])
            rec = cls(kind, str(doc["config_hash"]), doc.get("seed"), dict(doc["payload"]), version)
        except (ValueError, KeyError, TypeError) as exc:
            raise RecordError(f"malformed record: {exc}") from None
        if version != SCHEMA_VERSION:
            raise RecordError(f"unsupported schema_version {version}")
        return rec


def _opt(x):
    return None if x is None else x


def _floats(arr) -> list:
    return [float(v) for v in np.asarray(arr).ravel()]


def trace_record(config: ExperimentConfig, trace: RegretTrace) -> ResultRecord:
    payload: dict[str, Any] = {
        "config": config.to_dict(),
        "horizon": trace.horizon,
        "rounds_played": trace.rounds_played,
        "checkpoints": list(trace.checkpoints),
        "cumulative_regret": list(trace.cumulative_regret),
        "comparator": _floats(trace.comparator),
        "comparator_cost_sum": trace.comparator_cost_sum,
        "cost_sum": float(np.sum(trace.costs)),
        "max_norm": trace.max_norm,
        "first_excursion_round": _opt(trace.first_excursion_round),
        "aborted_round": _opt(trace.aborted_round),
        "abort_reason": _opt(trace.abort_reason),
        "queries_issued": trace.queries_issued,
    }
    if config.record_rounds:
        payload["costs"] = _floats(trace.costs)
        payload["comparator_costs"] = _floats(trace.comparator_costs[: trace.rounds_played])
        if trace.queries is not None:
            payload["queries"] = [_floats(q) for q in trace.queries]
    return ResultRecord(RecordKind.TRACE, trace.config_hash, trace.seed, payload)


def trace_from_record(rec: ResultRecord) -> RegretTrace:
    if rec.record_kind is not RecordKind.TRACE:
        raise RecordError(f"expected a trace record, got {rec.record_kind.value}")
    p = rec.payload
    costs = np.array(p.get("costs", []), dtype=np.float64)
    comp_costs = np.array(p.get("comparator_costs", []), dtype=np.float64)
    queries = np.array(p["queries"], dtype=np.float64) if "queries" in p else None
    return RegretTrace(
        seed=int(rec.seed),
        config_hash=rec.config_hash,
        horizon=int(p["horizon"]),
        costs=costs,
        comparator=np.array(p["comparator"], dtype=np.float64),
        comparator_costs=comp_costs,
        checkpoints=[int(k) for k in p["checkpoints"]],
        cumulative_regret=[float(r) for r in p["cumulative_regret"]],
        max_norm=float(p["max_norm"]),
        first_excursion_round=p.get("first_excursion_round"),
        aborted_round=p.get("aborted_round"),
        abort_reason=p.get("abort_reason"),
        queries=queries,
        queries_issued=int(p.get("queries_issued", 0)),
    )


def config_of(rec: ResultRecord) -> ExperimentConfig:
    return config_from_dict(rec.payload["config"])


def write_records(path: Path, records: Iterable[ResultRecord], append: bool = True) -> int:
    count = 0
    with open(path, "a" if append else "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            count += 1
        fh.flush()
    return count


def read_records(path: Path) -> Iterator[ResultRecord]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield ResultRecord.from_json(line)
            except RecordError as exc:
                raise RecordError(f"{path}:{lineno}: {exc}") from None


def done_keys(path: Path) -> set[tuple[str, int]]:
    """``(config_hash, seed)`` of every trace already in ``path`` (for resumed sweeps)."""
    path = Path(path)
    if not path.exists():
        return set()
    return {(r.config_hash, int(r.seed)) for r in read_records(path) if r.record_kind is RecordKind.TRACE}


def write_summary_csv(path: Path, aggregate: RegretAggregate, config: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k, m, se in zip(aggregate.checkpoints, aggregate.mean, aggregate.se):
            w.writerow([k, repr(m), "" if se is None else repr(se), config.n, config.mode.value, repr(config.a), repr(config.b)])


def read_summary_csv(path: Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({
            "T_checkpoint": int(r["T_checkpoint"]),
            "mean_R_over_T": float(r["mean_R_over_T"]),
            "se": None if r["se"] == "" else float(r["se"]),
            "n": int(r["n"]),
            "mode": r["mode"],
            "a": float(r["a"]),
            "b": float(r["b"]),
        })
    return out


def write_plot_csv(path: Path, aggregate: RegretAggregate) -> None:
    """Plot data: ``log T``, ``log mean R/T`` and the SE of the mean (positive means only)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("log_T", "log_mean_R_over_T", "se"))
        for k, m, se in zip(aggregate.checkpoints, aggregate.mean, aggregate.se):
            if m > 0:
                w.writerow([repr(math.log(k)), repr(math.log(m)), "" if se is None else repr(se)])

import csv
import json
import math

import numpy as np
import pytest

from zobandit import cli
from zobandit.config import parse_config
from zobandit.harness import RegretTrace, aggregate_regret
from zobandit.records import (
    RecordError, RecordKind, ResultRecord, done_keys, read_records, read_summary_csv,
    trace_from_record, trace_record, write_records,
)

CONFIG = {
    "mode": "two_point", "n": 2, "a": 0.5, "b": 0.25, "limit_mode": True,
    "T": 1024, "seeds": 3, "cost": {"family": "pseudo_huber", "drift": "rotating", "center_bound": 1.0},
}


@pytest.fixture
def config_file(tmp_path):
    def make(**changes):
        d = dict(CONFIG)
        d.update(changes)
        p = tmp_path / f"cfg{len(list(tmp_path.iterdir()))}.json"
        p.write_text(json.dumps(d))
        return p

    return make


def test_run_single_seed_writes_one_trace(config_file, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", str(config_file(seeds=1)), "-o", str(out)]) == 0
    recs = list(read_records(out / "results.jsonl"))
    assert len(recs) == 1 and recs[0].record_kind is RecordKind.TRACE
    assert recs[0].schema_version == 1


def test_run_refuses_overwrite_without_force(config_file, tmp_path, capsys):
    cfg = config_file()
    out = tmp_path / "out"
    assert cli.main(["run", str(cfg), "-o", str(out)]) == 0
    before = (out / "results.jsonl").read_bytes()
    assert cli.main(["run", str(cfg), "-o", str(out)]) == 2
    assert "--force" in capsys.readouterr().err
    assert cli.main(["run", str(cfg), "-o", str(out), "--force"]) == 0
    assert (out / "results.jsonl").read_bytes() == before


def test_invalid_schedule_exits_2_and_writes_nothing(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", str(config_file(a=1.2)), "-o", str(out)]) == 2
    assert not out.exists()
    assert "0<a<1" in capsys.readouterr().err


def test_env_var_selects_output_dir(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("ZOBANDIT_OUTPUT_DIR", str(tmp_path / "envout"))
    assert cli.main(["run", str(config_file(seeds=1, T=64))]) == 0
    assert (tmp_path / "envout" / "results.jsonl").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_episode_abort_exits_3(config_file, tmp_path):
    # from an absurd start the squared distance overflows and the cost is not finite
    cfg = config_file(T=200, seeds=2, mu0=[1e200, 1e200])
    assert cli.main(["run", str(cfg), "-o", str(tmp_path / "o")]) == 3
    recs = list(read_records(tmp_path / "o" / "results.jsonl"))
    assert all(r.payload["aborted_round"] is not None for r in recs)


def test_csv_summary_matches_jsonl(config_file, tmp_path):
    out = tmp_path / "out"
    cli.main(["run", str(config_file()), "-o", str(out)])
    traces = [trace_from_record(r) for r in read_records(out / "results.jsonl")]
    agg = aggregate_regret(traces)
    rows = read_summary_csv(out / "summary.csv")
    assert [r["T_checkpoint"] for r in rows] == agg.checkpoints
    for r, m, se in zip(rows, agg.mean, agg.se):
        assert r["mean_R_over_T"] == pytest.approx(m, rel=1e-12)
        assert r["se"] == pytest.approx(se, rel=1e-12)
        assert (r["n"], r["mode"], r["a"], r["b"]) == (2, "two_point", 0.5, 0.25)
    with open(out / "summary.csv") as fh:
        assert next(csv.reader(fh)) == ["T_checkpoint", "mean_R_over_T", "se", "n", "mode", "a", "b"]


def test_parallel_run_is_byte_identical(config_file, tmp_path):
    cfg = str(config_file(seeds=4, T=300))
    cli.main(["run", cfg, "-o", str(tmp_path / "a")])
    cli.main(["run", cfg, "-o", str(tmp_path / "b"), "-j", "2"])
    assert (tmp_path / "a" / "results.jsonl").read_bytes() == (tmp_path / "b" / "results.jsonl").read_bytes()


def test_records_round_trip_and_resume_keys(tmp_path):
    cfg = parse_config(json.dumps(dict(CONFIG, record_rounds=True, T=64)))
    from zobandit.harness import run_batch

    traces = run_batch(cfg, [0, 1]).traces
    path = tmp_path / "r.jsonl"
    write_records(path, (trace_record(cfg, tr) for tr in traces))
    back = [trace_from_record(r) for r in read_records(path)]
    for a, b in zip(traces, back):
        np.testing.assert_array_equal(a.costs, b.costs)
        assert a.cumulative_regret == b.cumulative_regret
    assert done_keys(path) == {(traces[0].config_hash, 0), (traces[0].config_hash, 1)}
    assert done_keys(tmp_path / "missing.jsonl") == set()


def test_malformed_records(tmp_path):
    with pytest.raises(RecordError):
        ResultRecord.from_json('{"record_kind": "trace"}')
    with pytest.raises(RecordError):
        ResultRecord.from_json(json.dumps({"schema_version": 2, "record_kind": "trace", "config_hash": "x", "seed": 0, "payload": {}}))
    rec = ResultRecord(RecordKind.RATE_FIT, "x", None, {"slope": -0.5})
    with pytest.raises(RecordError):
        trace_from_record(rec)


def _synthetic_file(path, chash, p=0.5, seeds=3):
    cps = [2**k for k in range(4, 12)]
    recs = []
    for s in range(seeds):
        tr = RegretTrace(s, chash, cps[-1], np.zeros(0), np.zeros(2), np.zeros(0), cps,
                         [float(k) ** (1 - p) for k in cps], 0.0)
        rec = trace_record(parse_config(json.dumps(CONFIG)), tr)
        recs.append(rec)
    write_records(path, recs, append=False)


def test_rate_on_exact_power_law(tmp_path, capsys):
    f = tmp_path / "syn.jsonl"
    _synthetic_file(f, "aaaa")
    assert cli.main(["rate", str(f), "--expected", "-0.5"]) == 0
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert out["slope"] == pytest.approx(-0.5, abs=1e-12) and out["consistent"]
    plot = (tmp_path / "syn.rate.csv").read_text().splitlines()
    assert plot[0] == "log_T,log_mean_R_over_T,se" and len(plot) == 9
    assert float(plot[1].split(",")[0]) == pytest.approx(math.log(16))


def test_rate_outside_band_exits_1(tmp_path):
    f = tmp_path / "syn.jsonl"
    _synthetic_file(f, "aaaa", p=0.4)
    assert cli.main(["rate", str(f), "--expected", "-0.5"]) == 0  # within 0.15 of -0.5
    _synthetic_file(f, "aaaa", p=0.1)
    assert cli.main(["rate", str(f), "--expected", "-0.5"]) == 1


def test_rate_rejects_mixed_hashes(tmp_path, capsys):
    f1, f2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    _synthetic_file(f1, "aaaa")
    _synthetic_file(f2, "bbbb")
    assert cli.main(["rate", str(f1), str(f2)]) == 2
    assert "different configs" in capsys.readouterr().err


def test_rate_needs_four_checkpoints(tmp_path, config_file):
    out = tmp_path / "o"
    cli.main(["run", str(config_file(T=4, seeds=2)), "-o", str(out)])
    assert cli.main(["rate", str(out / "results.jsonl")]) == 2


def test_run_then_rate_is_self_contained(config_file, tmp_path):
    out = tmp_path / "o"
    cli.main(["run", str(config_file(T=4096, seeds=4)), "-o", str(out)])
    assert cli.main(["rate", str(out / "results.jsonl"), "--t-min", "64"]) == 0


def test_check_smoothing_passes_and_is_deterministic(capsys):
    assert cli.main(["check", "smoothing", "--seed", "3"]) == 0
    first = capsys.readouterr().out
    assert cli.main(["check", "smoothing", "--seed", "3"]) == 0
    assert capsys.readouterr().out == first
    assert "FAIL" not in first


def test_check_failure_names_property(monkeypatch, capsys):
    monkeypatch.setitem(cli.CHECKS, "smoothing", lambda seed: [cli.CheckRow("smoothing", "x", "estimator unbiasedness", "z=9", "< 4", False)])
    assert cli.main(["check", "smoothing"]) == 1
    assert "estimator unbiasedness" in capsys.readouterr().err


def test_parser_rejects_unknown_scope():
    with pytest.raises(SystemExit):
        cli.main(["check", "everything"])

from __future__ import annotations

import json
from pathlib import Path

import pytest

from macr.cli import main
from macr.config import load_config
from macr.stores import read_jsonl

from conftest import FIXTURE12


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_help_exits_zero(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0 and "usage: macr" in out
    for sub in ("ingest", "reason", "cluster", "predict", "eval", "scm-verify", "cache"):
        assert sub in out


def test_unknown_subcommand_is_usage_error(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 1 and "usage:" in err


def test_no_subcommand_prints_help(capsys):
    code, _, err = run(capsys)
    assert code == 1 and "COMMAND" in err


def test_zero_votes_in_config(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[pipeline]\nT = 0\n")
    code, _, err = run(capsys, "predict", "--config", str(cfg), "--dataset", str(FIXTURE12), "--pool", str(FIXTURE12), "--dry-run")
    assert code == 3 and "votes" in err


def test_predict_dry_run_plan(capsys):
    code, out, _ = run(capsys, "predict", "--dry-run", "--dataset", str(FIXTURE12), "--pool", str(FIXTURE12))
    assert code == 0
    plan = json.loads(out)
    assert (plan["config"]["n"], plan["config"]["K"], plan["config"]["T"]) == (10, 3, 3)
    assert plan["backend_calls_made"] == 0 and plan["trees"] == 12


def test_ingest(capsys, tmp_path):
    code, out, _ = run(capsys, "ingest", "--input", str(FIXTURE12), "--out", str(tmp_path / "norm.jsonl"))
    summary = json.loads(out)
    assert code == 0 and summary["trees"] == 12 and summary["nodes"] == 49
    assert summary["label_counts"] == {"L0": 3, "L1": 3, "L2": 3, "L3": 3}
    assert len(read_jsonl(tmp_path / "norm.jsonl")) == 12


def test_ingest_bad_file(capsys, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "post": "p", "comments": [{"id": "c", "parent_id": "c", "text": "x"}]}\n')
    code, _, err = run(capsys, "ingest", "--input", str(bad), "--validate-only")
    assert code == 3 and "line 1" in err
    code, _, _ = run(capsys, "ingest", "--input", str(tmp_path / "missing.jsonl"))
    assert code == 3


def test_reason_then_cluster(capsys, tmp_path):
    one = tmp_path / "one.jsonl"
    one.write_text(FIXTURE12.read_text().splitlines()[0] + "\n")
    code, _, _ = run(capsys, "--stub", "reason", "--dataset", str(one), "--n", "4", "--out", str(tmp_path / "inf.jsonl"))
    assert code == 0
    assert len(read_jsonl(tmp_path / "inf.jsonl")) == 4
    code, _, _ = run(capsys, "--stub", "cluster", "--inferences", str(tmp_path / "inf.jsonl"), "--k", "2",
                     "--out", str(tmp_path / "med.jsonl"))
    assert code == 0
    (rec,) = read_jsonl(tmp_path / "med.jsonl")
    assert rec["K"] == 2 and sum(rec["sizes"]) == 4


def test_predict_with_stub(capsys, tmp_path):
    out = tmp_path / "pred.jsonl"
    cfg = tmp_path / "small.ini"
    cfg.write_text("[pipeline]\nn = 3\nk = 2\nt = 1\n")
    code, _, _ = run(capsys, "predict", "--stub", "--config", str(cfg), "--dataset", str(FIXTURE12),
                     "--pool", str(FIXTURE12), "--out", str(out))
    assert code == 0
    records = read_jsonl(out)
    assert [r["tree_id"] for r in records] == [f"t{i:02d}" for i in range(1, 13)]


def test_eval_writes_report(capsys, tmp_path):
    cfg = tmp_path / "small.ini"
    cfg.write_text("[pipeline]\nn = 3\nk = 2\nt = 1\n")
    code, out, _ = run(capsys, "eval", "--stub", "--config", str(cfg), "--dataset", str(FIXTURE12), "--k", "3",
                       "--ablations", "full,no_reasoner", "--report", str(tmp_path / "rep"))
    assert code == 0
    assert set(json.loads(out)) == {"full", "no_reasoner"}
    assert (tmp_path / "rep" / "summary.tsv").exists()
    assert (tmp_path / "rep" / "full" / "fold0_predictions.jsonl").exists()


def test_eval_unknown_ablation(capsys):
    code, _, err = run(capsys, "eval", "--stub", "--dataset", str(FIXTURE12), "--ablations", "full,bogus")
    assert code == 3 and "bogus" in err


def test_scm_verify(capsys, tmp_path):
    code, out, _ = run(capsys, "scm-verify", "--samples", "20000", "--seeds", "3", "--report", str(tmp_path / "r.tsv"))
    assert code == 0
    summary = json.loads(out)
    assert summary["max_tv_frontdoor"] < 0.05 and summary["min_tv_naive"] > 0.05
    assert len((tmp_path / "r.tsv").read_text().splitlines()) == 1 + 3 * 2


def test_cache_commands(capsys, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[backend]\ncache_dir = {tmp_path / 'cache'}\n")
    one = tmp_path / "one.jsonl"
    one.write_text(FIXTURE12.read_text().splitlines()[0] + "\n")
    assert run(capsys, "--stub", "--config", str(cfg), "reason", "--dataset", str(one), "--n", "1",
               "--out", str(tmp_path / "i.jsonl"))[0] == 0
    code, out, _ = run(capsys, "cache", "stats", "--config", str(cfg))
    assert code == 0 and json.loads(out)["entries"] == 5  # four debate turns and one embedding
    code, out, _ = run(capsys, "cache", "clear", "--config", str(cfg))
    assert json.loads(out) == {"removed": 5}


def test_cache_without_dir(capsys):
    code, _, err = run(capsys, "cache", "stats")
    assert code == 3 and "cache_dir" in err


@pytest.mark.parametrize("flag", ["--seed", "--stub", "--verbose"])
def test_global_flags_accepted_after_subcommand(capsys, flag):
    argv = ["predict", "--dry-run", "--dataset", str(FIXTURE12), "--pool", str(FIXTURE12), flag]
    if flag == "--seed":
        argv.append("5")
    assert run(capsys, *argv)[0] == 0


def test_example_config_loads():
    cfg = load_config(Path(__file__).parents[1] / "config.example.ini")
    assert (cfg.n, cfg.clusters, cfg.votes) == (10, 3, 3)
    assert cfg.backend.route_for("critic").model == "gpt-4o-mini"
    assert cfg.backend.temperature_for("synthesizer") == 0.2

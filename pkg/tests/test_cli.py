"""End-to-end checks of the experiment runner."""

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest

from qromlab import cli, zoo
from qromlab.cli import ConfigError, ExperimentConfig
from qromlab.errors import QromlabError, ReplayMismatchError
from qromlab.protocol import KEY_ABORT, permutation_gate


def make_config(tmp_path, **overrides):
    base = {
        "mode": "attack",
        "protocol": "announced-query",
        "n": 4,
        "trials": 8,
        "seed": 11,
        "eps": [0.05],
        "lam": 0.05,
        "out_dir": str(tmp_path / "out"),
    }
    base.update(overrides)
    return ExperimentConfig.from_json(base)


def read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def test_config_validation_is_itemized():
    cfg = ExperimentConfig(mode="attack", protocol="announced-query",
                           trials=0, eps=(1.5,), lam=0.0, group=(1,))
    problems = cfg.validate()
    assert any("trials" in p for p in problems)
    assert any("eps" in p for p in problems)
    assert any("lam" in p for p in problems)
    assert any("group" in p for p in problems)
    assert any("mode" in p for p in ExperimentConfig(mode="nope").validate())


def test_unknown_config_key_is_rejected():
    with pytest.raises(ConfigError, match="unknown config key 'epz'"):
        ExperimentConfig.from_json({"mode": "attack", "epz": 0.1})


def test_scalar_eps_becomes_a_grid():
    cfg = ExperimentConfig.from_json({"mode": "attack", "eps": 0.1})
    assert cfg.eps == (0.1,)


def test_attack_run_writes_csv_and_consistent_summary(tmp_path):
    cfg = make_config(tmp_path)
    summary = cli.run_experiment(cfg)
    out = Path(cfg.out_dir)
    rows = read_rows(out / "trials_eps0.csv")
    assert [len(rows)] == [cfg.trials]
    assert list(rows[0]) == list(cli.ATTACK_COLUMNS)

    successes = 0
    l_total = 0
    for row in rows:
        if (row["aborted"] == "0" and row["k_A"] != ""
                and int(row["k_A"]) != KEY_ABORT
                and row["k_E"] == row["k_A"] == row["k_B"]):
            successes += 1
        l_total += int(row["L_size"])
    assert summary["success_rate"] == successes / cfg.trials
    assert summary["mean_L"] == l_total / cfg.trials
    assert summary["success_rate"] == 1.0
    assert summary["conjecture_relevant_trials"] == []

    stored = json.loads((out / "summary.json").read_text())
    assert stored["success_rate"] == summary["success_rate"]
    assert stored["config"]["protocol_json"]["name"] == "announced-query"


def test_eps_sweep_writes_one_csv_per_value(tmp_path):
    cfg = make_config(tmp_path, trials=3, eps=[0.05, 0.2])
    summary = cli.run_experiment(cfg)
    assert len(summary["sweeps"]) == 2
    assert (Path(cfg.out_dir) / "trials_eps0.csv").exists()
    assert (Path(cfg.out_dir) / "trials_eps1.csv").exists()
    # per-sweep stats stay inside the sweep blocks for a grid
    assert "success_rate" not in summary


def test_guess_only_leaves_alice_columns_empty(tmp_path):
    cfg = make_config(tmp_path, guess_only=True, trials=4)
    summary = cli.run_experiment(cfg)
    rows = read_rows(Path(cfg.out_dir) / "trials_eps0.csv")
    assert all(row["k_A"] == "" for row in rows)
    assert all(row["eq_simulatedm"] == "nan" for row in rows)
    assert summary["key_match_rate"] == 1.0
    assert summary["success_rate"] == 0.0
    assert summary["min_eq_simulatedm"] is None


def test_runs_are_deterministic_across_thread_counts(tmp_path, monkeypatch):
    outputs = []
    for threads, name in (("1", "a"), ("3", "b")):
        monkeypatch.setenv("QROMLAB_THREADS", threads)
        cfg = make_config(tmp_path / name, trials=6)
        summary = cli.run_experiment(cfg)
        rows = read_rows(Path(cfg.out_dir) / "trials_eps0.csv")
        for row in rows:
            row.pop("seconds")
        summary.pop("wall_time")
        summary["config"].pop("out_dir")
        outputs.append((rows, summary))
    assert outputs[0] == outputs[1]


def test_worker_count_reads_the_env(monkeypatch):
    monkeypatch.setenv("QROMLAB_THREADS", "5")
    assert cli.worker_count() == 5
    monkeypatch.setenv("QROMLAB_THREADS", "0")
    assert cli.worker_count() == 1
    monkeypatch.setenv("QROMLAB_THREADS", "many")
    with pytest.raises(ConfigError):
        cli.worker_count()


def test_learner_only_mode_reports_query_counts(tmp_path):
    cfg = make_config(tmp_path, mode="learner-only", protocol="merkle", trials=6)
    summary = cli.run_experiment(cfg)
    rows = read_rows(Path(cfg.out_dir) / "trials_eps0.csv")
    assert list(rows[0]) == list(cli.LEARNER_COLUMNS)
    p = cfg.resolve_protocol()
    assert summary["mean_L"] <= p.query_budget / cfg.eps[0]
    assert summary["abort_rate"] == 0.0
    assert summary["max_residual_weight"] < cfg.eps[0]


def test_pcc_search_mode_with_no_queries_finds_nothing(tmp_path):
    cfg = ExperimentConfig.from_json({
        "mode": "pcc-search", "n": 4, "trials": 25, "seed": 5,
        "delta": 0.5, "d": 0, "out_dir": str(tmp_path / "out"),
    })
    summary = cli.run_experiment(cfg)
    assert summary["counterexamples_found"] == 0
    assert summary["goodstate_pairs"] == 25
    assert summary["min_margin"] == 1.0
    assert "hit_dump" not in summary


def test_oracle_equivalence_mode_confirms_the_purified_model(tmp_path):
    cfg = ExperimentConfig.from_json({
        "mode": "oracle-equivalence", "n": 3, "trials": 5, "seed": 2,
        "queries": 2, "out_dir": str(tmp_path / "out"),
    })
    summary = cli.run_experiment(cfg)
    assert summary["max_tv"] <= 1e-9
    rows = read_rows(Path(cfg.out_dir) / "trials.csv")
    assert list(rows[0]) == list(cli.EQUIV_COLUMNS)


def test_replay_matches_recorded_rows(tmp_path):
    cfg = make_config(tmp_path, trials=5)
    cli.run_experiment(cfg)
    report = cli.replay(3, cfg.out_dir)
    assert report["recorded"]["trial"] == "3"
    assert report["recomputed"]["k_E"] == int(report["recorded"]["k_E"])


def test_replay_notices_a_tampered_row(tmp_path):
    cfg = make_config(tmp_path, trials=4)
    cli.run_experiment(cfg)
    path = Path(cfg.out_dir) / "trials_eps0.csv"
    lines = path.read_text().splitlines()
    cells = lines[2].split(",")
    cells[6] = "0.125"
    lines[2] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ReplayMismatchError, match="eq_find"):
        cli.replay(1, cfg.out_dir)


def broken_announced():
    p = zoo.announced_query_protocol(4)
    flip = permutation_gate(np.array([1, 0]), ("M",))
    bob = p.rounds[1]
    rounds = (p.rounds[0], dataclasses.replace(bob, program=bob.program + (flip,)))
    return dataclasses.replace(p, name="announced-flipped", rounds=rounds)


def test_conjecture_relevant_trials_are_dumped_and_replayable(tmp_path):
    proto_path = tmp_path / "flipped.json"
    proto_path.write_text(json.dumps(broken_announced().to_json()))
    cfg = make_config(tmp_path, protocol=str(proto_path), trials=3)
    summary = cli.run_experiment(cfg)
    assert summary["conjecture_relevant_trials"] == [0, 1, 2]
    dump_path = Path(cfg.out_dir) / "dumps" / "trial0_eps0.json"
    assert dump_path.exists()

    report = cli.replay(0, cfg.out_dir)
    check = report["recomputed"]["dump_check"]
    assert check["compatible"]
    assert not check["contradicts_conjecture"]

    dump = json.loads(dump_path.read_text())
    dump["table"][0] = (dump["table"][0] + 1) % 2
    dump_path.write_text(json.dumps(dump, sort_keys=True))
    with pytest.raises(ReplayMismatchError, match="dump"):
        cli.replay(0, cfg.out_dir)


def test_replay_rejects_a_directory_without_a_summary(tmp_path):
    with pytest.raises(QromlabError, match="summary.json"):
        cli.replay(0, tmp_path)


def test_describe_flags_the_model_standing():
    text = cli.describe("announced-query", n=4)
    assert "active attack applies" in text
    assert "query budget d = 1" in text
    trivial = cli.describe("trivial-last-message", n=4)
    assert "outside the attack's hypothesis" in trivial
    qpke = cli.describe("ka-from-toy-qpke", n=4)
    assert "reduction shape" in qpke


def test_main_run_and_exit_codes(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "mode": "attack", "protocol": "announced-query", "n": 4,
        "trials": 2, "seed": 0, "eps": 0.05, "lam": 0.05,
        "out_dir": str(tmp_path / "out"),
    }))
    assert cli.main(["run", "--config", str(cfg_path)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["success_rate"] == 1.0
    assert (tmp_path / "out" / "summary.json").exists()

    assert cli.main(["run", "--config", str(tmp_path / "absent.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"mode": "attack", "protocol": "nope", "trials": -1}))
    assert cli.main(["run", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "trials" in err and "nope" in err

    assert cli.main(["describe", "announced-query", "--n", "4"]) == 0
    assert cli.main(["replay", "0", str(tmp_path / "void")]) == 1


def test_out_override_beats_the_configured_directory(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "mode": "oracle-equivalence", "n": 2, "trials": 2, "seed": 1,
        "queries": 1, "out_dir": str(tmp_path / "ignored"),
    }))
    other = tmp_path / "actual"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(other)]) == 0
    capsys.readouterr()
    assert (other / "summary.json").exists()
    assert not (tmp_path / "ignored").exists()

import dataclasses
import json
import math
from pathlib import Path

import pytest

from rbrl.cli import main
from rbrl.harness import (
    ExperimentConfig, SummaryRow, final_window, parse_axis, preset, read_summary_csv, run_sweep, summarize,
    summarize_dir,
)
from rbrl.policy import CurvePoint, RunRecord

TINY = ExperimentConfig(
    name="tiny", budget=10, hidden_width=16, reward_epochs=3, reward_batch_size=8, seeds=(0, 1), total_steps=2400,
    ppo={"rollout_length": 512, "exploration_steps": 1600, "eval_interval": 800, "eval_episodes": 4,
         "hidden_width": 16, "epochs_per_update": 2},
)


def rec(finals, seed=0):
    return RunRecord(seed, [CurvePoint(i, float(v), 0.0, 2) for i, v in enumerate(finals)])


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


class TestConfig:
    def test_round_trip(self):
        for cfg in (TINY, preset("optimized"), preset("paper_default")):
            assert ExperimentConfig.from_json(cfg.to_json()) == cfg
            assert ExperimentConfig.from_json(cfg.to_json()).to_json() == cfg.to_json()

    def test_file_round_trip(self, tmp_path):
        TINY.save(tmp_path / "c.json")
        assert ExperimentConfig.load(tmp_path / "c.json") == TINY

    @pytest.mark.parametrize("kwargs", [
        dict(seeds=()), dict(seeds=(1, 1)), dict(env="walker"), dict(n_classes=1), dict(k=0.0),
        dict(dropout=1.0), dict(activation="relu"), dict(optimizer="sgd"), dict(ppo={"gamma": 2.0}),
        dict(ppo={"bogus": 1}), dict(budget=0),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            dataclasses.replace(TINY, **kwargs)

    def test_unknown_key_rejected(self):
        d = TINY.to_dict()
        d["colour"] = "blue"
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict(d)

    def test_with_value(self):
        assert TINY.with_value("k", 5.0).k == 5.0
        assert TINY.with_value("ppo.gamma", 0.9).ppo["gamma"] == 0.9
        with pytest.raises(ValueError):
            TINY.with_value("seeds", [1])
        with pytest.raises(ValueError):
            TINY.with_value("dropout", 1.5)

    def test_default_max_reward_follows_env(self):
        assert TINY.rater_config().max_reward == 20.0
        assert dataclasses.replace(TINY, env="linerunner").rater_config().max_reward == 25.0


class TestPresets:
    def test_optimized(self):
        c = preset("optimized")
        assert (c.k, c.optimizer, c.hidden_layers, c.dropout, c.activation, c.learning_rate) == \
            (1.0, "adamw", 2, 0.05, "arctan", 0.0005)

    def test_paper_default(self):
        c = preset("paper_default")
        assert (c.k, c.optimizer, c.hidden_layers, c.dropout, c.activation, c.learning_rate) == \
            (1.0, "adam", 3, 0.0, "tanh", 3e-4)

    def test_shared_protocol(self):
        a, b = preset("optimized"), preset("paper_default")
        for f in ("env", "n_classes", "budget", "total_steps", "seeds", "q_variant", "max_reward", "ppo"):
            assert getattr(a, f) == getattr(b, f)

    def test_unknown(self):
        with pytest.raises(ValueError):
            preset("best")


class TestSummarize:
    def test_identical(self):
        assert summarize([rec([5, 7]), rec([5, 7])]) == (7.0, 0.0)

    def test_hand_value(self):
        m, se = summarize([rec([10.0]), rec([20.0])])
        assert m == 15.0
        assert se == pytest.approx(math.sqrt(50) / math.sqrt(2), abs=1e-12)
        assert se == pytest.approx(5.0, abs=1e-12)

    def test_permutation_invariant(self):
        recs = [rec([1.3, 2.2]), rec([0.1, 9.7]), rec([4.4, 3.3]), rec([8.0, 0.25])]
        assert summarize(recs) == summarize(recs[::-1]) == summarize(recs[1:] + recs[:1])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            summarize([])

    @pytest.mark.parametrize("n, window", [(1, 1), (9, 1), (10, 1), (11, 2), (26, 3)])
    def test_final_window(self, n, window):
        assert len(final_window(list(range(n)))) == window

    def test_single_seed_stderr_zero(self):
        assert summarize([rec(list(range(20)))]) == (18.5, 0.0)


def test_parse_axis():
    assert parse_axis("dropout=0,5%,0.1") == ("dropout", [0, 0.05, 0.1])
    assert parse_axis("activation=tanh,arctan") == ("activation", ["tanh", "arctan"])
    for bad in ("dropout", "=1,2", "k="):
        with pytest.raises(ValueError):
            parse_axis(bad)


def test_single_run_summary(tmp_path):
    cfg = dataclasses.replace(TINY, seeds=(3,))
    res = run_sweep(cfg, "k", [1.0], out=tmp_path)
    assert len(res.records) == 1
    (r,) = res.records.values()
    row = res.summaries[0]
    assert row.n_seeds == 1 and row.stderr == 0.0
    assert row.mean == sum(p.mean_true_return for p in final_window(r.curve)) / len(final_window(r.curve))
    assert (tmp_path / "runs" / "k=1.0_seed3" / "curve.csv").exists()


def test_failed_runs_are_missing_cells(tmp_path):
    res = run_sweep(TINY, "budget", [5, 100_000], out=tmp_path)
    assert [r.n_seeds for r in res.summaries] == [2, 0]
    assert res.summaries[1].mean is None
    assert all(res.records[(1, s)].status == "failed" for s in TINY.seeds)
    rows = read_summary_csv(tmp_path / "summary.csv")
    assert rows[1] == SummaryRow("100000", None, None, 0)


def test_sweep_is_deterministic_across_workers(tmp_path):
    run_sweep(TINY, "n_classes", [2, 3], workers=1, out=tmp_path / "a")
    run_sweep(TINY, "n_classes", [2, 3], workers=2, out=tmp_path / "b")
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b
    assert {"summary.csv", "curves_long.csv", "config.json"} <= set(a)
    assert sum(k.endswith("curve.csv") for k in a) == 4


def test_summary_recomputes_from_disk(tmp_path):
    res = run_sweep(TINY, "k", [0.5, 5.0], out=tmp_path)
    assert summarize_dir(tmp_path) == res.summaries
    assert read_summary_csv(tmp_path / "summary.csv") == [
        SummaryRow(str(r.axis_value), r.mean, r.stderr, r.n_seeds) for r in res.summaries]


class TestCli:
    def test_preset(self, capsys, tmp_path):
        assert main(["preset", "optimized"]) == 0
        assert ExperimentConfig.from_json(capsys.readouterr().out) == preset("optimized")
        assert main(["preset", "paper_default", "--out", str(tmp_path / "p.json")]) == 0
        assert ExperimentConfig.load(tmp_path / "p.json") == preset("paper_default")

    def test_run_sweep_summarize(self, tmp_path, capsys):
        TINY.save(tmp_path / "c.json")
        assert main(["run", "--config", str(tmp_path / "c.json"), "--seeds", "4", "--out", str(tmp_path / "r")]) == 0
        assert (tmp_path / "r" / "runs" / "name=tiny_seed4" / "curve.csv").exists()
        assert main(["sweep", "--config", str(tmp_path / "c.json"), "--axis", "dropout=0,10%",
                     "--out", str(tmp_path / "s"), "--workers", "2"]) == 0
        before = (tmp_path / "s" / "summary.csv").read_bytes()
        assert main(["summarize", "--out", str(tmp_path / "s")]) == 0
        assert (tmp_path / "s" / "summary.csv").read_bytes() == before
        assert "dropout" in capsys.readouterr().out
        rows = read_summary_csv(tmp_path / "s" / "summary.csv")
        assert [r.axis_value for r in rows] == ["0", "0.1"]
        assert json.loads((tmp_path / "s" / "config.json").read_text())["name"] == "tiny"

    def test_errors(self, tmp_path, capsys):
        TINY.save(tmp_path / "c.json")
        assert main(["sweep", "--config", str(tmp_path / "c.json"), "--axis", "bogus=1", "--out",
                     str(tmp_path / "x")]) == 2
        assert main(["summarize", "--out", str(tmp_path / "empty")]) == 2
        with pytest.raises(SystemExit):
            main(["preset", "nope"])

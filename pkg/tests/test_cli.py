"""Command-line interface: config handling, artifacts, exit codes."""

import json
import os

import pytest

from dvelab.cli import main
from dvelab.config import (ConfigError, apply_overrides, build_train_config,
                           parse_config_text, resolved_config_text)
from dvelab.trainer import CriticMode


FAST_TRAIN = [
    "--set", "env.width=6", "--set", "env.height=3", "--set", "env.t_max=12",
    "--set", "env.obs_window=3", "--set", "env.n_levels=2",
    "--set", "env.families=corridor", "--set", "env.family_mix=1",
    "--set", "trunk=8", "--set", "hidden=8", "--set", "n_workers=2",
    "--set", "steps_per_worker_per_update=32", "--set", "total_env_steps=150",
    "--set", "minibatch_size=2", "--set", "epochs_per_update=1",
]


def run_train(tmp_path, extra=()):
    code = main(["train", "--out", str(tmp_path), *FAST_TRAIN, *extra])
    assert code == 0
    runs = [d for d in tmp_path.iterdir() if d.is_dir()]
    assert len(runs) == 1
    return runs[0]


class TestConfigParsing:
    def test_parse_and_build(self):
        text = "mode = dve\ngamma = 0.95\nn_b = 2\n# comment\n\nhidden = 16\n"
        mapping = parse_config_text(text)
        cfg, extras = build_train_config(mapping)
        assert cfg.critic_mode is CriticMode.DVE
        assert cfg.gamma == 0.95 and cfg.env.gamma == 0.95
        assert cfg.n_b == 2 and cfg.hidden == 16

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            build_train_config(parse_config_text("banana = 3\n"))

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            build_train_config(parse_config_text("gamma = high\n"))

    def test_overrides_win(self):
        mapping = parse_config_text("gamma = 0.9\n")
        mapping = apply_overrides(mapping, ["gamma=0.5", "seed=7"])
        cfg, _ = build_train_config(mapping)
        assert cfg.gamma == 0.5 and cfg.seed == 7

    def test_resolved_round_trip(self):
        cfg, extras = build_train_config(
            parse_config_text("mode = sparse-dve\nn_b = 4\nseed = 3\n"))
        text = resolved_config_text(cfg, extras)
        cfg2, extras2 = build_train_config(parse_config_text(text))
        assert cfg2 == cfg and extras2 == extras


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_bad_override_key(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path),
                     "--set", "nonsense=1"]) == 2

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path),
                     "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_missing_run_dir(self, tmp_path, capsys):
        assert main(["analyze", "values", "--run", str(tmp_path / "absent"),
                     "--out", str(tmp_path)]) == 2


class TestTrainCommand:
    def test_artifacts(self, tmp_path, capsys):
        run = run_train(tmp_path)
        for name in ("manifest.json", "config.resolved", "train_log.csv",
                     "final.ckpt"):
            assert (run / name).exists(), name
        manifest = json.loads((run / "manifest.json").read_text())
        for key in ("run_id", "build_id", "seed", "mode", "started",
                    "finished", "artifacts"):
            assert key in manifest
        for name in manifest["artifacts"]:
            assert (run / name).exists(), name
        header = (run / "train_log.csv").read_text().splitlines()[0]
        assert header.startswith("update,env_steps,mean_reward")

    def test_deterministic_log(self, tmp_path, capsys):
        a = run_train(tmp_path / "a", extra=["--seed", "11"])
        b = run_train(tmp_path / "b", extra=["--seed", "11"])
        assert (a / "train_log.csv").read_bytes() == \
               (b / "train_log.csv").read_bytes()

    def test_out_env_var(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("DVE_LAB_OUT", str(tmp_path / "envroot"))
        code = main(["train", *FAST_TRAIN])
        assert code == 0
        assert any((tmp_path / "envroot").iterdir())


class TestAnalyzeCommands:
    def test_values_on_run(self, tmp_path, capsys):
        run = run_train(tmp_path / "t")
        out = tmp_path / "values"
        assert main(["analyze", "values", "--run", str(run), "--scene-id",
                     "0", "--out", str(out)]) == 0
        sub = next(d for d in out.iterdir() if d.is_dir())
        summary = json.loads((sub / "summary.json").read_text())
        assert summary["max_bellman_residual"] < 1e-9
        assert (sub / "values.csv").exists()

    def test_aic_on_sample_file(self, tmp_path, capsys):
        import numpy as np
        from dvelab.rng import stream
        rng = stream(0, "test.cli.aic")
        samples = np.concatenate([rng.normal(0, 0.3, 80),
                                  rng.normal(6, 0.3, 80)])
        path = tmp_path / "samples.txt"
        np.savetxt(path, samples)
        out = tmp_path / "aic"
        assert main(["analyze", "aic", "--samples", str(path), "--cmin", "1",
                     "--cmax", "3", "--out", str(out)]) == 0
        sub = next(d for d in out.iterdir() if d.is_dir())
        summary = json.loads((sub / "summary.json").read_text())
        assert summary["c_star"] == 2

    def test_lemma_check(self, tmp_path, capsys):
        out = tmp_path / "lemma"
        assert main(["analyze", "lemma-check", "--n-baselines", "5",
                     "--out", str(out)]) == 0
        sub = next(d for d in out.iterdir() if d.is_dir())
        summary = json.loads((sub / "summary.json").read_text())
        assert summary["max_gradient_deviation"] < 1e-10
        assert summary["perturbation_margin"] > 0
        assert summary["scene_generic_gap"] > 0

    def test_varstudy(self, tmp_path, capsys):
        out = tmp_path / "var"
        assert main(["analyze", "varstudy", "--out", str(out)]) == 0
        sub = next(d for d in out.iterdir() if d.is_dir())
        assert (sub / "varstudy.csv").exists()

    def test_clusters_requires_dynamic_run(self, tmp_path, capsys):
        run = run_train(tmp_path / "t", extra=["--mode", "dve",
                                               "--set", "n_b=2"])
        out = tmp_path / "clu"
        assert main(["analyze", "clusters", "--run", str(run), "--episodes",
                     "2", "--out", str(out)]) == 0
        sub = next(d for d in out.iterdir() if d.is_dir())
        header = (sub / "clusters.csv").read_text().splitlines()[0]
        assert header.split(",")[0] == "scene_id"


class TestEnvShow:
    def test_renders(self, capsys):
        assert main(["env", "show", "--seed", "3", "--family", "maze",
                     "--width", "6", "--height", "5"]) == 0
        out = capsys.readouterr().out
        assert "S" in out and "G" in out


class TestBench:
    def test_single_cell(self, tmp_path, capsys):
        code = main(["bench", "--out", str(tmp_path), "--modes", "baseline",
                     "--seeds", "1", *FAST_TRAIN])
        assert code == 0
        bench = next(d for d in tmp_path.iterdir() if d.is_dir())
        table = (bench / "bench_table.csv").read_text().splitlines()
        assert table[0].startswith("mode,seeds,reward_mean")
        assert table[1].startswith("baseline,1,")
        out = capsys.readouterr().out
        assert "baseline" in out

"""PPO trainer: advantages, plateau gating, rollout determinism, training."""

import numpy as np
import pytest

from dvelab.dvehead import CcConfig, CcMode
from dvelab.envkit import EnvConfig, Family, make_pool
from dvelab.errors import InsufficientHistoryError, LengthMismatchError
from dvelab.netcore import init_params
from dvelab.rng import stream
from dvelab.trainer import (CriticMode, TrainConfig, collect_rollouts,
                            compute_gae, critic_from_heads, csv_columns,
                            plateau_detector, train)


def corridor_config(**kw):
    env = EnvConfig(width=6, height=3, obs_window=3, t_max=12, n_levels=2,
                    families=(Family.CORRIDOR,), family_mix=(1.0,))
    base = dict(env=env, trunk=(8,), hidden=8, n_workers=2,
                steps_per_worker_per_update=48, total_env_steps=400,
                minibatch_size=2, epochs_per_update=2, learning_rate=1e-3)
    base.update(kw)
    return TrainConfig(**base)


class TestGae:
    def test_hand_example(self):
        est = compute_gae(np.array([0.0, 1.0]), np.array([0.5, 0.5]),
                          bootstrap_value=0.0, gamma=0.9, gae_lambda=0.95)
        np.testing.assert_allclose(est.psi, [0.3775, 0.5], atol=1e-12)
        np.testing.assert_allclose(est.returns, est.psi + 0.5, atol=1e-12)

    def test_lambda_zero_is_td(self):
        r = np.array([1.0, 0.0, 2.0])
        v = np.array([0.3, -0.1, 0.7])
        est = compute_gae(r, v, 0.5, gamma=0.9, gae_lambda=0.0)
        nxt = np.append(v[1:], 0.5)
        np.testing.assert_allclose(est.psi, r + 0.9 * nxt - v, atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            compute_gae(np.zeros(3), np.zeros(2), 0.0, 0.9, 0.95)


class TestPlateau:
    def test_hand_example(self):
        history = [30, 32, 31, 31, 30, 31]
        assert plateau_detector(history, window=6, slope_threshold=0.05)
        # OLS slope is -1/35; a threshold just below it must flip the verdict
        assert not plateau_detector(history, 6, slope_threshold=-0.03)

    def test_constant_history(self):
        assert plateau_detector([5.0] * 8, window=8, slope_threshold=0.0)

    def test_rising_history(self):
        assert not plateau_detector(list(range(10)), 10, slope_threshold=0.5)

    def test_insufficient_history(self):
        with pytest.raises(InsufficientHistoryError):
            plateau_detector([1.0, 2.0], window=5, slope_threshold=0.1)


class TestCriticFromHeads:
    def test_baseline(self):
        v, a, d = critic_from_heads({"value": np.array([2.5])},
                                    CriticMode.BASELINE, n_b=1)
        assert v == 2.5 and a is None and d is None

    def test_dve_uniform(self):
        heads = {"att": np.zeros(2), "mu": np.array([1.0, 3.0])}
        v, a, d = critic_from_heads(heads, CriticMode.DVE, n_b=2)
        assert v == pytest.approx(2.0)
        np.testing.assert_allclose(a, [0.5, 0.5])
        assert d == pytest.approx(1.0)


class TestRollouts:
    def test_deterministic(self):
        cfg = corridor_config()
        cfg.validate()
        spec = cfg.net_spec()
        pool = make_pool(cfg.env, seed=0)
        params = init_params(spec, stream(0, "init"))

        def batch():
            rngs = [stream(cfg.seed, f"rollout.worker{w}")
                    for w in range(cfg.n_workers)]
            return collect_rollouts(params, spec, pool, cfg, rngs)

        a, b = batch(), batch()
        assert a.snapshot_id == b.snapshot_id
        assert a.env_steps == b.env_steps
        for ta, tb in zip(a.trajectories, b.trajectories):
            np.testing.assert_array_equal(ta.actions, tb.actions)
            np.testing.assert_array_equal(ta.rewards, tb.rewards)

    def test_meets_step_quota(self):
        cfg = corridor_config()
        spec = cfg.net_spec()
        pool = make_pool(cfg.env, seed=0)
        params = init_params(spec, stream(0, "init"))
        rngs = [stream(0, f"rollout.worker{w}") for w in range(cfg.n_workers)]
        batch = collect_rollouts(params, spec, pool, cfg, rngs)
        assert batch.env_steps >= cfg.n_workers * cfg.steps_per_worker_per_update


class TestCsvColumns:
    def test_layout(self):
        cols = csv_columns(3)
        assert cols[:3] == ["update", "env_steps", "mean_reward"]
        assert cols[-3:] == ["rho_1", "rho_2", "rho_3"]
        assert "mean_delta" in cols and "nav_efficiency" in cols


class TestTrain:
    def test_baseline_smoke(self):
        cfg = corridor_config()
        report = train(cfg, make_pool(cfg.env, seed=0))
        assert len(report.rows) >= 2
        row = report.rows[-1]
        for col in csv_columns(cfg.n_b):
            assert col in row
        assert row["env_steps"] >= cfg.total_env_steps
        assert np.isfinite(row["mean_reward"])

    def test_dve_emits_sparsity_telemetry(self):
        cfg = corridor_config(critic_mode=CriticMode.DVE, n_b=2)
        report = train(cfg, make_pool(cfg.env, seed=0))
        row = report.rows[-1]
        assert 0.5 - 1e-9 <= row["mean_delta"] <= 1.0 + 1e-9
        assert row["rho_1"] + row["rho_2"] == pytest.approx(
            row["mean_delta"], rel=0.5)  # same quantity, episode-weighted

    def test_class1_gate_active_from_start(self):
        cfg = corridor_config(critic_mode=CriticMode.SPARSE_DVE, n_b=2,
                              cc=CcConfig(mode=CcMode.CLASS1))
        report = train(cfg, make_pool(cfg.env, seed=0))
        assert all(row["cc_active"] for row in report.rows)

    def test_class2_gate_waits_for_pretrain(self):
        cfg = corridor_config(critic_mode=CriticMode.SPARSE_DVE, n_b=2,
                              cc=CcConfig(mode=CcMode.CLASS2,
                                          pretrain_steps=10**9),
                              plateau_window=2)
        report = train(cfg, make_pool(cfg.env, seed=0))
        assert not any(row["cc_active"] for row in report.rows)

    def test_deterministic_rows(self):
        cfg = corridor_config(seed=5)
        pool = make_pool(cfg.env, seed=0)
        a = train(corridor_config(seed=5), pool).rows
        b = train(cfg, pool).rows
        assert a == b

    def test_validation_rejects_bad_config(self):
        with pytest.raises(ValueError):
            corridor_config(clip_eps=0.0).validate()
        with pytest.raises(ValueError):
            corridor_config(n_b=0).validate()

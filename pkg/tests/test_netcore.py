"""Network-level checks: forward passes, whole-net gradients, checkpoints."""

import numpy as np
import pytest

from dvelab.errors import (CheckpointError, DimMismatchError,
                           NonFiniteGradError, NonFiniteInputError)
from dvelab.netcore import (AdamOptimizer, NetSpec, ParamVector,
                            RecurrentState, Tape, backward, bind_params,
                            forward, forward_sequence, grad_check,
                            init_params, load_checkpoint, ops,
                            save_checkpoint)
from dvelab.rng import stream


def tiny_spec(**heads):
    heads = heads or {"policy": 4, "value": 1}
    return NetSpec(input_dim=5, trunk=(6,), hidden=4, heads=heads)


class TestInit:
    def test_forget_gate_bias(self):
        spec = tiny_spec()
        pv = init_params(spec, stream(0, "init"))
        b = pv.view("lstm.b")
        H = spec.hidden
        np.testing.assert_array_equal(b[H:2 * H], 1.0)
        np.testing.assert_array_equal(b[:H], 0.0)

    def test_policy_head_zero_value_head_random(self):
        pv = init_params(tiny_spec(), stream(0, "init"))
        assert not pv.view("head.policy.W").any()
        assert pv.view("head.value.W").any()

    def test_mu_heads_break_symmetry(self):
        spec = tiny_spec(policy=4, mu=3, att=3)
        pv = init_params(spec, stream(0, "init"))
        W = pv.view("head.mu.W")
        assert not np.allclose(W[0], W[1])
        assert not pv.view("head.att.W").any()

    def test_deterministic(self):
        a = init_params(tiny_spec(), stream(3, "init"))
        b = init_params(tiny_spec(), stream(3, "init"))
        np.testing.assert_array_equal(a.values, b.values)


class TestForward:
    def test_shapes(self):
        spec = tiny_spec()
        pv = init_params(spec, stream(0, "init"))
        heads, rs = forward(pv, spec, np.zeros(5), RecurrentState.zeros(4), None)
        assert heads["policy"].shape == (4,)
        assert heads["value"].shape == (1,)
        assert rs.hidden.shape == (4,)

    def test_input_validation(self):
        spec = tiny_spec()
        pv = init_params(spec, stream(0, "init"))
        with pytest.raises(DimMismatchError):
            forward(pv, spec, np.zeros(7), RecurrentState.zeros(4), None)
        with pytest.raises(NonFiniteInputError):
            forward(pv, spec, np.full(5, np.nan), RecurrentState.zeros(4), None)

    def test_sequence_matches_stepwise(self):
        """Batched replay must agree with the step-by-step recurrence."""
        spec = tiny_spec()
        pv = init_params(spec, stream(1, "init"))
        obs = stream(2, "obs").normal(size=(7, 5))
        seq_heads = forward_sequence(pv, spec, obs, None)
        rs = RecurrentState.zeros(spec.hidden)
        for t in range(7):
            heads, rs = forward(pv, spec, obs[t], rs, None)
            np.testing.assert_allclose(seq_heads["value"][t], heads["value"],
                                       atol=1e-12)
            np.testing.assert_allclose(seq_heads["policy"][t], heads["policy"],
                                       atol=1e-12)

    def test_taped_equals_untaped(self):
        spec = tiny_spec()
        pv = init_params(spec, stream(1, "init"))
        obs = stream(4, "obs").normal(size=5)
        plain, _ = forward(pv, spec, obs, RecurrentState.zeros(4), None)
        tape = Tape()
        taped, _ = forward(pv, spec, obs, RecurrentState.zeros(4), tape)
        from dvelab.netcore.tape import val
        np.testing.assert_array_equal(val(taped["policy"]), plain["policy"])


class TestGradCheck:
    def test_whole_network(self):
        report = grad_check(tiny_spec(), n_trials=3, seed=0)
        assert report.max_rel_err < 1e-4
        assert report.passed

    def test_dve_heads(self):
        report = grad_check(tiny_spec(policy=4, mu=2, att=2), n_trials=2, seed=1)
        assert report.max_rel_err < 1e-4


class TestAdam:
    def test_moves_against_gradient(self):
        pv = ParamVector([("w", (3,))])
        pv.values[:] = 1.0
        pv.grads[:] = np.array([1.0, -1.0, 0.0])
        opt = AdamOptimizer(pv.size, learning_rate=0.1)
        opt.step(pv)
        assert pv.values[0] < 1.0 < pv.values[1]
        assert pv.values[2] == 1.0
        assert not pv.grads.any()  # grads zeroed by the step

    def test_nonfinite_grad_rejected(self):
        pv = ParamVector([("w", (2,))])
        pv.grads[:] = [np.nan, 0.0]
        with pytest.raises(NonFiniteGradError):
            AdamOptimizer(pv.size).step(pv)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        spec = tiny_spec()
        pv = init_params(spec, stream(9, "init"))
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, pv, spec)
        loaded, spec2 = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.values, pv.values)
        assert spec2.to_json() == spec.to_json()

    def test_spec_mismatch_detected(self, tmp_path):
        spec = tiny_spec()
        pv = init_params(spec, stream(9, "init"))
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, pv, spec)
        other = tiny_spec(policy=4, mu=2, att=2)
        import json
        with open(str(path) + ".json", "w") as fh:
            json.dump(other.to_json(), fh)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        spec = tiny_spec()
        pv = init_params(spec, stream(9, "init"))
        path = tmp_path / "net.ckpt"
        save_checkpoint(path, pv, spec)
        blob = path.read_bytes()
        path.write_bytes(b"XXXX" + blob[4:])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

"""Dynamic-critic head: confusion, contribution, and the cc loss."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dvelab.dvehead import (AttentionTrace, CcConfig, cc_loss, confusion,
                            contribution, dve_forward)
from dvelab.errors import (EmptyBatchError, EmptyTraceError, NotSimplexError)
from dvelab.netcore import Tape, backward
from dvelab.netcore.tape import val


def simplex_rows(n_b, min_rows=1, max_rows=8):
    """Strategy producing (T, n_b) matrices of simplex rows."""
    row = st.lists(st.floats(1e-3, 1.0), min_size=n_b, max_size=n_b)
    return st.lists(row, min_size=min_rows, max_size=max_rows).map(
        lambda rows: np.array([np.array(r) / np.sum(r) for r in rows]))


class TestConfusion:
    @settings(max_examples=200, deadline=None)
    @given(alpha=simplex_rows(3))
    def test_range(self, alpha):
        delta = confusion(alpha)
        assert np.all(delta >= 1.0 / 3.0 - 1e-12)
        assert np.all(delta <= 1.0 + 1e-12)

    def test_one_hot_and_uniform(self):
        assert confusion(np.array([1.0, 0.0])) == pytest.approx(0.5)
        assert confusion(np.array([0.5, 0.5])) == pytest.approx(1.0)

    def test_non_simplex_rejected(self):
        with pytest.raises(NotSimplexError):
            confusion(np.array([0.7, 0.7]))
        with pytest.raises(NotSimplexError):
            confusion(np.array([1.5, -0.5]))


class TestContribution:
    @settings(max_examples=200, deadline=None)
    @given(alpha=simplex_rows(4))
    def test_conservation(self, alpha):
        """sum_i rho_i equals the trace's mean confusion (since sum_i a_i=1)."""
        trace = AttentionTrace(alphas=alpha, deltas=confusion(alpha))
        rho = contribution(trace)
        assert rho.sum() == pytest.approx(np.mean(trace.deltas), abs=1e-12)

    def test_empty_trace_rejected(self):
        trace = AttentionTrace(alphas=np.zeros((0, 2)), deltas=np.zeros(0))
        with pytest.raises(EmptyTraceError):
            contribution(trace)


class TestDveForward:
    def test_weighted_combination(self):
        mu = np.array([1.0, 3.0])
        logits = np.array([0.0, 0.0])
        out = dve_forward(None, mu, logits)
        assert val(out.v_hat) == pytest.approx(2.0)
        assert val(out.delta) == pytest.approx(1.0)

    def test_single_hypothesis_is_identity(self):
        out = dve_forward(None, np.array([4.2]), np.array([-3.0]))
        assert val(out.alpha) == pytest.approx(1.0)
        assert val(out.v_hat) == pytest.approx(4.2)

    def test_gradient_reaches_both_inputs(self):
        tape = Tape()
        mu = tape.add(np.array([1.0, -2.0]))
        logits = tape.add(np.array([0.3, -0.1]))
        out = dve_forward(tape, mu, logits)
        backward(tape, out.v_hat)
        assert np.abs(mu.grad).max() > 0
        assert np.abs(logits.grad).max() > 0


class TestCcLoss:
    CFG = CcConfig(k1=0.1, k2=1.0)

    def test_hand_value_uniform(self):
        alpha = np.full((6, 2), 0.5)
        loss, t1, t2 = cc_loss(None, [alpha], self.CFG)
        assert float(val(loss)) == pytest.approx(-0.6931472, abs=1e-6)

    def test_hand_value_single_cluster_one_hot(self):
        alpha = np.tile([1.0, 0.0], (6, 1))
        loss, _, _ = cc_loss(None, [alpha], self.CFG)
        assert float(val(loss)) == pytest.approx(-1.4556091, abs=1e-6)

    def test_hand_value_balanced_one_hot(self):
        alpha = np.array([[1.0, 0.0], [0.0, 1.0]] * 3)
        loss, _, _ = cc_loss(None, [alpha], self.CFG)
        assert float(val(loss)) == pytest.approx(-2.1487562, abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(alpha=simplex_rows(3, min_rows=2, max_rows=6),
           perm=st.permutations(range(3)))
    def test_permutation_invariance(self, alpha, perm):
        loss_a, _, _ = cc_loss(None, [alpha], self.CFG)
        loss_b, _, _ = cc_loss(None, [alpha[:, list(perm)]], self.CFG)
        assert float(val(loss_a)) == pytest.approx(float(val(loss_b)),
                                                   abs=1e-12)

    def test_empty_batch_and_trace(self):
        with pytest.raises(EmptyBatchError):
            cc_loss(None, [], self.CFG)
        with pytest.raises(EmptyTraceError):
            cc_loss(None, [np.zeros((0, 2))], self.CFG)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            CcConfig(k1=-0.1).validate()
        with pytest.raises(ValueError):
            CcConfig(epsilon_log=0.0).validate()

    def test_gradient_never_reaches_mu(self):
        """The loss depends only on attention, so mu gets zero gradient."""
        tape = Tape()
        mu = tape.add(np.array([[1.0, 2.0], [0.5, -1.0]]))
        logits = tape.add(np.array([[0.2, -0.3], [0.1, 0.4]]))
        out = dve_forward(tape, mu, logits)
        loss, _, _ = cc_loss(tape, [out.alpha], self.CFG)
        backward(tape, loss)
        assert mu.grad is None or not np.any(mu.grad)
        assert np.abs(logits.grad).max() > 0

    def test_gradient_vs_finite_differences(self):
        cfg = self.CFG
        base = np.array([[0.4, -0.2], [0.1, 0.3], [-0.5, 0.2]])

        def loss_of(logits):
            e = np.exp(logits - logits.max(axis=1, keepdims=True))
            alpha = e / e.sum(axis=1, keepdims=True)
            out, _, _ = cc_loss(None, [alpha], cfg)
            return float(val(out))

        tape = Tape()
        logits = tape.add(base.copy())
        alpha = dve_forward(tape, np.zeros_like(base), logits).alpha
        loss, _, _ = cc_loss(tape, [alpha], cfg)
        backward(tape, loss)
        eps = 1e-6
        for i in range(base.shape[0]):
            for j in range(base.shape[1]):
                probe = base.copy()
                probe[i, j] += eps
                hi = loss_of(probe)
                probe[i, j] -= 2 * eps
                lo = loss_of(probe)
                num = (hi - lo) / (2 * eps)
                assert logits.grad[i, j] == pytest.approx(num, abs=1e-6)

"""Dynamic value estimation critic head and sparsity machinery.

The dynamic critic predicts ``n_b`` value hypotheses mu_i(s) and attention
weights alpha_i over them; the value estimate is the attention-weighted
combination.  Confusion measures how spread the attention is (1/n_b at
one-hot, 1 at uniform), contribution is the trajectory-averaged
confusion-weighted attention mass per hypothesis, and the
confusion-contribution loss pushes attention toward sparse but balanced
hypothesis usage:

    loss = k1 * E_steps[log confusion] + k2 * E_traj[log sum_i contribution_i^2]

The loss depends only on the attention weights, so its gradient never
touches the mu heads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyBatchError, EmptyTraceError, NotSimplexError
from .netcore import ops
from .netcore.tape import Node, Tape, val


class CcMode(Enum):
    CLASS1 = "class1"   # sparsity loss applied from the first update
    CLASS2 = "class2"   # applied only after the episode-length plateau


@dataclass
class CcConfig:
    """Confusion-contribution loss settings."""

    k1: float = 0.1
    k2: float = 1.0
    epsilon_log: float = 1e-8
    mode: CcMode = CcMode.CLASS1
    pretrain_steps: int = 0  # env steps before CLASS2 gating may fire

    def validate(self):
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("k1, k2 must be non-negative")
        if not 0.0 < self.epsilon_log <= 1e-6:
            raise ValueError("epsilon_log must lie in (0, 1e-6]")
        if self.pretrain_steps < 0:
            raise ValueError("pretrain_steps must be non-negative")


@dataclass
class DveOutput:
    """Per-step critic output; fields are Nodes when built on a tape."""

    mu: object       # (..., n_b) hypothesis means
    alpha: object    # (..., n_b) attention weights, simplex rows
    v_hat: object    # (...,) attention-weighted value estimate
    delta: object    # (...,) confusion in [1/n_b, 1]


@dataclass
class AttentionTrace:
    """Per-timestep attention weights and confusion for one trajectory."""

    alphas: np.ndarray  # (T, n_b)
    deltas: np.ndarray  # (T,)

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        if self.alphas.ndim != 2 or self.deltas.shape != (self.alphas.shape[0],):
            raise ValueError("alphas must be (T, n_b) with matching deltas (T,)")

    def __len__(self) -> int:
        return self.alphas.shape[0]


def _delta_from_alpha(tape, alpha, n_b: int):
    return ops.reciprocal(
        tape, ops.scale(tape, ops.sum_axis(tape, ops.square(tape, alpha),
                                           axis=-1), float(n_b)))


def dve_forward(tape: Tape | None, mu, attention_logits) -> DveOutput:
    """Attention over value hypotheses: alpha = softmax(logits),
    v_hat = sum_i alpha_i * mu_i, plus the confusion of alpha.

    Accepts (n_b,) vectors or (T, n_b) matrices; differentiable w.r.t. both
    inputs when a tape is supplied.
    """
    mu_v, logits_v = val(mu), val(attention_logits)
    if mu_v.shape != logits_v.shape or mu_v.shape[-1] < 1:
        raise ValueError(f"mu{mu_v.shape} and logits{logits_v.shape} must match")
    n_b = mu_v.shape[-1]
    alpha = ops.softmax(tape, attention_logits, axis=-1)
    v_hat = ops.sum_axis(tape, ops.mul(tape, alpha, mu), axis=-1)
    delta = _delta_from_alpha(tape, alpha, n_b)
    return DveOutput(mu=mu, alpha=alpha, v_hat=v_hat, delta=delta)


def confusion(alpha: np.ndarray) -> float | np.ndarray:
    """Confusion of simplex rows: 1 / (n_b * sum_i alpha_i^2)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    sums = alpha.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or np.any(alpha < 0):
        raise NotSimplexError(f"alpha rows must sum to 1 (got {sums})")
    n_b = alpha.shape[-1]
    out = 1.0 / (n_b * np.square(alpha).sum(axis=-1))
    return float(out) if out.ndim == 0 else out


def contribution(trace: AttentionTrace) -> np.ndarray:
    """Per-hypothesis contribution: mean over t of delta_t * alpha_{i,t}."""
    if len(trace) == 0:
        raise EmptyTraceError("contribution of an empty trace")
    return (trace.deltas[:, None] * trace.alphas).mean(axis=0)


def cc_loss_trace_nodes(tape, alpha_nodes, cfg: CcConfig):
    """Differentiable loss pieces for one trajectory's (T, n_b) alpha node.

    Returns (sum_log_delta (scalar node), log_sum_rho_sq (scalar node), T).
    """
    n_b = val(alpha_nodes).shape[-1]
    delta = _delta_from_alpha(tape, alpha_nodes, n_b)          # (T,)
    log_delta_sum = ops.vsum(tape, ops.log_clipped(tape, delta, cfg.epsilon_log))
    rho = ops.mean_axis(
        tape, ops.mul(tape, _expand_last(tape, delta), alpha_nodes), axis=0)
    rho_sq_sum = ops.vsum(tape, ops.square(tape, rho))
    log_rho = ops.log_clipped(tape, rho_sq_sum, cfg.epsilon_log)
    return log_delta_sum, log_rho, val(alpha_nodes).shape[0]


def _expand_last(tape, x):
    """(T,) -> (T, 1) for broadcasting against (T, n_b)."""
    xv = val(x)
    y = xv[:, None]
    if tape is None:
        return y

    def bw(g):
        if isinstance(x, Node):
            x.add_grad(g[:, 0])

    return tape.add(y, bw)


def cc_loss(tape: Tape | None, traces, cfg: CcConfig):
    """Confusion-contribution loss over a batch of trajectories.

    ``traces`` is a list of (T_i, n_b) alpha matrices or Nodes.  The first
    term averages log-confusion over every step in the batch; the second
    averages log sum-of-squared-contributions over trajectories.  Returns a
    scalar (Node when taped) and the two unweighted term values.
    """
    cfg.validate()
    if not traces:
        raise EmptyBatchError("cc_loss over an empty batch")
    total_steps = 0
    log_delta_sums = []
    log_rhos = []
    for alpha in traces:
        if val(alpha).shape[0] == 0:
            raise EmptyTraceError("cc_loss trace with zero steps")
        ld, lr, t_len = cc_loss_trace_nodes(tape, alpha, cfg)
        log_delta_sums.append(ld)
        log_rhos.append(lr)
        total_steps += t_len
    term1 = ops.scale(tape, _add_all(tape, log_delta_sums), 1.0 / total_steps)
    term2 = ops.scale(tape, _add_all(tape, log_rhos), 1.0 / len(traces))
    loss = ops.add(tape, ops.scale(tape, term1, cfg.k1),
                   ops.scale(tape, term2, cfg.k2))
    return loss, float(val(term1)), float(val(term2))


def _add_all(tape, nodes):
    out = nodes[0]
    for node in nodes[1:]:
        out = ops.add(tape, out, node)
    return out


def baseline_value(tape, features, W, b):
    """Scene-generic critic: one linear map of the LSTM features."""
    out = ops.affine(tape, features, W, b)
    return ops.sum_axis(tape, out, axis=-1)

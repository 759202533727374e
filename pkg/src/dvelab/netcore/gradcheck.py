"""Central finite-difference verification of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import stream
from . import ops
from .network import forward_sequence
from .params import NetSpec, ParamVector
from .tape import Tape, backward


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_trials: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def relative_error(a: float, n: float, floor: float = 1e-3) -> float:
    """|a - n| scaled by max(|a| + |n|, floor); the floor keeps near-zero
    gradients from inflating finite-difference roundoff into failures."""
    return abs(a - n) / max(abs(a) + abs(n), floor)


def _loss_value(pv, spec, obs_seq, weights):
    heads = forward_sequence(pv, spec, obs_seq, tape=None)
    return float(sum((heads[k] * w).sum() for k, w in weights.items()))


def grad_check(spec: NetSpec, n_trials: int = 100, tolerance: float = 1e-4,
               seed: int = 0, fd_step: float = 1e-5,
               seq_len: int = 2) -> GradCheckReport:
    """Compare every parameter's analytic gradient against central
    differences of a random head-weighted scalar loss, over random
    parameter/input draws.  Returns the worst relative error seen.
    """
    spec.validate()
    max_err = 0.0
    for trial in range(n_trials):
        rng = stream(seed, f"gradcheck.trial{trial}")
        pv = ParamVector(spec.param_shapes())
        pv.values[:] = rng.normal(0.0, 0.4, pv.size)
        obs_seq = rng.uniform(-1.0, 1.0, (seq_len, spec.input_dim))
        weights = {name: rng.normal(0.0, 1.0, (seq_len, dim))
                   for name, dim in spec.heads.items()}

        tape = Tape()
        heads = forward_sequence(pv, spec, obs_seq, tape)
        loss = None
        for name, w in weights.items():
            term = ops.vsum(tape, ops.mul(tape, heads[name], w))
            loss = term if loss is None else ops.add(tape, loss, term)
        pv.zero_grads()
        backward(tape, loss)
        analytic = pv.grads.copy()

        for j in range(pv.size):
            orig = pv.values[j]
            pv.values[j] = orig + fd_step
            up = _loss_value(pv, spec, obs_seq, weights)
            pv.values[j] = orig - fd_step
            down = _loss_value(pv, spec, obs_seq, weights)
            pv.values[j] = orig
            numeric = (up - down) / (2.0 * fd_step)
            max_err = max(max_err, relative_error(analytic[j], numeric))
    return GradCheckReport(max_rel_err=max_err, n_trials=n_trials,
                           tolerance=tolerance)

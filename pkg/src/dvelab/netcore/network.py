"""Actor-critic network forward passes (single step and whole sequence)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimMismatchError, NonFiniteInputError
from . import ops
from .params import NetSpec, ParamVector
from .tape import Tape, val


@dataclass
class RecurrentState:
    """LSTM (hidden, cell) pair; zero at every episode start."""

    hidden: object  # ndarray or Node
    cell: object

    @classmethod
    def zeros(cls, hidden_size: int) -> "RecurrentState":
        return cls(np.zeros(hidden_size), np.zeros(hidden_size))

    def arrays(self) -> "RecurrentState":
        return RecurrentState(val(self.hidden).copy(), val(self.cell).copy())


def bind_params(tape: Tape | None, pv: ParamVector) -> dict:
    """Create one leaf per named parameter (raw views when untaped)."""
    return {name: ops.param_leaf(tape, pv, name) for name in pv.names()}


def _check_input(vec: np.ndarray, expect_dim: int, what: str):
    if vec.shape[-1] != expect_dim:
        raise DimMismatchError(f"{what}: got dim {vec.shape[-1]}, expected {expect_dim}")
    if not np.all(np.isfinite(vec)):
        raise NonFiniteInputError(f"{what} contains NaN/Inf")


def _trunk(tape, leaves, spec, x):
    for i in range(len(spec.trunk)):
        x = ops.tanh(tape, ops.affine(tape, x, leaves[f"trunk{i}.W"],
                                      leaves[f"trunk{i}.b"]))
    return x


def _heads(tape, leaves, spec, h):
    return {name: ops.affine(tape, h, leaves[f"head.{name}.W"],
                             leaves[f"head.{name}.b"])
            for name in spec.heads}


def forward(params: ParamVector, spec: NetSpec, obs: np.ndarray,
            rs: RecurrentState, tape: Tape | None,
            leaves: dict | None = None):
    """One step: obs -> trunk -> LSTM -> heads.

    Returns (head outputs, new RecurrentState).  Pure in its inputs; with a
    tape, every op is recorded for reverse accumulation.
    """
    obs = np.asarray(obs, dtype=np.float64)
    _check_input(obs, spec.input_dim, "observation")
    _check_input(val(rs.hidden), spec.hidden, "hidden state")
    _check_input(val(rs.cell), spec.hidden, "cell state")
    if leaves is None:
        leaves = bind_params(tape, params)
    x = _trunk(tape, leaves, spec, obs)
    h, c = ops.lstm_cell(tape, x, rs.hidden, rs.cell,
                         leaves["lstm.Wx"], leaves["lstm.Wh"], leaves["lstm.b"])
    return _heads(tape, leaves, spec, h), RecurrentState(h, c)


def forward_sequence(params: ParamVector, spec: NetSpec, obs_seq: np.ndarray,
                     tape: Tape | None, leaves: dict | None = None):
    """Whole-episode replay from a zero recurrent state.

    The trunk and heads are evaluated batched over time; only the LSTM cell
    loops.  Returns head outputs of shape (T, head_dim).
    """
    obs_seq = np.asarray(obs_seq, dtype=np.float64)
    if obs_seq.ndim != 2:
        raise DimMismatchError("obs_seq must be (T, input_dim)")
    _check_input(obs_seq, spec.input_dim, "observation sequence")
    if leaves is None:
        leaves = bind_params(tape, params)
    x = _trunk(tape, leaves, spec, obs_seq)
    h = np.zeros(spec.hidden)
    c = np.zeros(spec.hidden)
    hs = []
    for t in range(obs_seq.shape[0]):
        h, c = ops.lstm_cell(tape, ops.row(tape, x, t), h, c,
                             leaves["lstm.Wx"], leaves["lstm.Wh"],
                             leaves["lstm.b"])
        hs.append(h)
    h_stack = ops.stack(tape, hs, axis=0)
    return _heads(tape, leaves, spec, h_stack)

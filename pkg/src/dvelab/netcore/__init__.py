"""Minimal reverse-mode differentiable kernels for the actor-critic networks."""

from .tape import Tape, Node, backward, val
from . import ops
from .params import ParamVector, NetSpec, init_params
from .network import RecurrentState, bind_params, forward, forward_sequence
from .adam import AdamOptimizer
from .gradcheck import grad_check
from .checkpoint import save_checkpoint, load_checkpoint

__all__ = [
    "Tape", "Node", "backward", "val", "ops",
    "ParamVector", "NetSpec", "init_params",
    "RecurrentState", "bind_params", "forward", "forward_sequence",
    "AdamOptimizer", "grad_check",
    "save_checkpoint", "load_checkpoint",
]

"""Flat parameter storage and network specification."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class NetSpec:
    """Architecture: tanh MLP trunk -> LSTM -> named linear heads.

    Heads read the LSTM hidden state; e.g. ``{"policy": 4, "value": 1}`` or
    ``{"policy": 4, "mu": n_b, "att": n_b}`` for the dynamic critic.
    """

    input_dim: int
    trunk: tuple[int, ...] = (64, 64)
    hidden: int = 64
    heads: dict[str, int] = field(default_factory=dict)

    def validate(self):
        if self.input_dim < 1 or self.hidden < 1:
            raise ValueError("input_dim and hidden must be positive")
        if any(w < 1 for w in self.trunk):
            raise ValueError("trunk widths must be positive")
        if any(d < 1 for d in self.heads.values()):
            raise ValueError("head dims must be positive")

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        prev = self.input_dim
        for i, width in enumerate(self.trunk):
            shapes.append((f"trunk{i}.W", (width, prev)))
            shapes.append((f"trunk{i}.b", (width,)))
            prev = width
        H = self.hidden
        shapes.append(("lstm.Wx", (4 * H, prev)))
        shapes.append(("lstm.Wh", (4 * H, H)))
        shapes.append(("lstm.b", (4 * H,)))
        for name, dim in self.heads.items():
            shapes.append((f"head.{name}.W", (dim, H)))
            shapes.append((f"head.{name}.b", (dim,)))
        return shapes

    def to_json(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "trunk": list(self.trunk),
            "hidden": self.hidden,
            "heads": {k: int(v) for k, v in self.heads.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "NetSpec":
        return cls(input_dim=int(data["input_dim"]),
                   trunk=tuple(data["trunk"]),
                   hidden=int(data["hidden"]),
                   heads=dict(data["heads"]))

    def digest(self) -> bytes:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


class ParamVector:
    """Flat float64 parameter store with a paired gradient buffer.

    ``shapes`` partitions the flat vector; named views are numpy views into
    the flat buffers, so in-place edits propagate both ways.
    """

    def __init__(self, shapes: list[tuple[str, tuple[int, ...]]]):
        self.shapes = list(shapes)
        self._index: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for name, dims in self.shapes:
            size = int(np.prod(dims))
            self._index[name] = (offset, dims)
            offset += size
        self.values = np.zeros(offset)
        self.grads = np.zeros(offset)

    @property
    def size(self) -> int:
        return self.values.size

    def names(self):
        return [name for name, _ in self.shapes]

    def view(self, name: str) -> np.ndarray:
        offset, dims = self._index[name]
        return self.values[offset:offset + int(np.prod(dims))].reshape(dims)

    def grad_view(self, name: str) -> np.ndarray:
        offset, dims = self._index[name]
        return self.grads[offset:offset + int(np.prod(dims))].reshape(dims)

    def zero_grads(self):
        self.grads[:] = 0.0

    def copy(self) -> "ParamVector":
        out = ParamVector(self.shapes)
        out.values[:] = self.values
        out.grads[:] = self.grads
        return out


def init_params(spec: NetSpec, rng: np.random.Generator,
                zero_heads: tuple[str, ...] = ("policy", "att")) -> ParamVector:
    """Glorot-uniform trunk/LSTM weights, +1 forget-gate bias.

    Heads named in ``zero_heads`` start at zero: a zero policy head gives a
    uniform initial policy and a zero attention head gives uniform initial
    attention over the value hypotheses.  Value-hypothesis heads are
    initialized randomly; identical hypotheses would receive identical
    gradients and never differentiate.
    """
    spec.validate()
    pv = ParamVector(spec.param_shapes())
    H = spec.hidden
    for name, dims in spec.param_shapes():
        view = pv.view(name)
        if name.endswith(".b"):
            continue  # zeros
        if name.startswith("head."):
            if name.split(".")[1] in zero_heads:
                continue
            fan_out, fan_in = dims
        elif name == "lstm.Wx" or name == "lstm.Wh":
            fan_out, fan_in = H, dims[1]
        else:
            fan_out, fan_in = dims
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        view[...] = rng.uniform(-bound, bound, size=dims)
    pv.view("lstm.b")[H:2 * H] = 1.0
    return pv

"""Checkpoint format.

Binary layout (all integers little-endian):
    magic   4 bytes  b"DVEC"
    version u32      1
    digest  32 bytes sha256 of the canonical NetSpec JSON
    count   u64      number of float64 parameters
    values  count * 8 bytes, little-endian float64 in shapes order
A JSON sidecar at ``<path>.json`` holds the NetSpec itself.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .params import NetSpec, ParamVector

MAGIC = b"DVEC"
VERSION = 1


def save_checkpoint(path, params: ParamVector, spec: NetSpec) -> None:
    path = Path(path)
    with open(str(path) + ".json", "w") as fh:
        json.dump(spec.to_json(), fh, indent=1, sort_keys=True)
    payload = params.values.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(spec.digest())
        fh.write(struct.pack("<Q", params.size))
        fh.write(payload)


def load_checkpoint(path) -> tuple[ParamVector, NetSpec]:
    path = Path(path)
    try:
        with open(str(path) + ".json") as fh:
            spec = NetSpec.from_json(json.load(fh))
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"bad or missing spec sidecar: {exc}") from exc
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    digest = blob[8:40]
    if digest != spec.digest():
        raise CheckpointError("spec hash mismatch between binary and sidecar")
    (count,) = struct.unpack_from("<Q", blob, 40)
    values = np.frombuffer(blob, dtype="<f8", offset=48, count=count)
    pv = ParamVector(spec.param_shapes())
    if pv.size != count:
        raise CheckpointError(f"parameter count {count} != spec size {pv.size}")
    pv.values[:] = values
    return pv, spec

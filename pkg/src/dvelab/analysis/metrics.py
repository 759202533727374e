"""Scalar summary metrics over training-log rows."""

from __future__ import annotations

import numpy as np

from ..errors import ZeroLengthError


def navigation_efficiency(rows) -> float:
    """Mean reward per environment step: mean_reward / mean_ep_len.

    ``rows`` is a list of train-log row dicts (or a single dict); the
    columns are averaged before taking the ratio.
    """
    if isinstance(rows, dict):
        rows = [rows]
    if not rows:
        raise ZeroLengthError("no rows to summarize")
    reward = float(np.mean([float(r["mean_reward"]) for r in rows]))
    length = float(np.mean([float(r["mean_ep_len"]) for r in rows]))
    if length <= 0.0:
        raise ZeroLengthError(f"mean episode length must be positive, got {length}")
    return reward / length

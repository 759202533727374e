"""Per-state cluster-assignment export for dynamic-critic snapshots.

Rolls episodes under a frozen snapshot and records, for every visited
state, which value hypothesis the attention picks (argmax alpha), how hard
it commits (alpha_max), and the confusion delta.  High-confusion states
(delta above a threshold) are flagged ambiguous: the critic is not
attributing them to any single cluster.
"""

from __future__ import annotations

import csv

import numpy as np

from .. import envkit
from ..envkit import Action, EnvConfig, SceneDescriptor
from ..netcore import NetSpec, ParamVector, RecurrentState, bind_params, forward
from ..rng import stream

N_ACTIONS = len(Action)

CLUSTER_COLUMNS = ["scene_id", "episode", "step", "agent_x", "agent_y",
                   "argmax_cluster", "alpha_max", "delta", "ambiguous"]


def export_cluster_assignments(params: ParamVector, spec: NetSpec,
                               pool: list[SceneDescriptor], config: EnvConfig,
                               n_episodes: int = 32, seed: int = 0,
                               delta_ambiguous: float = 0.9) -> list[dict]:
    """Sample episodes and tag each visited state with its active cluster.

    Requires a dynamic-critic snapshot (mu/att heads).  Scenes are drawn
    uniformly from the pool; rows are ordered by episode then step.
    """
    if "att" not in spec.heads:
        raise ValueError("cluster export needs a dynamic-critic snapshot")
    n_b = spec.heads["att"]
    leaves = bind_params(None, params)
    pick = stream(seed, "export.scenes")
    rows = []
    for ep in range(n_episodes):
        scene = pool[int(pick.integers(len(pool)))]
        rng = stream(seed, f"export.ep{ep}")
        state, obs = envkit.reset(scene, config)
        rs = RecurrentState.zeros(spec.hidden)
        step_idx = 0
        while True:
            heads, rs = forward(params, spec, obs.vector, rs, None,
                                leaves=leaves)
            att = heads["att"]
            alpha = np.exp(att - att.max())
            alpha /= alpha.sum()
            delta = 1.0 / (n_b * float(np.square(alpha).sum()))
            r, c = state.pos
            rows.append({
                "scene_id": scene.scene_id,
                "episode": ep,
                "step": step_idx,
                "agent_x": c,
                "agent_y": r,
                "argmax_cluster": int(np.argmax(alpha)),
                "alpha_max": float(alpha.max()),
                "delta": delta,
                "ambiguous": int(delta > delta_ambiguous),
            })
            logits = heads["policy"]
            p = np.exp(logits - logits.max())
            p /= p.sum()
            a = int(np.searchsorted(np.cumsum(p), rng.random()))
            result = envkit.step(state, Action(min(a, N_ACTIONS - 1)))
            obs = result.observation
            step_idx += 1
            if result.done:
                break
    return rows


def write_cluster_csv(rows: list[dict], path) -> None:
    """RFC-4180 CSV dump of export_cluster_assignments rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CLUSTER_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)

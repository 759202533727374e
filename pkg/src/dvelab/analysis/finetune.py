"""Per-scene critic fine-tuning with a frozen shared body.

A cheap stand-in for per-scene expert critics: freeze the trunk, LSTM, and
policy head of a trained snapshot, then regress only the critic head(s)
onto empirical discounted Monte-Carlo returns collected on a single scene
under the frozen policy.  The exact policy-evaluation oracle is the primary
reference; this routine exists to cross-check that a gradient-trained head
approaches it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import envkit
from ..envkit import Action, EnvConfig, SceneDescriptor
from ..dvehead import dve_forward
from ..netcore import (AdamOptimizer, NetSpec, ParamVector, RecurrentState,
                       bind_params, forward, ops)
from ..netcore.tape import Tape, backward, val
from ..rng import stream

N_ACTIONS = len(Action)


@dataclass
class FinetuneResult:
    """Outcome of per-scene critic fine-tuning."""

    params: ParamVector        # full copy with only critic heads changed
    head_names: tuple[str, ...]
    rmse_before: float
    rmse_after: float
    n_samples: int


def _critic_heads(spec: NetSpec) -> tuple[str, ...]:
    return ("value",) if "value" in spec.heads else ("mu", "att")


def _collect(params, spec, scene, config, n_episodes, gamma, seed):
    """Roll frozen-policy episodes; return LSTM features and MC returns."""
    leaves = bind_params(None, params)
    features, returns = [], []
    for ep in range(n_episodes):
        rng = stream(seed, f"finetune.ep{ep}")
        state, obs = envkit.reset(scene, config)
        rs = RecurrentState.zeros(spec.hidden)
        feats, rewards = [], []
        while True:
            heads, rs = forward(params, spec, obs.vector, rs, None,
                                leaves=leaves)
            feats.append(val(rs.hidden).copy())
            logits = heads["policy"]
            p = np.exp(logits - logits.max())
            p /= p.sum()
            a = int(np.searchsorted(np.cumsum(p), rng.random()))
            result = envkit.step(state, Action(min(a, N_ACTIONS - 1)))
            rewards.append(result.reward)
            obs = result.observation
            if result.done:
                break
        returns.extend(_discounted(rewards, gamma))
        features.extend(feats)
    return np.asarray(features), np.asarray(returns, dtype=np.float64)


def _discounted(rewards, gamma):
    out = np.zeros(len(rewards))
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + gamma * g
        out[t] = g
    return out


def _head_predictions(tape, head_pv, head_names, feats):
    if head_names == ("value",):
        out = ops.affine(tape, feats, ops.param_leaf(tape, head_pv, "head.value.W"),
                         ops.param_leaf(tape, head_pv, "head.value.b"))
        return ops.sum_axis(tape, out, axis=-1)
    mu = ops.affine(tape, feats, ops.param_leaf(tape, head_pv, "head.mu.W"),
                    ops.param_leaf(tape, head_pv, "head.mu.b"))
    att = ops.affine(tape, feats, ops.param_leaf(tape, head_pv, "head.att.W"),
                     ops.param_leaf(tape, head_pv, "head.att.b"))
    return dve_forward(tape, mu, att).v_hat


def finetune_scene_critic(params: ParamVector, spec: NetSpec,
                          scene: SceneDescriptor, config: EnvConfig,
                          n_steps: int = 200, n_episodes: int = 32,
                          learning_rate: float = 0.05, seed: int = 0,
                          gamma: float | None = None) -> FinetuneResult:
    """Fine-tune only the critic head(s) on one scene.

    Because the body is frozen, the LSTM features of the collected episodes
    are precomputed once and the regression touches only the head
    parameters.  ``n_steps=0`` returns the snapshot unchanged.
    """
    if gamma is None:
        gamma = config.gamma
    head_names = _critic_heads(spec)
    feats, targets = _collect(params, spec, scene, config, n_episodes,
                              gamma, seed)

    head_shapes = [(name, dims) for name, dims in spec.param_shapes()
                   if any(name.startswith(f"head.{h}.") for h in head_names)]
    head_pv = ParamVector(head_shapes)
    for name, _ in head_shapes:
        head_pv.view(name)[...] = params.view(name)

    def rmse() -> float:
        pred = val(_head_predictions(None, head_pv, head_names, feats))
        return float(np.sqrt(np.mean((pred - targets) ** 2)))

    rmse_before = rmse()
    opt = AdamOptimizer(head_pv.size, learning_rate=learning_rate)
    n = len(targets)
    for _ in range(n_steps):
        tape = Tape()
        pred = _head_predictions(tape, head_pv, head_names, feats)
        err = ops.sub(tape, pred, targets)
        loss = ops.scale(tape, ops.vsum(tape, ops.square(tape, err)), 1.0 / n)
        backward(tape, loss)
        opt.step(head_pv)

    out = params.copy()
    for name, _ in head_shapes:
        out.view(name)[...] = head_pv.view(name)
    return FinetuneResult(params=out, head_names=head_names,
                          rmse_before=rmse_before, rmse_after=rmse(),
                          n_samples=n)

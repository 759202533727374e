"""PPO training loop over the multi-scene pool.

Three critic configurations share one actor-critic network:
  BASELINE    - single scene-generic value head
  DVE         - attention over n_b value hypotheses
  SPARSE_DVE  - DVE plus the confusion-contribution loss

Workers are logical seeded streams executed in fixed order, which realizes
the synchronous fixed-order reduction contract and keeps seeded runs
byte-reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import envkit
from .dvehead import CcConfig, CcMode, cc_loss
from .envkit import Action, EnvConfig, SceneDescriptor, TerminationCause
from .errors import (InsufficientHistoryError, LengthMismatchError,
                     NonFiniteLossError)
from .netcore import (AdamOptimizer, NetSpec, ParamVector, RecurrentState,
                      Tape, backward, bind_params, forward, forward_sequence,
                      init_params, ops)
from .rng import stream

N_ACTIONS = len(Action)


class CriticMode(Enum):
    BASELINE = "baseline"
    DVE = "dve"
    SPARSE_DVE = "sparse-dve"


@dataclass
class TrainConfig:
    critic_mode: CriticMode = CriticMode.BASELINE
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 2.5e-4
    epochs_per_update: int = 3
    minibatch_size: int = 4           # trajectories per minibatch
    n_workers: int = 4
    steps_per_worker_per_update: int = 256
    total_env_steps: int = 100_000
    seed: int = 0
    n_b: int = 3
    cc: CcConfig = field(default_factory=CcConfig)
    plateau_window: int = 20
    plateau_slope_threshold: float = 0.1
    normalize_advantages: bool = True
    trunk: tuple[int, ...] = (64, 64)
    hidden: int = 64
    env: EnvConfig = field(default_factory=EnvConfig)

    def validate(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.n_workers < 1:
            raise ValueError("n_workers must be >= 1")
        if self.n_b < 1:
            raise ValueError("n_b must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        self.cc.validate()
        self.env.validate()

    def net_spec(self) -> NetSpec:
        heads = {"policy": N_ACTIONS}
        if self.critic_mode is CriticMode.BASELINE:
            heads["value"] = 1
        else:
            heads["mu"] = self.n_b
            heads["att"] = self.n_b
        return NetSpec(input_dim=self.env.obs_dim, trunk=self.trunk,
                       hidden=self.hidden, heads=heads)


@dataclass
class Trajectory:
    """One complete episode with everything needed to replay the update."""

    scene_id: int
    obs: np.ndarray            # (T, obs_dim)
    actions: np.ndarray        # (T,) int
    rewards: np.ndarray        # (T,)
    log_probs_old: np.ndarray  # (T,)
    values: np.ndarray         # (T,) critic value at collection time
    alphas: np.ndarray | None  # (T, n_b) for the dynamic critics
    deltas: np.ndarray | None  # (T,)
    termination_cause: TerminationCause
    bootstrap_value: float     # 0 at true terminals, V(s_T) on timeout

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class RolloutBatch:
    trajectories: list[Trajectory]
    snapshot_id: str
    env_steps: int


@dataclass
class AdvantageEstimate:
    psi: np.ndarray      # per-step advantage
    returns: np.ndarray  # value-loss target R_t = psi + V


def snapshot_id(params: ParamVector) -> str:
    return hashlib.sha256(params.values.tobytes()).hexdigest()[:16]


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def critic_from_heads(heads: dict, mode: CriticMode, n_b: int):
    """(value, alpha, delta) from raw head outputs of one step."""
    if mode is CriticMode.BASELINE:
        return float(heads["value"][0]), None, None
    alpha = _softmax(heads["att"])
    value = float((alpha * heads["mu"]).sum())
    delta = 1.0 / (n_b * float(np.square(alpha).sum()))
    return value, alpha, delta


def run_episode(params: ParamVector, spec: NetSpec, scene: SceneDescriptor,
                cfg: TrainConfig, rng: np.random.Generator) -> Trajectory:
    """Sample one episode under the current policy (no tape)."""
    state, obs = envkit.reset(scene, cfg.env)
    rs = RecurrentState.zeros(spec.hidden)
    leaves = bind_params(None, params)
    obs_list, actions, rewards, logps, values = [], [], [], [], []
    alphas, deltas = [], []
    dyn = cfg.critic_mode is not CriticMode.BASELINE
    while True:
        vec = obs.vector
        heads, rs = forward(params, spec, vec, rs, None, leaves=leaves)
        logits = heads["policy"]
        shifted = logits - logits.max()
        log_z = np.log(np.exp(shifted).sum())
        probs = np.exp(shifted - log_z)
        action = int(np.searchsorted(np.cumsum(probs), rng.random()))
        action = min(action, N_ACTIONS - 1)
        value, alpha, delta = critic_from_heads(heads, cfg.critic_mode, cfg.n_b)
        obs_list.append(vec)
        actions.append(action)
        logps.append(shifted[action] - log_z)
        values.append(value)
        if dyn:
            alphas.append(alpha)
            deltas.append(delta)
        result = envkit.step(state, Action(action))
        rewards.append(result.reward)
        obs = result.observation
        if result.done:
            if result.termination_cause is TerminationCause.TIMEOUT:
                heads, _ = forward(params, spec, obs.vector, rs, None,
                                   leaves=leaves)
                bootstrap, _, _ = critic_from_heads(heads, cfg.critic_mode,
                                                    cfg.n_b)
            else:
                bootstrap = 0.0
            return Trajectory(
                scene_id=scene.scene_id,
                obs=np.asarray(obs_list),
                actions=np.asarray(actions, dtype=int),
                rewards=np.asarray(rewards),
                log_probs_old=np.asarray(logps),
                values=np.asarray(values),
                alphas=np.asarray(alphas) if dyn else None,
                deltas=np.asarray(deltas) if dyn else None,
                termination_cause=result.termination_cause,
                bootstrap_value=float(bootstrap))


def collect_rollouts(params: ParamVector, spec: NetSpec,
                     pool: list[SceneDescriptor], cfg: TrainConfig,
                     worker_rngs: list[np.random.Generator]) -> RolloutBatch:
    """Whole episodes from each worker until its step quota is met.

    Workers run in fixed order on the immutable snapshot; each samples
    scenes uniformly from its own stream, so the batch is deterministic
    given (snapshot, streams).
    """
    trajectories = []
    total = 0
    for rng in worker_rngs:
        steps = 0
        while steps < cfg.steps_per_worker_per_update:
            scene = pool[int(rng.integers(len(pool)))]
            traj = run_episode(params, spec, scene, cfg, rng)
            trajectories.append(traj)
            steps += len(traj)
        total += steps
    return RolloutBatch(trajectories=trajectories,
                        snapshot_id=snapshot_id(params), env_steps=total)


def compute_gae(rewards: np.ndarray, values: np.ndarray,
                bootstrap_value: float, gamma: float,
                gae_lambda: float) -> AdvantageEstimate:
    """GAE: psi_t = sum_k (gamma*lambda)^k td_{t+k} with
    td_t = r_t + gamma*V_{t+1} - V_t; returns R_t = psi_t + V_t."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise LengthMismatchError(
            f"rewards {rewards.shape} vs values {values.shape}")
    T = len(rewards)
    next_values = np.append(values[1:], bootstrap_value)
    td = rewards + gamma * next_values - values
    psi = np.empty(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        acc = td[t] + gamma * gae_lambda * acc
        psi[t] = acc
    return AdvantageEstimate(psi=psi, returns=psi + values)


def plateau_detector(ep_len_history, window: int,
                     slope_threshold: float) -> bool:
    """True iff the OLS slope of the last ``window`` mean episode lengths
    is at most ``slope_threshold``."""
    history = np.asarray(ep_len_history, dtype=np.float64)
    if len(history) < window:
        raise InsufficientHistoryError(
            f"need {window} points, have {len(history)}")
    y = history[-window:]
    x = np.arange(window, dtype=np.float64)
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean())) / float(xc @ xc)
    return bool(slope <= slope_threshold)


def _trajectory_loss_nodes(tape, leaves, params, spec, traj, psi, returns,
                           cfg: TrainConfig):
    """Per-trajectory loss sums (not yet normalized by step count)."""
    heads = forward_sequence(params, spec, traj.obs, tape, leaves=leaves)
    log_probs = ops.log_softmax(tape, heads["policy"], axis=-1)
    logp = ops.take_per_row(tape, log_probs, traj.actions)
    ratio = ops.exp(tape, ops.sub(tape, logp, traj.log_probs_old))
    clipped = ops.clip(tape, ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr = ops.minimum(tape, ops.mul(tape, ratio, psi),
                       ops.mul(tape, clipped, psi))
    policy_sum = ops.vsum(tape, surr)  # maximized; negated by caller
    if cfg.critic_mode is CriticMode.BASELINE:
        v = ops.sum_axis(tape, heads["value"], axis=-1)
        alpha = None
    else:
        alpha = ops.softmax(tape, heads["att"], axis=-1)
        v = ops.sum_axis(tape, ops.mul(tape, alpha, heads["mu"]), axis=-1)
    value_sum = ops.vsum(tape, ops.square(tape, ops.sub(tape, v, returns)))
    p = ops.exp(tape, log_probs)
    entropy_sum = ops.scale(tape, ops.vsum(tape, ops.mul(tape, p, log_probs)),
                            -1.0)
    return policy_sum, value_sum, entropy_sum, alpha


def ppo_update(params: ParamVector, opt: AdamOptimizer, batch: RolloutBatch,
               cfg: TrainConfig, spec: NetSpec, rng: np.random.Generator,
               cc_weight: float = 0.0) -> dict:
    """Clipped-surrogate PPO update over trajectory-aligned minibatches.

    Returns a report with the batch-averaged loss terms.  Minibatches are
    whole trajectories so the recurrent state replays exactly; the sparsity
    loss is added with weight ``cc_weight`` (SPARSE_DVE only).
    """
    trajs = batch.trajectories
    advs = [compute_gae(t.rewards, t.values, t.bootstrap_value, cfg.gamma,
                        cfg.gae_lambda) for t in trajs]
    psis = [a.psi for a in advs]
    if cfg.normalize_advantages:
        flat = np.concatenate(psis)
        mean, std = flat.mean(), flat.std()
        psis = [(p - mean) / (std + 1e-8) for p in psis]
    returns = [a.returns for a in advs]

    use_cc = (cfg.critic_mode is CriticMode.SPARSE_DVE and cc_weight > 0.0
              and (cfg.cc.k1 > 0.0 or cfg.cc.k2 > 0.0))
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
            "cc_term1": 0.0, "cc_term2": 0.0}
    n_minibatches = 0
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(len(trajs))
        for lo in range(0, len(order), cfg.minibatch_size):
            idx = order[lo:lo + cfg.minibatch_size]
            tape = Tape()
            leaves = bind_params(tape, params)
            total_steps = int(sum(len(trajs[i]) for i in idx))
            policy_sum = value_sum = entropy_sum = None
            alphas = []
            for i in idx:
                ps, vs, es, alpha = _trajectory_loss_nodes(
                    tape, leaves, params, spec, trajs[i], psis[i], returns[i],
                    cfg)
                policy_sum = ps if policy_sum is None else ops.add(tape, policy_sum, ps)
                value_sum = vs if value_sum is None else ops.add(tape, value_sum, vs)
                entropy_sum = es if entropy_sum is None else ops.add(tape, entropy_sum, es)
                if alpha is not None:
                    alphas.append(alpha)
            policy_loss = ops.scale(tape, policy_sum, -1.0 / total_steps)
            value_loss = ops.scale(tape, value_sum, 1.0 / total_steps)
            entropy = ops.scale(tape, entropy_sum, 1.0 / total_steps)
            loss = ops.add(tape, policy_loss,
                           ops.scale(tape, value_loss, cfg.value_coef))
            loss = ops.sub(tape, loss, ops.scale(tape, entropy,
                                                 cfg.entropy_coef))
            term1 = term2 = 0.0
            if use_cc:
                cc_node, t1, t2 = cc_loss(tape, alphas, cfg.cc)
                loss = ops.add(tape, loss, ops.scale(tape, cc_node, cc_weight))
                term1 = cc_weight * cfg.cc.k1 * t1
                term2 = cc_weight * cfg.cc.k2 * t2
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                raise NonFiniteLossError(
                    "non-finite PPO loss; update aborted",
                    diagnostics={"snapshot_id": batch.snapshot_id,
                                 "minibatch": [int(i) for i in idx],
                                 "policy_loss": float(policy_loss.value),
                                 "value_loss": float(value_loss.value)})
            params.zero_grads()
            backward(tape, loss)
            opt.step(params, cfg.learning_rate)
            sums["policy_loss"] += float(policy_loss.value)
            sums["value_loss"] += float(value_loss.value)
            sums["entropy"] += float(entropy.value)
            sums["cc_term1"] += term1
            sums["cc_term2"] += term2
            n_minibatches += 1
    return {k: v / max(n_minibatches, 1) for k, v in sums.items()}


@dataclass
class TrainReport:
    rows: list[dict]
    params: ParamVector
    spec: NetSpec
    config: TrainConfig


def csv_columns(n_b: int) -> list[str]:
    return (["update", "env_steps", "mean_reward", "mean_ep_len",
             "nav_efficiency", "policy_loss", "value_loss", "entropy",
             "cc_term1", "cc_term2", "mean_delta"]
            + [f"rho_{i + 1}" for i in range(n_b)])


def _batch_telemetry(batch: RolloutBatch, cfg: TrainConfig) -> dict:
    trajs = batch.trajectories
    ep_rewards = [float(t.rewards.sum()) for t in trajs]
    ep_lens = [len(t) for t in trajs]
    mean_reward = float(np.mean(ep_rewards))
    mean_ep_len = float(np.mean(ep_lens))
    out = {"mean_reward": mean_reward, "mean_ep_len": mean_ep_len,
           "nav_efficiency": mean_reward / mean_ep_len if mean_ep_len else 0.0}
    if cfg.critic_mode is CriticMode.BASELINE:
        out["mean_delta"] = 0.0
        out.update({f"rho_{i + 1}": 0.0 for i in range(cfg.n_b)})
    else:
        all_deltas = np.concatenate([t.deltas for t in trajs])
        out["mean_delta"] = float(all_deltas.mean())
        rho = np.mean([(t.deltas[:, None] * t.alphas).mean(axis=0)
                       for t in trajs], axis=0)
        out.update({f"rho_{i + 1}": float(rho[i]) for i in range(cfg.n_b)})
    return out


def train(cfg: TrainConfig, pool: list[SceneDescriptor],
          on_update=None) -> TrainReport:
    """Run PPO until ``total_env_steps``; returns per-update rows and the
    final parameters.

    SPARSE_DVE gating: CLASS1 applies the confusion-contribution loss from
    the first update; CLASS2 waits for the episode-length plateau (and at
    least ``pretrain_steps`` env steps), then ramps its weight linearly to 1
    over 10 updates to avoid a loss discontinuity.
    """
    cfg.validate()
    spec = cfg.net_spec()
    env = replace(cfg.env, gamma=cfg.gamma)
    cfg = replace(cfg, env=env)
    params = init_params(spec, stream(cfg.seed, "init"))
    opt = AdamOptimizer(params.size, learning_rate=cfg.learning_rate)
    worker_rngs = [stream(cfg.seed, f"rollout.worker{w}")
                   for w in range(cfg.n_workers)]
    shuffle_rng = stream(cfg.seed, "ppo.shuffle")

    rows: list[dict] = []
    ep_len_history: list[float] = []
    env_steps = 0
    update = 0
    gate_fired_at: int | None = None
    if cfg.critic_mode is CriticMode.SPARSE_DVE and cfg.cc.mode is CcMode.CLASS1:
        gate_fired_at = 0
    while env_steps < cfg.total_env_steps:
        batch = collect_rollouts(params, spec, pool, cfg, worker_rngs)
        env_steps += batch.env_steps
        telemetry = _batch_telemetry(batch, cfg)
        ep_len_history.append(telemetry["mean_ep_len"])

        cc_weight = 0.0
        if cfg.critic_mode is CriticMode.SPARSE_DVE:
            if (gate_fired_at is None
                    and len(ep_len_history) >= cfg.plateau_window
                    and env_steps >= cfg.cc.pretrain_steps
                    and plateau_detector(ep_len_history, cfg.plateau_window,
                                         cfg.plateau_slope_threshold)):
                gate_fired_at = update
            if gate_fired_at is not None:
                if cfg.cc.mode is CcMode.CLASS1:
                    cc_weight = 1.0
                else:
                    cc_weight = min(1.0, (update - gate_fired_at + 1) / 10.0)

        report = ppo_update(params, opt, batch, cfg, spec, shuffle_rng,
                            cc_weight=cc_weight)
        row = {"update": update, "env_steps": env_steps, **telemetry, **report,
               "cc_active": cc_weight > 0.0}
        rows.append(row)
        if on_update is not None:
            on_update(row)
        update += 1
    return TrainReport(rows=rows, params=params, spec=spec, config=cfg)

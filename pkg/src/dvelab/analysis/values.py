"""Exact per-scene state values under a frozen recurrent policy.

A recurrent policy conditions on history, so a grid state alone does not
pin down an action distribution.  We adopt a most-probable-path convention:
each reachable state is assigned the recurrent (hidden, cell) pair -- and
hence the action distribution -- produced by the highest-probability action
sequence reaching it from the episode start.  That turns the scene into a
finite Markov chain over (position, claimed-subgoals) states, which is then
solved by iterative policy evaluation.

The evaluation is infinite-horizon discounted: the episode step cap is
ignored (the remaining-budget observation channel is frozen at the value
seen along the most-probable path).
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .. import envkit
from ..envkit import EMPTY, ACTION_DELTAS, Action, EnvConfig, SceneDescriptor
from ..errors import NoConvergenceError
from ..netcore import NetSpec, ParamVector, RecurrentState, bind_params, forward

# A state of the frozen Markov chain: agent position plus claimed subgoals.
StateKey = tuple[tuple[int, int], frozenset]

N_ACTIONS = len(Action)


@dataclass
class ScenePolicyValues:
    """Exact discounted values of one scene under a frozen policy.

    ``values`` and ``action_probs`` are keyed by (position, claimed) for
    every non-terminal state reachable with positive probability.
    """

    scene_id: int
    gamma: float
    values: dict[StateKey, float]
    action_probs: dict[StateKey, np.ndarray]
    residual: float
    sweeps: int


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def _code_grid(scene: SceneDescriptor, claimed: frozenset) -> np.ndarray:
    grid = scene.base_code_grid()
    for pos in claimed:
        grid[pos] = EMPTY
    return grid


def _transition(scene: SceneDescriptor, config: EnvConfig, key: StateKey,
                action: Action):
    """Deterministic next (key, reward, terminal) ignoring the step cap."""
    (r, c), claimed = key
    dr, dc = ACTION_DELTAS[action]
    nr, nc = r + dr, c + dc
    if not (0 <= nr < scene.height and 0 <= nc < scene.width) or scene.walls[nr, nc]:
        nr, nc = r, c
    pos = (nr, nc)
    if scene.hazards[pos]:
        return (pos, claimed), 0.0, True
    if pos == scene.goal:
        return (pos, claimed), config.r_goal, True
    if pos in scene.subgoals and pos not in claimed:
        return (pos, claimed | {pos}), config.r_sub, False
    return (pos, claimed), 0.0, False


def _observe_key(scene: SceneDescriptor, config: EnvConfig, key: StateKey,
                 t: int, grid_cache: dict) -> np.ndarray:
    pos, claimed = key
    if claimed not in grid_cache:
        grid_cache[claimed] = _code_grid(scene, claimed)
    state = envkit.EnvState(scene=scene, config=config, pos=pos, t=t,
                            code_grid=grid_cache[claimed])
    return envkit.observe(state).vector


def _critic_value(heads: dict) -> float:
    if "value" in heads:
        return float(heads["value"][0])
    alpha = _softmax(heads["att"])
    return float((alpha * heads["mu"]).sum())


def _expand_policy(scene: SceneDescriptor, config: EnvConfig,
                   params: ParamVector, spec: NetSpec):
    """Dijkstra over states by most-probable path; freeze pi at each state."""
    leaves = bind_params(None, params)
    grid_cache: dict = {}
    start: StateKey = (scene.start, frozenset())
    counter = itertools.count()
    rs0 = RecurrentState.zeros(spec.hidden)
    heap = [(0.0, next(counter), start, rs0, 0)]
    probs: dict[StateKey, np.ndarray] = {}
    critic: dict[StateKey, float] = {}
    transitions: dict[StateKey, list] = {}
    while heap:
        _, _, key, rs, t = heapq.heappop(heap)
        if key in probs:
            continue
        obs = _observe_key(scene, config, key, t, grid_cache)
        heads, rs_next = forward(params, spec, obs, rs, None, leaves=leaves)
        pi = _softmax(heads["policy"])
        probs[key] = pi
        critic[key] = _critic_value(heads)
        trans = []
        for a_idx, action in enumerate(Action):
            key2, reward, terminal = _transition(scene, config, key, action)
            trans.append((key2, reward, terminal))
            if not terminal and key2 not in probs and pi[a_idx] > 0.0:
                cost = -math.log(pi[a_idx])
                heapq.heappush(heap, (cost, next(counter), key2, rs_next, t + 1))
        transitions[key] = trans
    return probs, transitions, critic


def exact_state_values(scene: SceneDescriptor, params: ParamVector,
                       spec: NetSpec, config: EnvConfig,
                       gamma: float | None = None, tol: float = 1e-12,
                       max_sweeps: int = 100_000) -> ScenePolicyValues:
    """Solve V^pi exactly for one scene under a frozen recurrent policy.

    Iterative policy evaluation to a sup-norm Bellman residual below ``tol``;
    raises NoConvergenceError past ``max_sweeps`` sweeps.  With gamma=0 the
    result is the expected immediate reward at each state.
    """
    if gamma is None:
        gamma = config.gamma
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    probs, transitions, _ = _expand_policy(scene, config, params, spec)
    keys = list(probs.keys())
    index = {k: i for i, k in enumerate(keys)}
    n = len(keys)

    pi = np.array([probs[k] for k in keys])                   # (n, A)
    nxt = np.zeros((n, N_ACTIONS), dtype=np.int64)
    rew = np.zeros((n, N_ACTIONS))
    cont = np.zeros((n, N_ACTIONS))                           # 1 if non-terminal
    for i, k in enumerate(keys):
        for a, (key2, reward, terminal) in enumerate(transitions[k]):
            rew[i, a] = reward
            if not terminal:
                # Successors unreachable under the frozen policy support
                # (pi[a] == 0) never contribute; map them to self harmlessly.
                nxt[i, a] = index.get(key2, i)
                cont[i, a] = 1.0

    v = np.zeros(n)
    base = (pi * rew).sum(axis=1)
    for sweep in range(1, max_sweeps + 1):
        v_new = base + gamma * (pi * cont * v[nxt]).sum(axis=1)
        residual = float(np.abs(v_new - v).max()) if n else 0.0
        v = v_new
        if residual < tol:
            return ScenePolicyValues(
                scene_id=scene.scene_id, gamma=gamma,
                values={k: float(v[i]) for i, k in enumerate(keys)},
                action_probs={k: pi[i] for i, k in enumerate(keys)},
                residual=residual, sweeps=sweep)
    raise NoConvergenceError(
        f"policy evaluation: residual {residual:.3e} after {max_sweeps} sweeps")


def bellman_residual(result: ScenePolicyValues, scene: SceneDescriptor,
                     config: EnvConfig) -> float:
    """Recompute the sup-norm Bellman residual of a solved value table."""
    worst = 0.0
    for key, v in result.values.items():
        pi = result.action_probs[key]
        backup = 0.0
        for a, action in enumerate(Action):
            key2, reward, terminal = _transition(scene, config, key, action)
            future = 0.0 if terminal else result.values.get(key2, 0.0)
            backup += pi[a] * (reward + result.gamma * future)
        worst = max(worst, abs(backup - v))
    return worst


def start_state_value(result: ScenePolicyValues,
                      scene: SceneDescriptor) -> float:
    """Value of the episode-start state (start position, nothing claimed)."""
    return result.values[(scene.start, frozenset())]


def critic_state_values(scene: SceneDescriptor, params: ParamVector,
                        spec: NetSpec, config: EnvConfig) -> dict:
    """The network critic's own prediction at every reachable state.

    Uses the same most-probable-path hidden-state convention as
    exact_state_values, so the two tables are directly comparable.
    """
    _, _, critic = _expand_policy(scene, config, params, spec)
    return critic

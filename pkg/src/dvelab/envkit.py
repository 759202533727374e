"""Seeded multi-scene gridworld environments.

Each scene is a distinct deterministic MDP over a small grid.  All scenes
share one action space (UP/DOWN/LEFT/RIGHT) and one observation format: an
egocentric one-hot window plus a remaining-steps scalar, so the identity of
the operating scene is never directly observable and must be inferred from
the trajectory.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import GenerationFailedError, StepAfterDoneError
from .rng import stream

# Cell codes used in grids and observations.
EMPTY, WALL, HAZARD_CELL, SUBGOAL_CELL, GOAL_CELL, OOB = range(6)
N_CELL_CODES = 6


class Family(Enum):
    CORRIDOR = "corridor"
    MAZE = "maze"
    HAZARD = "hazard"


class Action(Enum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


ACTION_DELTAS = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}


class TerminationCause(Enum):
    RUNNING = "running"
    GOAL = "goal"
    HAZARD = "hazard"
    TIMEOUT = "timeout"


@dataclass
class EnvConfig:
    """Pool-level environment settings; houses the discount factor gamma."""

    n_levels: int = 100
    families: tuple[Family, ...] = (Family.CORRIDOR, Family.MAZE, Family.HAZARD)
    family_mix: tuple[float, ...] = (1.0, 1.0, 1.0)
    width: int = 8
    height: int = 8
    obs_window: int = 5
    r_sub: float = 3.0
    r_goal: float = 10.0
    t_max: int = 64
    gamma: float = 0.99

    def validate(self):
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.t_max < self.width + self.height:
            raise ValueError("t_max must be >= width + height")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.obs_window % 2 == 0 or self.obs_window < 1:
            raise ValueError("obs_window must be odd and positive")
        if len(self.families) != len(self.family_mix) or not self.families:
            raise ValueError("families and family_mix must be non-empty and equal length")
        if min(self.family_mix) < 0 or sum(self.family_mix) <= 0:
            raise ValueError("family_mix must be non-negative with positive sum")
        if self.width < 2 or self.height < 1:
            raise ValueError("grid must be at least 2x1")

    @property
    def obs_dim(self) -> int:
        return self.obs_window * self.obs_window * N_CELL_CODES + 1


@dataclass
class SceneDescriptor:
    """One procedurally generated level: a distinct MDP with its own layout."""

    scene_id: int
    seed: int
    family: Family
    width: int
    height: int
    walls: np.ndarray       # bool (height, width)
    hazards: np.ndarray     # bool (height, width)
    subgoals: list[tuple[int, int]]
    goal: tuple[int, int]
    start: tuple[int, int]

    def __eq__(self, other):
        if not isinstance(other, SceneDescriptor):
            return NotImplemented
        return scene_to_json(self) == scene_to_json(other)

    def base_code_grid(self) -> np.ndarray:
        """Cell-code grid with all subgoals unclaimed."""
        grid = np.zeros((self.height, self.width), dtype=np.int8)
        grid[self.walls] = WALL
        grid[self.hazards] = HAZARD_CELL
        for r, c in self.subgoals:
            grid[r, c] = SUBGOAL_CELL
        grid[self.goal] = GOAL_CELL
        return grid


@dataclass
class Observation:
    """Egocentric one-hot window plus normalized remaining-step budget."""

    local_window: np.ndarray    # float64, obs_window**2 * 6, flattened one-hot
    remaining_steps_frac: float

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.local_window, [self.remaining_steps_frac]])


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    termination_cause: TerminationCause


@dataclass
class EnvState:
    """Mutable per-episode state; one instance per concurrent worker."""

    scene: SceneDescriptor
    config: EnvConfig
    pos: tuple[int, int]
    t: int
    claimed: set = field(default_factory=set)
    done: bool = False
    cause: TerminationCause = TerminationCause.RUNNING
    code_grid: np.ndarray | None = None


def _bfs_reachable(passable: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Boolean mask of cells reachable from start through passable cells."""
    h, w = passable.shape
    seen = np.zeros_like(passable, dtype=bool)
    if not passable[start]:
        return seen
    seen[start] = True
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and passable[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                queue.append((nr, nc))
    return seen


def goal_reachable(scene: SceneDescriptor) -> bool:
    """Post-hoc check: goal reachable from start avoiding walls and hazards."""
    passable = ~(scene.walls | scene.hazards)
    return bool(_bfs_reachable(passable, scene.start)[scene.goal])


def _sample_distinct_cells(rng, free_cells, count):
    idx = rng.choice(len(free_cells), size=count, replace=False)
    return [(int(free_cells[i][0]), int(free_cells[i][1]))
            for i in np.asarray(idx, dtype=int).reshape(-1)]


def generate_scene(seed: int, family: Family, config: EnvConfig,
                   scene_id: int = 0) -> SceneDescriptor:
    """Generate one scene; deterministic in (seed, family, grid size).

    Layouts failing the reachability requirement are re-rolled from a
    per-attempt substream; after 1000 attempts the config is considered
    degenerate and GenerationFailedError is raised.
    """
    config.validate()
    h, w = config.height, config.width

    if family is Family.CORRIDOR:
        # A single open row: start at the left edge, goal at the right edge.
        mid = h // 2
        walls = np.ones((h, w), dtype=bool)
        walls[mid, :] = False
        return SceneDescriptor(
            scene_id=scene_id, seed=seed, family=family, width=w, height=h,
            walls=walls, hazards=np.zeros((h, w), dtype=bool),
            subgoals=[], goal=(mid, w - 1), start=(mid, 0))

    for attempt in range(1000):
        rng = stream(seed, f"scene.{family.value}.{w}x{h}.attempt{attempt}")
        walls = np.zeros((h, w), dtype=bool)
        hazards = np.zeros((h, w), dtype=bool)
        if family is Family.MAZE:
            walls = rng.random((h, w)) < 0.25
            n_sub = int(rng.integers(1, 3))
        else:  # HAZARD
            hazards = rng.random((h, w)) < 0.15
            n_sub = 1
        free = np.argwhere(~(walls | hazards))
        if len(free) < n_sub + 2:
            continue
        cells = _sample_distinct_cells(rng, free, n_sub + 2)
        start, goal, subgoals = cells[0], cells[1], cells[2:]
        reach = _bfs_reachable(~(walls | hazards), start)
        if reach[goal] and all(reach[s] for s in subgoals):
            return SceneDescriptor(
                scene_id=scene_id, seed=seed, family=family, width=w, height=h,
                walls=walls, hazards=hazards, subgoals=subgoals,
                goal=goal, start=start)
    raise GenerationFailedError(
        f"no reachable {family.value} layout in 1000 attempts for {w}x{h}")


def make_pool(config: EnvConfig, seed: int) -> list[SceneDescriptor]:
    """Build the scene pool; family of each slot drawn from the mix ratios."""
    config.validate()
    rng = stream(seed, "pool.families")
    mix = np.asarray(config.family_mix, dtype=float)
    mix = mix / mix.sum()
    pool = []
    for i in range(config.n_levels):
        family = config.families[int(rng.choice(len(config.families), p=mix))]
        scene_seed = stream(seed, f"pool.scene{i}").integers(0, 2**63)
        pool.append(generate_scene(int(scene_seed), family, config, scene_id=i))
    return pool


def observe(state: EnvState) -> Observation:
    """Egocentric window centered on the agent; out-of-bounds cells marked OOB."""
    k = state.config.obs_window
    half = k // 2
    window = np.full((k, k), OOB, dtype=np.int8)
    r, c = state.pos
    h, w = state.scene.height, state.scene.width
    r0, r1 = max(0, r - half), min(h, r + half + 1)
    c0, c1 = max(0, c - half), min(w, c + half + 1)
    window[r0 - r + half:r1 - r + half, c0 - c + half:c1 - c + half] = \
        state.code_grid[r0:r1, c0:c1]
    onehot = np.zeros((k * k, N_CELL_CODES))
    onehot[np.arange(k * k), window.reshape(-1)] = 1.0
    frac = max(0.0, (state.config.t_max - state.t) / state.config.t_max)
    return Observation(local_window=onehot.reshape(-1), remaining_steps_frac=frac)


def reset(scene: SceneDescriptor, config: EnvConfig) -> tuple[EnvState, Observation]:
    """Start an episode: agent at start, step counter 0, subgoals unclaimed."""
    state = EnvState(scene=scene, config=config, pos=scene.start, t=0,
                     code_grid=scene.base_code_grid())
    return state, observe(state)


def step(state: EnvState, action: Action) -> StepResult:
    """Advance the episode by one action; mutates ``state``."""
    if state.done:
        raise StepAfterDoneError("step() after episode termination")
    dr, dc = ACTION_DELTAS[action]
    r, c = state.pos
    nr, nc = r + dr, c + dc
    scene = state.scene
    if 0 <= nr < scene.height and 0 <= nc < scene.width and not scene.walls[nr, nc]:
        state.pos = (nr, nc)
    reward = 0.0
    pos = state.pos
    if scene.hazards[pos]:
        state.done, state.cause = True, TerminationCause.HAZARD
    elif pos == scene.goal:
        state.done, state.cause = True, TerminationCause.GOAL
        reward = state.config.r_goal
    elif state.code_grid[pos] == SUBGOAL_CELL and pos not in state.claimed:
        state.claimed.add(pos)
        state.code_grid[pos] = EMPTY
        reward = state.config.r_sub
    state.t += 1
    if not state.done and state.t >= state.config.t_max:
        state.done, state.cause = True, TerminationCause.TIMEOUT
    return StepResult(observe(state), reward, state.done, state.cause)


# ---------------------------------------------------------------------------
# Serialization (scenes/<id>.json) and ASCII rendering.

SCENE_SCHEMA = "dvelab.scene.v1"


def scene_to_json(scene: SceneDescriptor) -> dict:
    """JSON-serializable form of a scene (schema ``dvelab.scene.v1``)."""
    return {
        "schema": SCENE_SCHEMA,
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "family": scene.family.value,
        "width": scene.width,
        "height": scene.height,
        "walls": scene.walls.astype(int).tolist(),
        "hazards": scene.hazards.astype(int).tolist(),
        "subgoals": [[int(r), int(c)] for r, c in scene.subgoals],
        "goal": [int(v) for v in scene.goal],
        "start": [int(v) for v in scene.start],
    }


def scene_from_json(data: dict) -> SceneDescriptor:
    if data.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"unknown scene schema: {data.get('schema')!r}")
    return SceneDescriptor(
        scene_id=int(data["scene_id"]),
        seed=int(data["seed"]),
        family=Family(data["family"]),
        width=int(data["width"]),
        height=int(data["height"]),
        walls=np.asarray(data["walls"], dtype=bool),
        hazards=np.asarray(data["hazards"], dtype=bool),
        subgoals=[tuple(s) for s in data["subgoals"]],
        goal=tuple(data["goal"]),
        start=tuple(data["start"]),
    )


def save_scene(scene: SceneDescriptor, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_json(scene), fh, indent=1, sort_keys=True)


def load_scene(path) -> SceneDescriptor:
    with open(path) as fh:
        return scene_from_json(json.load(fh))


def render_ascii(scene: SceneDescriptor, agent: tuple[int, int] | None = None) -> str:
    """ASCII-art dump: # wall, x hazard, s subgoal, G goal, S start, A agent."""
    chars = np.full((scene.height, scene.width), ".", dtype="<U1")
    chars[scene.walls] = "#"
    chars[scene.hazards] = "x"
    for r, c in scene.subgoals:
        chars[r, c] = "s"
    chars[scene.goal] = "G"
    chars[scene.start] = "S"
    if agent is not None:
        chars[agent] = "A"
    return "\n".join("".join(row) for row in chars)

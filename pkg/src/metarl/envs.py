"""Desk-scale environments: random gridworld distributions and CartPole.

Gridworld generator (this package's own, documented choice):

* ``grid_id`` (meta-train / in-distribution): side 5-9, 2-4 objects, rewards in
  {-1, +1}, episode cap 50, each object terminal with probability 0.5.
* ``grid_ood`` (meta-test / out-of-distribution): side 11-13, 1-2 objects, cap 100.

Every sampled grid holds at least one positive-reward object. Non-terminal objects
either respawn at a random free cell when collected or disappear for the rest of the
episode. Observations are flattened one-hot planes: the agent plane followed by one
plane per object class, where the class is ``(reward > 0, terminal)``.

Actions: gridworld 0..3 = N/E/S/W; CartPole 0/1 = push left/right.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Union

import numpy as np

from .numcore import RngLike, as_generator

N_OBJECT_CLASSES = 4
_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


class EnvConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridObject:
    position: tuple[int, int]
    reward: float
    terminal: bool
    respawn: bool = False

    @property
    def object_class(self) -> int:
        return 2 * int(self.reward > 0) + int(self.terminal)


@dataclass(frozen=True)
class GridworldSpec:
    grid_size: int
    objects: tuple[GridObject, ...]
    max_episode_steps: int = 50
    agent_start: Union[tuple[int, int], str] = "random"

    kind = "gridworld"

    def __post_init__(self):
        objects = tuple(self.objects)
        object.__setattr__(self, "objects", objects)
        if self.grid_size < 1:
            raise EnvConfigError("grid_size must be positive")
        if self.max_episode_steps < 1:
            raise EnvConfigError("max_episode_steps must be >= 1")
        seen = set()
        for o in objects:
            r, c = o.position
            if not (0 <= r < self.grid_size and 0 <= c < self.grid_size):
                raise EnvConfigError(f"object at {o.position} lies outside the grid")
            if o.position in seen:
                raise EnvConfigError(f"two objects share position {o.position}")
            seen.add(o.position)
        if len(objects) >= self.grid_size**2:
            raise EnvConfigError("no free cell left for the agent")
        if self.agent_start != "random":
            start = tuple(self.agent_start)
            object.__setattr__(self, "agent_start", start)
            if start in seen:
                raise EnvConfigError("agent start overlaps an object")

    @property
    def obs_size(self) -> int:
        return (1 + N_OBJECT_CLASSES) * self.grid_size**2

    @property
    def n_actions(self) -> int:
        return 4

    def to_json(self) -> str:
        d = asdict(self)
        d["objects"] = [asdict(o) for o in self.objects]
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GridworldSpec":
        d = json.loads(text)
        objects = tuple(
            GridObject(tuple(o["position"]), float(o["reward"]), bool(o["terminal"]), bool(o["respawn"]))
            for o in d["objects"]
        )
        start = d["agent_start"]
        return cls(int(d["grid_size"]), objects, int(d["max_episode_steps"]), start if start == "random" else tuple(start))


@dataclass(frozen=True)
class CartPoleSpec:
    gravity: float = 9.8
    cart_mass: float = 1.0
    pole_mass: float = 0.1
    half_length: float = 0.5
    force_mag: float = 10.0
    tau: float = 0.02
    x_threshold: float = 2.4
    theta_threshold: float = 12 * 2 * math.pi / 360
    max_episode_steps: int = 500

    kind = "cartpole"
    obs_size = 4
    n_actions = 2


EnvInstance = Union[GridworldSpec, CartPoleSpec]


@dataclass(frozen=True)
class GridState:
    agent: tuple[int, int]
    positions: tuple[tuple[int, int], ...]
    alive: tuple[bool, ...]
    step: int = 0

    kind = "gridworld"


@dataclass(frozen=True)
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    step: int = 0

    kind = "cartpole"


EnvState = Union[GridState, CartPoleState]


@dataclass(frozen=True)
class EnvDistribution:
    kind: str  # grid_id | grid_ood | cartpole
    size_range: tuple[int, int] = (5, 9)
    n_objects_range: tuple[int, int] = (2, 4)
    reward_set: tuple[float, ...] = (-1.0, 1.0)
    episode_cap: int = 50
    terminal_prob: float = 0.5
    respawn_prob: float = 0.5

    def __post_init__(self):
        if self.kind not in ("grid_id", "grid_ood", "cartpole"):
            raise EnvConfigError(f"unknown distribution kind {self.kind!r}")
        object.__setattr__(self, "size_range", tuple(int(x) for x in self.size_range))
        object.__setattr__(self, "n_objects_range", tuple(int(x) for x in self.n_objects_range))
        object.__setattr__(self, "reward_set", tuple(float(x) for x in self.reward_set))

    @classmethod
    def grid_id(cls, **overrides) -> "EnvDistribution":
        return cls("grid_id", **overrides)

    @classmethod
    def grid_ood(cls, **overrides) -> "EnvDistribution":
        params = dict(size_range=(11, 13), n_objects_range=(1, 2), episode_cap=100)
        params.update(overrides)
        return cls("grid_ood", **params)

    @classmethod
    def cartpole(cls) -> "EnvDistribution":
        return cls("cartpole")

    @classmethod
    def from_dict(cls, d: dict) -> "EnvDistribution":
        d = dict(d)
        kind = d.pop("kind")
        if kind == "grid_id":
            return cls.grid_id(**d)
        if kind == "grid_ood":
            return cls.grid_ood(**d)
        if kind == "cartpole":
            return cls.cartpole()
        raise EnvConfigError(f"unknown distribution kind {kind!r}")

    def validate(self) -> None:
        if self.kind == "cartpole":
            return
        lo, hi = self.size_range
        olo, ohi = self.n_objects_range
        if lo < 1 or hi < lo:
            raise EnvConfigError(f"bad size range {self.size_range}")
        if olo < 1 or ohi < olo:
            raise EnvConfigError(f"bad object-count range {self.n_objects_range}")
        if ohi > lo * lo - 1:
            raise EnvConfigError(
                f"up to {ohi} objects cannot fit in a {lo}x{lo} grid with an agent"
            )
        if not self.reward_set:
            raise EnvConfigError("reward set is empty")
        if self.episode_cap < 1:
            raise EnvConfigError("episode cap must be >= 1")


def distributions_disjoint(a: EnvDistribution, b: EnvDistribution) -> bool:
    """True when the generator ranges differ in at least one dimension without overlap."""

    def apart(r1, r2):
        return r1[1] < r2[0] or r2[1] < r1[0]

    return (
        apart(a.size_range, b.size_range)
        or apart(a.n_objects_range, b.n_objects_range)
        or a.episode_cap != b.episode_cap
    )


def sample_env(dist: EnvDistribution, rng: RngLike) -> EnvInstance:
    dist.validate()
    if dist.kind == "cartpole":
        return CartPoleSpec()
    g = as_generator(rng)
    size = int(g.integers(dist.size_range[0], dist.size_range[1] + 1))
    n_obj = int(g.integers(dist.n_objects_range[0], dist.n_objects_range[1] + 1))
    cells = g.choice(size * size, size=n_obj, replace=False)
    rewards = [float(dist.reward_set[i]) for i in g.integers(0, len(dist.reward_set), n_obj)]
    if max(rewards) <= 0:
        rewards[0] = max(dist.reward_set) if max(dist.reward_set) > 0 else 1.0
    objects = []
    for cell, reward in zip(cells, rewards):
        terminal = bool(g.random() < dist.terminal_prob)
        respawn = bool(not terminal and g.random() < dist.respawn_prob)
        objects.append(GridObject((int(cell) // size, int(cell) % size), reward, terminal, respawn))
    return GridworldSpec(size, tuple(objects), dist.episode_cap, "random")


def _grid_obs(env: GridworldSpec, state: GridState) -> np.ndarray:
    n = env.grid_size
    plane = n * n
    obs = np.zeros(env.obs_size)
    r, c = state.agent
    obs[r * n + c] = 1.0
    for obj, pos, alive in zip(env.objects, state.positions, state.alive):
        if alive:
            obs[(1 + obj.object_class) * plane + pos[0] * n + pos[1]] = 1.0
    return obs


def _free_cell(env: GridworldSpec, occupied: set, g: np.random.Generator) -> tuple[int, int]:
    n = env.grid_size
    free = [i for i in range(n * n) if (i // n, i % n) not in occupied]
    cell = free[int(g.integers(0, len(free)))]
    return (cell // n, cell % n)


def env_reset(env: EnvInstance, rng: RngLike) -> tuple[EnvState, np.ndarray]:
    g = as_generator(rng)
    if isinstance(env, CartPoleSpec):
        x, xd, th, thd = g.uniform(-0.05, 0.05, size=4)
        state = CartPoleState(float(x), float(xd), float(th), float(thd), 0)
        return state, np.array([x, xd, th, thd])
    positions = tuple(o.position for o in env.objects)
    if env.agent_start == "random":
        agent = _free_cell(env, set(positions), g)
    else:
        agent = env.agent_start
    state = GridState(agent, positions, (True,) * len(positions), 0)
    return state, _grid_obs(env, state)


def env_step(env: EnvInstance, state: EnvState, action: int, rng: RngLike):
    """Advance one step. Returns ``(state, observation, reward, done)``."""
    if isinstance(env, CartPoleSpec):
        if action not in (0, 1):
            raise ValueError(f"CartPole action must be 0 or 1, got {action}")
        return _cartpole_step(env, state, action)
    if action not in (0, 1, 2, 3):
        raise ValueError(f"gridworld action must be in 0..3, got {action}")
    n = env.grid_size
    dr, dc = _MOVES[action]
    r = min(max(state.agent[0] + dr, 0), n - 1)
    c = min(max(state.agent[1] + dc, 0), n - 1)
    agent = (r, c)
    reward = 0.0
    done = False
    positions = list(state.positions)
    alive = list(state.alive)
    for i, obj in enumerate(env.objects):
        if alive[i] and positions[i] == agent:
            reward += obj.reward
            if obj.terminal:
                done = True
            elif obj.respawn:
                occupied = {p for j, p in enumerate(positions) if alive[j] and j != i}
                occupied.add(agent)
                positions[i] = _free_cell(env, occupied, as_generator(rng))
            else:
                alive[i] = False
    step = state.step + 1
    if step >= env.max_episode_steps:
        done = True
    new = GridState(agent, tuple(positions), tuple(alive), step)
    return new, _grid_obs(env, new), reward, done


def _cartpole_step(env: CartPoleSpec, s: CartPoleState, action: int):
    force = env.force_mag if action == 1 else -env.force_mag
    total_mass = env.cart_mass + env.pole_mass
    pml = env.pole_mass * env.half_length
    cos_t = math.cos(s.theta)
    sin_t = math.sin(s.theta)
    temp = (force + pml * s.theta_dot**2 * sin_t) / total_mass
    theta_acc = (env.gravity * sin_t - cos_t * temp) / (
        env.half_length * (4.0 / 3.0 - env.pole_mass * cos_t**2 / total_mass)
    )
    x_acc = temp - pml * theta_acc * cos_t / total_mass
    x = s.x + env.tau * s.x_dot
    x_dot = s.x_dot + env.tau * x_acc
    theta = s.theta + env.tau * s.theta_dot
    theta_dot = s.theta_dot + env.tau * theta_acc
    step = s.step + 1
    done = (
        x < -env.x_threshold
        or x > env.x_threshold
        or theta < -env.theta_threshold
        or theta > env.theta_threshold
        or step >= env.max_episode_steps
    )
    new = CartPoleState(x, x_dot, theta, theta_dot, step)
    return new, np.array([x, x_dot, theta, theta_dot]), 1.0, bool(done)


@dataclass
class EnvSlot:
    """Mutable per-worker wrapper used by rollouts: holds state and its own RNG."""

    env: EnvInstance
    rng: np.random.Generator
    state: EnvState = field(init=False)
    obs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.state, self.obs = env_reset(self.env, self.rng)

    def step(self, action: int) -> tuple[float, bool]:
        self.state, obs, reward, done = env_step(self.env, self.state, action, self.rng)
        if done:
            self.state, obs = env_reset(self.env, self.rng)
        self.obs = obs
        return reward, done

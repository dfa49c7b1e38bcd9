"""Evolution strategies over a flat parameter vector.

Antithetic Gaussian perturbations, optional centered-rank fitness shaping and
plain gradient ascent on the mean with exponentially decayed step size and
noise scale.
"""

from __future__ import annotations

import csv
import logging
import multiprocessing as mp
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .envs import EnvDistribution
from .learnedalgos import LEARNED_OPT_SPEC, DriftFunction, UpdateRule
from .numcore import MlpParams, RngLike, RngStream, as_generator, derive_id
from .rltrain import PpoConfig, train_agent

_log = logging.getLogger(__name__)

FitnessFn = Callable[[np.ndarray, int], float]


class MetaTrainingError(RuntimeError):
    """Raised when the ES mean becomes non-finite."""


@dataclass(frozen=True)
class EsConfig:
    learning_rate: float = 3e-2
    lr_decay: float = 0.999
    sigma_init: float = 3e-2
    sigma_decay: float = 0.999
    population_size: int = 64
    n_generations: int = 100
    fitness_seeds_per_member: int = 2
    fitness_shaping: str = "centered_rank"  # or "none"
    n_workers: int = 1

    def __post_init__(self):
        if self.population_size < 2 or self.population_size % 2:
            raise ValueError("population_size must be a positive even number")
        if not self.sigma_init > 0 or not self.learning_rate > 0:
            raise ValueError("sigma_init and learning_rate must be positive")
        if self.fitness_shaping not in ("centered_rank", "none"):
            raise ValueError(f"unknown fitness shaping {self.fitness_shaping!r}")
        if self.n_generations < 0 or self.fitness_seeds_per_member < 1:
            raise ValueError("n_generations must be >= 0 and seeds per member >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "EsConfig":
        return cls(**d)


@dataclass
class EsState:
    mean: np.ndarray
    sigma: float
    lr: float
    generation: int = 0
    best_params: Optional[np.ndarray] = None
    best_fitness: float = float("-inf")

    @classmethod
    def initial(cls, mean: np.ndarray, config: EsConfig) -> "EsState":
        mean = np.array(mean, dtype=np.float64)
        return cls(mean, config.sigma_init, config.learning_rate, 0, mean.copy(), float("-inf"))


@dataclass
class GenerationLog:
    generation: int
    mean_fitness: float
    best_fitness: float
    n_diverged: int


def centered_ranks(x: np.ndarray) -> np.ndarray:
    """Average ranks mapped linearly onto ``[-0.5, 0.5]``; ties share a value."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return np.zeros_like(x)
    return (rankdata(x, method="average") - 1.0) / (x.size - 1) - 0.5


def shape_fitness(raw: np.ndarray, mode: str) -> np.ndarray:
    """Replace ``-inf`` by the generation's worst finite value, then shape."""
    raw = np.asarray(raw, dtype=np.float64)
    finite = np.isfinite(raw)
    floor = raw[finite].min() if finite.any() else 0.0
    f = np.where(finite, raw, floor)
    return centered_ranks(f) if mode == "centered_rank" else f


def antithetic_noise(dim: int, population: int, rng: np.random.Generator) -> np.ndarray:
    """``(population, dim)`` with rows ``2i`` and ``2i+1`` equal to ``eps_i`` and ``-eps_i``."""
    half = rng.standard_normal((population // 2, dim))
    out = np.empty((population, dim))
    out[0::2] = half
    out[1::2] = -half
    return out


def es_gradient(noise: np.ndarray, shaped: np.ndarray, sigma: float) -> np.ndarray:
    """``(1 / (N sigma)) sum_i eps_i f_i``, summed pairwise so ties cancel exactly."""
    n = noise.shape[0]
    diff = shaped[0::2] - shaped[1::2]
    return (diff @ noise[0::2]) / (n * sigma)


# --- deterministic parallel map ------------------------------------------------------

_POOL_FN: Optional[Callable] = None
_POOL_ITEMS: Sequence = ()


def _pool_call(i: int):
    return _POOL_FN(_POOL_ITEMS[i])


def parallel_map(fn: Callable, items: Sequence, n_workers: int = 1) -> list:
    """``[fn(x) for x in items]`` in index order, optionally over forked workers."""
    global _POOL_FN, _POOL_ITEMS
    items = list(items)
    if n_workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    _POOL_FN, _POOL_ITEMS = fn, items
    try:
        with mp.get_context("fork").Pool(min(n_workers, len(items))) as pool:
            return pool.map(_pool_call, range(len(items)))
    finally:
        _POOL_FN, _POOL_ITEMS = None, ()


def es_step(
    state: EsState,
    fitness_fn: FitnessFn,
    rng: RngLike,
    config: EsConfig,
) -> tuple[EsState, GenerationLog]:
    """One generation: perturb, evaluate, shape, ascend, decay."""
    g = as_generator(rng)
    noise = antithetic_noise(state.mean.shape[0], config.population_size, g)
    members = state.mean[None, :] + state.sigma * noise
    gen = state.generation
    raw = np.array(
        parallel_map(lambda p: float(fitness_fn(p, gen)), members, config.n_workers),
        dtype=np.float64,
    )
    raw = np.where(np.isnan(raw), -np.inf, raw)
    shaped = shape_fitness(raw, config.fitness_shaping)
    grad = es_gradient(noise, shaped, state.sigma)
    new_mean = state.mean + state.lr * grad
    if not np.all(np.isfinite(new_mean)):
        raise MetaTrainingError(f"non-finite ES mean at generation {gen}")
    best_params, best_fit = state.best_params, state.best_fitness
    top = int(np.argmax(raw))
    if raw[top] > best_fit:
        best_params, best_fit = members[top].copy(), float(raw[top])
    finite = raw[np.isfinite(raw)]
    log = GenerationLog(
        gen,
        float(finite.mean()) if finite.size else float("-inf"),
        float(raw[top]),
        int((~np.isfinite(raw)).sum()),
    )
    new_state = EsState(
        new_mean,
        state.sigma * config.sigma_decay,
        state.lr * config.lr_decay,
        gen + 1,
        best_params,
        best_fit,
    )
    return new_state, log


@dataclass
class EsResult:
    best_params: np.ndarray
    best_fitness: float
    final_mean: np.ndarray
    history: list[GenerationLog] = field(default_factory=list)
    env_steps: int = 0


def meta_train_es(
    config: EsConfig,
    init_mean: np.ndarray,
    fitness_fn: FitnessFn,
    rng: RngLike,
    callback: Optional[Callable[[EsState, GenerationLog], None]] = None,
    steps_per_fitness: int = 0,
) -> EsResult:
    """Run ``n_generations`` ES steps; generation ``k`` draws noise from stream child ``k``."""
    stream = rng if isinstance(rng, RngStream) else RngStream(int(as_generator(rng).integers(2**63)))
    state = EsState.initial(init_mean, config)
    history = []
    for k in range(config.n_generations):
        state, log = es_step(state, fitness_fn, stream.child("generation", k), config)
        history.append(log)
        _log.info("generation %d: mean fitness %.4g, best %.4g, diverged %d",
                  log.generation, log.mean_fitness, log.best_fitness, log.n_diverged)
        if callback is not None:
            callback(state, log)
    steps = config.n_generations * config.population_size * steps_per_fitness
    return EsResult(state.best_params, state.best_fitness, state.mean, history, steps)


def write_history_csv(path, history: Sequence[GenerationLog]) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["generation", "mean", "best", "n_diverged"])
        for h in history:
            w.writerow([h.generation, repr(h.mean_fitness), repr(h.best_fitness), h.n_diverged])


# --- RL fitness -------------------------------------------------------------------------


@dataclass(frozen=True)
class RlFitnessTask:
    """Fitness of a learned-algorithm parameter vector: mean final return of PPO runs.

    ``algorithm`` is ``lpo`` (vector = LPO drift network, update rule fixed to
    ``base_rule``) or ``open_ff`` / ``no_features`` (vector = learned optimizer,
    drift fixed to PPO clipping). Every member of a generation trains on the same
    seeds, hence the same sampled environments.
    """

    algorithm: str
    template: MlpParams
    ppo: PpoConfig
    env: EnvDistribution
    base_rule: UpdateRule
    seeds_per_member: int = 2
    base_seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ("lpo", "open_ff", "no_features"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")

    def build(self, vector: np.ndarray) -> tuple[DriftFunction, UpdateRule]:
        params = self.template.with_values(vector)
        if self.algorithm == "lpo":
            return DriftFunction.blackbox(params, self.ppo.clip_eps), self.base_rule
        return DriftFunction.ppo(self.ppo.clip_eps), UpdateRule.learned(params, self.algorithm)

    def seeds(self, generation: int) -> list[int]:
        return [derive_id(self.base_seed, "fitness", generation, k) & 0x7FFFFFFF
                for k in range(self.seeds_per_member)]

    @property
    def steps_per_fitness(self) -> int:
        return self.seeds_per_member * self.ppo.n_updates * self.ppo.batch_size

    def __call__(self, vector: np.ndarray, generation: int) -> float:
        drift, rule = self.build(vector)
        total = 0.0
        for seed in self.seeds(generation):
            res = train_agent(self.ppo, self.env, drift, rule, seed)
            if res.diverged:
                return float("-inf")
            total += res.final_return
        return total / self.seeds_per_member


def default_template(algorithm: str) -> MlpParams:
    from .learnedalgos import LPO_SPEC
    from .numcore import init_mlp

    if algorithm == "lpo":
        return init_mlp(LPO_SPEC, 0, bias_enabled=False)
    return init_mlp(LEARNED_OPT_SPEC[algorithm], 0, bias_enabled=True)

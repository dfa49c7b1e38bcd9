"""PPO-style trainer with a pluggable drift function and update rule.

The agent is a pair of tanh MLPs (actor producing categorical logits, critic
producing a scalar value). Its parameters are concatenated into one flat vector
``[actor | critic]`` which the update rule sees as a single parameter array.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .envs import CartPoleSpec, EnvDistribution, EnvSlot, GridworldSpec, sample_env
from .learnedalgos import (
    DivergenceError,
    DriftFunction,
    OptState,
    UpdateContext,
    UpdateRule,
    apply_update_rule,
    dormancy_per_param,
    drift_and_grad_r,
    layer_proportions,
)
from .numcore import (
    MlpParams,
    MlpSpec,
    RngStream,
    clip_global_norm,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_predict,
)

MASK_LIMIT = 0.10


class TrainingError(RuntimeError):
    """Raised when too many samples in a minibatch have unusable ratios."""


@dataclass(frozen=True)
class PpoConfig:
    n_envs: int = 4
    n_steps: int = 128
    total_timesteps: int = 500_000
    n_minibatches: int = 4
    n_epochs: int = 4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    max_grad_norm: float = 0.5
    hidden_sizes: tuple[int, ...] = (64, 64)
    log_window: int = 64

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        for name in ("n_envs", "n_steps", "total_timesteps", "n_minibatches", "n_epochs", "log_window"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be positive")
        if not self.max_grad_norm > 0:
            raise ValueError("max_grad_norm must be positive")
        if (self.n_envs * self.n_steps) % self.n_minibatches:
            raise ValueError("n_envs * n_steps must be divisible by n_minibatches")

    @property
    def batch_size(self) -> int:
        return self.n_envs * self.n_steps

    @property
    def minibatch_size(self) -> int:
        return self.batch_size // self.n_minibatches

    @property
    def n_updates(self) -> int:
        return math.ceil(self.total_timesteps / self.batch_size)

    @classmethod
    def from_dict(cls, d: dict) -> "PpoConfig":
        return cls(**d)


@dataclass
class RolloutBatch:
    """Time-major rollout arrays of shape ``(n_steps, n_envs)`` (observations add a feature axis)."""

    observations: np.ndarray
    actions: np.ndarray
    behaviour_log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    bootstrap_value: np.ndarray

    def __post_init__(self):
        shape = self.rewards.shape
        for name in ("actions", "behaviour_log_probs", "dones", "values"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != rewards {shape}")
        if self.observations.shape[:2] != shape:
            raise ValueError("observations must share the (n_steps, n_envs) leading shape")
        if self.bootstrap_value.shape != shape[1:]:
            raise ValueError("bootstrap_value must have one entry per env")
        if self.dones.dtype != np.bool_:
            raise ValueError("dones must be boolean")
        if not np.all(np.isfinite(self.behaviour_log_probs)):
            raise ValueError("behaviour log-probs must be finite")


@dataclass
class AdvantageSet:
    advantages: np.ndarray
    targets: np.ndarray


def compute_gae(batch: RolloutBatch, gamma: float, lam: float) -> AdvantageSet:
    """Generalised advantage estimates; ``dones[t]`` cuts bootstrapping after step ``t``."""
    T = batch.rewards.shape[0]
    adv = np.zeros_like(batch.rewards, dtype=np.float64)
    last = np.zeros(batch.rewards.shape[1:])
    next_value = batch.bootstrap_value
    for t in range(T - 1, -1, -1):
        live = 1.0 - batch.dones[t]
        delta = batch.rewards[t] + gamma * next_value * live - batch.values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
        next_value = batch.values[t]
    return AdvantageSet(adv, adv + batch.values)


# --- agent ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Agent:
    actor: MlpParams
    critic: MlpParams

    @property
    def values(self) -> np.ndarray:
        return np.concatenate([self.actor.values, self.critic.values])

    def with_values(self, flat: np.ndarray) -> "Agent":
        n = len(self.actor.values)
        return Agent(self.actor.with_values(flat[:n]), self.critic.with_values(flat[n:]))


def init_agent(obs_size: int, n_actions: int, hidden: Sequence[int], rng) -> Agent:
    widths = (obs_size, *hidden)
    actor = init_mlp(MlpSpec(widths + (n_actions,), "tanh"), rng, output_gain=0.01)
    critic = init_mlp(MlpSpec(widths + (1,), "tanh"), rng, output_gain=1.0)
    return Agent(actor, critic)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def mirror_policy_loss(
    logits: np.ndarray,
    actions: np.ndarray,
    behaviour_log_probs: np.ndarray,
    advantages: np.ndarray,
    drift: DriftFunction,
) -> tuple[float, np.ndarray, int]:
    """Mean of ``-(r*A - D(r, A))`` and its gradient with respect to the logits.

    Samples whose ratio is non-finite or zero are masked out; returns the number
    masked. Raises :class:`TrainingError` if more than 10% are masked.
    """
    B = logits.shape[0]
    logp_all = log_softmax(logits)
    logp = logp_all[np.arange(B), actions]
    with np.errstate(over="ignore", invalid="ignore"):
        r = np.exp(logp - behaviour_log_probs)
    ok = np.isfinite(r) & (r > 0)
    n_masked = int(B - ok.sum())
    if n_masked > MASK_LIMIT * B:
        raise TrainingError(f"{n_masked}/{B} samples have unusable probability ratios")
    grad = np.zeros_like(logits)
    if not ok.any():
        return 0.0, grad, n_masked
    rk, Ak = r[ok], advantages[ok]
    D, dD = drift_and_grad_r(drift, rk, Ak)
    n_ok = rk.shape[0]
    loss = float(-np.mean(rk * Ak - D))
    dloss_dr = -(Ak - dD) / n_ok
    probs = np.exp(logp_all[ok])
    onehot = np.zeros_like(probs)
    onehot[np.arange(n_ok), actions[ok]] = 1.0
    grad[ok] = (dloss_dr * rk)[:, None] * (onehot - probs)
    return loss, grad, n_masked


@dataclass
class LossInfo:
    total: float
    policy: float
    value: float
    entropy: float
    n_masked: int
    grad_norm: float


def ppo_total_loss(
    agent: Agent,
    obs: np.ndarray,
    actions: np.ndarray,
    behaviour_log_probs: np.ndarray,
    advantages: np.ndarray,
    targets: np.ndarray,
    drift: DriftFunction,
    vf_coef: float,
    ent_coef: float,
    max_grad_norm: Optional[float] = None,
):
    """Policy term + ``vf_coef`` * value MSE - ``ent_coef`` * entropy.

    Returns ``(info, flat_grads, actor_cache, critic_cache)``; gradients are
    clipped to ``max_grad_norm`` when given.
    """
    logits, a_cache = mlp_forward(agent.actor, obs)
    values, c_cache = mlp_forward(agent.critic, obs)
    values = values[:, 0]
    B = obs.shape[0]
    pol, dlogits, n_masked = mirror_policy_loss(logits, actions, behaviour_log_probs, advantages, drift)
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    ent = -np.sum(probs * logp_all, axis=1)
    dlogits = dlogits + ent_coef * probs * (logp_all + ent[:, None]) / B
    err = values - targets
    vloss = float(np.mean(err**2))
    dvalues = (2.0 * vf_coef / B) * err
    ga, _ = mlp_backward(agent.actor, a_cache, dlogits)
    gc, _ = mlp_backward(agent.critic, c_cache, dvalues[:, None])
    grads = np.concatenate([ga, gc])
    if not np.all(np.isfinite(grads)):
        raise DivergenceError("non-finite loss gradient")
    norm = float(np.sqrt(np.dot(grads, grads)))
    if max_grad_norm is not None:
        grads = clip_global_norm(grads, max_grad_norm)
    total = pol + vf_coef * vloss - ent_coef * float(np.mean(ent))
    info = LossInfo(total, pol, vloss, float(np.mean(ent)), n_masked, norm)
    return info, grads, a_cache, c_cache


# --- training loop -------------------------------------------------------------------

EnvSource = Union[EnvDistribution, GridworldSpec, CartPoleSpec]


@dataclass
class TrainResult:
    final_params: Optional[Agent]
    return_curve: list[tuple[int, float]] = field(default_factory=list)
    final_return: float = float("-inf")
    diverged: bool = False
    n_masked: int = 0
    env: Optional[object] = None
    failure: str = ""

    @property
    def fitness(self) -> float:
        return float("-inf") if self.diverged else self.final_return


def resolve_env(source: EnvSource, stream: RngStream):
    if isinstance(source, EnvDistribution):
        return sample_env(source, stream.child("env_sample").generator())
    return source


def _window_mean(completed: list[float], running: np.ndarray, window: int) -> float:
    if completed:
        return float(np.mean(completed[-window:]))
    return float(np.mean(running))


def train_agent(
    config: PpoConfig,
    env_source: EnvSource,
    drift: DriftFunction,
    rule: UpdateRule,
    seed: int,
) -> TrainResult:
    """Train one agent from scratch. Deterministic given ``seed``.

    A distribution is sampled once per run; all ``n_envs`` copies share that
    instance. Episodes cut by the step cap are treated as terminal. If no episode
    has finished at a logging point the in-progress returns are averaged.
    """
    root = RngStream(seed)
    env = resolve_env(env_source, root)
    slots = [EnvSlot(env, root.child("env", i).generator()) for i in range(config.n_envs)]
    act_rng = root.child("actions").generator()
    perm_rng = root.child("minibatch").generator()
    noise_rng = root.child("noise").generator()
    agent = init_agent(env.obs_size, env.n_actions, config.hidden_sizes, root.child("init").generator())
    state = OptState.zeros(len(agent.values))
    l_p = np.concatenate([
        layer_proportions(agent.actor.spec, True),
        layer_proportions(agent.critic.spec, True),
    ])
    result = TrainResult(final_params=agent, env=env)
    completed: list[float] = []
    running = np.zeros(config.n_envs)
    n_env = config.n_envs
    T = config.n_steps
    mb = config.minibatch_size
    steps_done = 0
    for update in range(config.n_updates):
        t_p = min(steps_done / config.total_timesteps, 1.0)
        obs_buf = np.zeros((T, n_env, env.obs_size))
        act_buf = np.zeros((T, n_env), dtype=np.int64)
        logp_buf = np.zeros((T, n_env))
        rew_buf = np.zeros((T, n_env))
        done_buf = np.zeros((T, n_env), dtype=bool)
        val_buf = np.zeros((T, n_env))
        for t in range(T):
            obs = np.stack([s.obs for s in slots])
            logits = mlp_predict(agent.actor, obs)
            value = mlp_predict(agent.critic, obs)
            logp_all = log_softmax(logits)
            probs = np.exp(logp_all)
            u = act_rng.random(n_env)
            actions = np.minimum((np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1), env.n_actions - 1)
            obs_buf[t] = obs
            act_buf[t] = actions
            logp_buf[t] = logp_all[np.arange(n_env), actions]
            val_buf[t] = value[:, 0]
            for i, slot in enumerate(slots):
                reward, done = slot.step(int(actions[i]))
                rew_buf[t, i] = reward
                done_buf[t, i] = done
                running[i] += reward
                if done:
                    completed.append(float(running[i]))
                    running[i] = 0.0
        steps_done += T * n_env
        last_obs = np.stack([s.obs for s in slots])
        boot = mlp_predict(agent.critic, last_obs)
        batch = RolloutBatch(obs_buf, act_buf, logp_buf, rew_buf, done_buf, val_buf, boot[:, 0])
        gae = compute_gae(batch, config.gamma, config.gae_lambda)
        flat_obs = obs_buf.reshape(T * n_env, -1)
        flat_act = act_buf.ravel()
        flat_logp = logp_buf.ravel()
        flat_adv = gae.advantages.ravel()
        flat_tgt = gae.targets.ravel()
        theta = agent.values
        try:
            for epoch in range(config.n_epochs):
                order = perm_rng.permutation(T * n_env)
                for k in range(config.n_minibatches):
                    idx = order[k * mb : (k + 1) * mb]
                    adv = flat_adv[idx]
                    if adv.shape[0] > 1:
                        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
                    info, grads, a_cache, c_cache = ppo_total_loss(
                        agent, flat_obs[idx], flat_act[idx], flat_logp[idx], adv, flat_tgt[idx],
                        drift, config.vf_coef, config.ent_coef, config.max_grad_norm,
                    )
                    result.n_masked += info.n_masked
                    b_p = (epoch * config.n_minibatches + k) / (config.n_epochs * config.n_minibatches)
                    if rule.uses_features:
                        dorm = np.concatenate([
                            dormancy_per_param(agent.actor, a_cache),
                            dormancy_per_param(agent.critic, c_cache),
                        ])
                        ctx = UpdateContext(t_p, b_p, l_p, dorm, noise_rng.standard_normal(len(theta)))
                    else:
                        ctx = UpdateContext(t_p, b_p)
                    theta, state = apply_update_rule(rule, state, theta, grads, ctx)
                    agent = agent.with_values(theta)
        except (FloatingPointError, TrainingError) as exc:
            result.diverged = True
            result.failure = str(exc)
            result.final_return = float("-inf")
            result.final_params = None
            return result
        result.return_curve.append((steps_done, _window_mean(completed, running, config.log_window)))
    result.final_params = agent
    result.final_return = result.return_curve[-1][1]
    return result


def write_curve_csv(path, curves: Sequence[tuple[int, Sequence[tuple[int, float]]]]) -> None:
    """Write ``(seed, curve)`` pairs as rows ``env_steps, mean_return, seed``."""
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["env_steps", "mean_return", "seed"])
        for seed, curve in curves:
            for steps, ret in curve:
                w.writerow([steps, repr(float(ret)), seed])

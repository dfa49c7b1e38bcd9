"""Distillation of black-box learned algorithms.

Two routes: L2 regression of a student network onto the teacher over synthetic
inputs (with periodic RL evaluation and best-checkpoint selection), and genetic
programming over DSL expressions minimising L2 error against the teacher.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .learnedalgos import (
    N_LPO_FEATURES,
    N_NO_FEATURES,
    N_OPEN_FEATURES,
    UpdateContext,
    lpo_featurize,
    open_featurize,
)
from .numcore import (
    MlpParams,
    MlpSpec,
    RngLike,
    as_generator,
    halved_spec,
    init_mlp,
    mlp_backward,
    mlp_forward,
)
from .symdsl import (
    DRIFT_SIGNATURE,
    MOMENTUM_COEFFS,
    Const,
    Expr,
    Signature,
    complexity,
    crossover,
    eval_expr,
    momentum_name,
    mutate,
    print_expr,
    random_tree,
)
from .symdsl.expr import replace_at, subtrees

TARGET_KINDS = ("drift", "open_ff", "no_features")
FEATURE_WIDTH = {"drift": N_LPO_FEATURES, "open_ff": N_OPEN_FEATURES, "no_features": N_NO_FEATURES}


# --- synthetic inputs ------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticInputSpec:
    """Samplers for distillation inputs.

    Drift: ``log r ~ N(0, log_r_std)``, ``A ~ N(0, adv_std)``. Optimizer:
    ``p ~ N(0, param_std)``; gradient and momenta are ``sign * exp(U(log lo, log hi))``;
    ``t_p, b_p, l_p ~ U(0, 1)``; ``dorm ~ |N(0, 1)| * width / 2`` clamped to ``[0, width]``.
    """

    kind: str = "drift"
    batch_size: int = 5000
    log_r_std: float = 0.3
    adv_std: float = 1.0
    eps: float = 0.2
    param_std: float = 0.5
    grad_log_range: tuple[float, float] = (1e-6, 1.0)
    layer_width: int = 64
    base_lr: float = 1e-3

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown synthetic input kind {self.kind!r}")
        lo, hi = self.grad_log_range
        if not 0 < lo < hi:
            raise ValueError("grad_log_range must satisfy 0 < lo < hi")
        if self.batch_size < 1 or self.layer_width < 1:
            raise ValueError("batch_size and layer_width must be positive")


@dataclass
class SyntheticBatch:
    features: np.ndarray  # network inputs, (n, width)
    bindings: dict  # DSL variable name -> (n,) array


def _log_uniform_signed(n: int, lo: float, hi: float, g: np.random.Generator) -> np.ndarray:
    mag = np.exp(g.uniform(np.log(lo), np.log(hi), n))
    return np.where(g.random(n) < 0.5, -mag, mag)


def generate_synthetic_inputs(spec: SyntheticInputSpec, n: int, rng: RngLike) -> SyntheticBatch:
    g = as_generator(rng)
    if spec.kind == "drift":
        r = np.exp(g.normal(0.0, spec.log_r_std, n))
        A = g.normal(0.0, spec.adv_std, n)
        return SyntheticBatch(lpo_featurize(r, A), {"r": r, "A": A, "eps": np.full(n, spec.eps)})
    lo, hi = spec.grad_log_range
    p = g.normal(0.0, spec.param_std, n)
    grad = _log_uniform_signed(n, lo, hi, g)
    momenta = np.stack([_log_uniform_signed(n, lo, hi, g) for _ in MOMENTUM_COEFFS])
    t_p, b_p, l_p = g.random(n), g.random(n), g.random(n)
    dorm = np.clip(np.abs(g.normal(size=n)) * spec.layer_width / 2, 0, spec.layer_width)
    feats = open_featurize(p, grad, momenta, UpdateContext(t_p, b_p, l_p, dorm))
    feats = feats[:, : FEATURE_WIDTH[spec.kind]]
    bindings = {"p": p, "g": grad, "l_p": l_p, "b_p": b_p, "t_p": t_p, "dorm": dorm,
                "rand": np.zeros(n), "lr": spec.base_lr * (1.0 - t_p), "iteration": np.zeros(n)}
    for b, m in zip(MOMENTUM_COEFFS, momenta):
        bindings[momentum_name(b)] = m
    return SyntheticBatch(feats, bindings)


# --- black-box to black-box ------------------------------------------------------------


@dataclass(frozen=True)
class DistillConfig:
    student: str = "same"  # same | smaller
    lr_sweep: tuple[float, ...] = (0.1, 0.02, 0.001)
    n_regression_steps: int = 2000
    eval_every: int = 500
    batch_size: int = 1024
    held_out_size: int = 4096
    rl_eval_seeds: int = 4

    def __post_init__(self):
        object.__setattr__(self, "lr_sweep", tuple(float(x) for x in self.lr_sweep))
        if self.student not in ("same", "smaller"):
            raise ValueError(f"unknown student size {self.student!r}")
        if self.eval_every < 1 or self.n_regression_steps % self.eval_every:
            raise ValueError("eval_every must divide n_regression_steps")
        if not self.lr_sweep or min(self.lr_sweep) <= 0:
            raise ValueError("lr_sweep must contain positive learning rates")

    @classmethod
    def from_dict(cls, d: dict) -> "DistillConfig":
        return cls(**d)


@dataclass
class Checkpoint:
    arm: int
    lr: float
    step: int
    train_loss: float
    held_out_mse: float
    rl_score: float
    params: Optional[MlpParams] = field(default=None, repr=False)


@dataclass
class DistillResult:
    student: Optional[MlpParams]
    checkpoints: list[Checkpoint]
    selected: int
    abandoned_arms: list[int]
    n_rl_evals: int

    def write_log(self, path) -> None:
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["arm", "lr", "step", "train_loss", "held_out_mse", "rl_score", "selected"])
            for i, c in enumerate(self.checkpoints):
                w.writerow([c.arm, c.lr, c.step, repr(c.train_loss), repr(c.held_out_mse),
                            repr(c.rl_score), int(i == self.selected)])


def select_best_checkpoint(scores: Sequence[float]) -> int:
    """Index of the highest score; the earliest wins ties."""
    if not len(scores):
        raise ValueError("no checkpoints to select from")
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


def init_student(spec: MlpSpec, bias_enabled: bool, rng: RngLike) -> MlpParams:
    """Orthogonal init; relu-output students get nonnegative output weights so they start alive."""
    params = init_mlp(spec, rng, bias_enabled=bias_enabled)
    if spec.output_activation == "relu":
        ws, _ = spec.layer_slices(bias_enabled)[-1]
        values = params.values.copy()
        values[ws] = np.abs(values[ws])
        params = params.with_values(values)
    return params


def student_spec(teacher: MlpParams, size: str) -> MlpSpec:
    return teacher.spec if size == "same" else halved_spec(teacher.spec)


def _teacher_out(teacher: MlpParams, x: np.ndarray) -> np.ndarray:
    return mlp_forward(teacher, x)[0]


def _mse(params: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((mlp_forward(params, x)[0] - y) ** 2))


def distill_blackbox(
    teacher: MlpParams,
    inputs: SyntheticInputSpec,
    config: DistillConfig,
    rl_eval: Callable[[MlpParams], float],
    rng: RngLike,
    student_init: Optional[MlpParams] = None,
) -> DistillResult:
    """Adam regression of a student onto the teacher for each swept learning rate.

    Checkpoints are taken every ``eval_every`` steps and scored with ``rl_eval``;
    the best-scoring checkpoint over the whole sweep is returned. An arm whose
    batch loss exceeds ten times its initial loss is abandoned.
    """
    g = as_generator(rng)
    if student_init is None:
        spec = student_spec(teacher, config.student)
        student_init = init_student(spec, teacher.bias_enabled, g)
    if student_init.spec.input_width != teacher.spec.input_width:
        raise ValueError("teacher and student must share input width")
    held = generate_synthetic_inputs(inputs, config.held_out_size, g)
    held_y = _teacher_out(teacher, held.features)
    checkpoints: list[Checkpoint] = []
    abandoned: list[int] = []
    n_evals = 0
    b1, b2 = 0.9, 0.999
    for arm, lr in enumerate(config.lr_sweep):
        theta = student_init.values.copy()
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        initial = None
        for step in range(1, config.n_regression_steps + 1):
            batch = generate_synthetic_inputs(inputs, config.batch_size, g)
            y = _teacher_out(teacher, batch.features)
            current = student_init.with_values(theta)
            out, cache = mlp_forward(current, batch.features)
            err = out - y
            loss = float(np.mean(err**2))
            if initial is None:
                initial = loss
            if not math.isfinite(loss) or loss > max(10.0 * initial, 1e-12):
                abandoned.append(arm)
                break
            grad, _ = mlp_backward(current, cache, (2.0 / err.size) * err)
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            theta = theta - lr * (m / (1 - b1**step)) / (np.sqrt(v / (1 - b2**step)) + 1e-8)
            if not np.all(np.isfinite(theta)):
                abandoned.append(arm)
                break
            if step % config.eval_every == 0:
                params = student_init.with_values(theta)
                score = float(rl_eval(params))
                n_evals += 1
                checkpoints.append(Checkpoint(arm, lr, step, loss, _mse(params, held.features, held_y),
                                              score, params))
    if not checkpoints:
        return DistillResult(None, [], -1, abandoned, n_evals)
    best = select_best_checkpoint([c.rl_score for c in checkpoints])
    return DistillResult(checkpoints[best].params, checkpoints, best, abandoned, n_evals)


# --- black-box to symbolic ---------------------------------------------------------------


@dataclass(frozen=True)
class SymDistillConfig:
    max_size: int = 40
    n_populations: int = 31
    population_size: int = 16
    iterations_per_round: int = 10
    rounds: int = 40
    batch_size: int = 5000
    constant_opt_rate: float = 0.001
    constant_opt_evals: int = 60
    tournament_size: int = 5
    mutation_prob: float = 0.7
    elitism: int = 1
    init_depth: int = 2
    parsimony: float = 1e-4
    migration_prob: float = 0.3

    def __post_init__(self):
        for name in ("max_size", "n_populations", "population_size", "iterations_per_round",
                     "rounds", "batch_size", "tournament_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.constant_opt_rate > 0:
            raise ValueError("constant_opt_rate must be positive")
        if not 0 <= self.mutation_prob <= 1:
            raise ValueError("mutation_prob must lie in [0, 1]")
        if not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must be smaller than the population")

    @classmethod
    def from_dict(cls, d: dict) -> "SymDistillConfig":
        return cls(**d)


@dataclass
class RoundLog:
    round: int
    champion: str
    champion_mse: float
    champion_complexity: int
    rl_score: float


@dataclass
class SymDistillResult:
    best: Expr
    best_mse: float
    history: list[RoundLog]
    n_rl_evals: int

    def write_history(self, path) -> None:
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["round", "champion_mse", "complexity", "rl_score", "champion"])
            for h in self.history:
                w.writerow([h.round, repr(h.champion_mse), h.champion_complexity, repr(h.rl_score),
                            h.champion])


class _Fitness:
    """MSE of an expression on a fixed dataset, cached by printed text."""

    def __init__(self, bindings: dict, target: np.ndarray):
        self.bindings = bindings
        self.target = target
        self.cache: dict[str, float] = {}

    def __call__(self, e: Expr) -> float:
        key = print_expr(e)
        hit = self.cache.get(key)
        if hit is None:
            pred = eval_expr(e, self.bindings)
            hit = float(np.mean((pred - self.target) ** 2))
            if not math.isfinite(hit):
                hit = float("inf")
            self.cache[key] = hit
        return hit


def select_lowest_mse(exprs: Sequence[Expr], mses: Sequence[float]) -> Expr:
    """Lowest MSE; the smaller expression wins ties, then the earlier one."""
    if not len(exprs):
        raise ValueError("no expressions to select from")
    keys = [(float(m), complexity(e), i) for i, (e, m) in enumerate(zip(exprs, mses))]
    return exprs[min(keys)[2]]


def optimize_constants(e: Expr, fitness: _Fitness, rate: float, max_evals: int) -> tuple[Expr, float]:
    """Coordinate-wise pattern search over the constants of ``e``.

    Each constant starts with step ``rate * (1 + |c|)``; a successful move doubles
    the step, a failed pair of moves halves it. Only improvements are accepted.
    """
    best = e
    best_f = fitness(e)
    paths = [p for p, n in subtrees(e) if isinstance(n, Const)]
    if not paths:
        return best, best_f
    steps = {p: rate * (1.0 + abs(_const_at(e, p))) for p in paths}
    evals = 0
    while evals < max_evals:
        improved_any = False
        for p in paths:
            c = _const_at(best, p)
            moved = False
            for direction in (1.0, -1.0):
                cand = replace_at(best, p, Const(c + direction * steps[p]))
                f = fitness(cand)
                evals += 1
                if f < best_f:
                    best, best_f, moved = cand, f, True
                    break
            steps[p] = steps[p] * 2.0 if moved else steps[p] * 0.5
            improved_any |= moved
            if evals >= max_evals:
                break
        if not improved_any and max(steps.values()) < 1e-12:
            break
    return best, best_f


def _const_at(e: Expr, path: tuple) -> float:
    for i in path:
        e = e.children[i]
    return e.value


def _tournament(pop: list, scores: list, k: int, g: np.random.Generator) -> Expr:
    idx = g.integers(0, len(pop), size=k)
    return pop[min(idx, key=lambda i: (scores[i], i))]


def distill_symbolic(
    teacher_fn: Callable[[SyntheticBatch], np.ndarray],
    inputs: SyntheticInputSpec,
    config: SymDistillConfig,
    sig: Signature,
    rng: RngLike,
    rl_eval: Optional[Callable[[Expr], float]] = None,
    seed_exprs: Sequence[Expr] = (),
) -> SymDistillResult:
    """Island GP over DSL expressions against a stationary teacher dataset.

    Each round runs ``iterations_per_round`` generations on every island, then
    pattern-searches the constants of the overall champion, writes it back into
    its island, and (when ``rl_eval`` is given) records its RL score. The next
    round continues from the current populations. Returns the lowest-MSE
    expression seen.
    """
    g = as_generator(rng)
    data = generate_synthetic_inputs(inputs, config.batch_size, g)
    target = np.asarray(teacher_fn(data), dtype=np.float64).reshape(-1)
    fitness = _Fitness(data.bindings, target)

    def sel_score(e: Expr) -> float:
        return fitness(e) + config.parsimony * complexity(e)

    pops: list[list[Expr]] = []
    for k in range(config.n_populations):
        pop = [random_tree(sig, g, config.init_depth) for _ in range(config.population_size)]
        pop = [e if complexity(e) <= config.max_size else Const(0.0) for e in pop]
        pops.append(pop)
    for i, e in enumerate(seed_exprs):
        pops[i % config.n_populations][0] = e
    hof, hof_mse = pops[0][0], fitness(pops[0][0])
    history: list[RoundLog] = []
    n_evals = 0
    for rnd in range(config.rounds):
        for k, pop in enumerate(pops):
            fits = [sel_score(e) for e in pop]
            for _ in range(config.iterations_per_round):
                order = sorted(range(len(pop)), key=lambda i: (fits[i], i))
                nxt = [pop[i] for i in order[: config.elitism]]
                while len(nxt) < config.population_size:
                    parent = _tournament(pop, fits, config.tournament_size, g)
                    if g.random() < config.mutation_prob:
                        child = mutate(parent, sig, g, config.max_size)
                    else:
                        other = _tournament(pop, fits, config.tournament_size, g)
                        child = crossover(parent, other, g, config.max_size)
                    nxt.append(child)
                pop = nxt
                fits = [sel_score(e) for e in pop]
            pops[k] = pop
        champs = []
        for k, pop in enumerate(pops):
            fits = [fitness(e) for e in pop]
            i = min(range(len(pop)), key=lambda j: (fits[j], complexity(pop[j]), j))
            champs.append((fits[i], complexity(pop[i]), k, i))
        _, _, ck, ci = min(champs)
        champ, champ_mse = optimize_constants(
            pops[ck][ci], fitness, config.constant_opt_rate, config.constant_opt_evals
        )
        pops[ck][ci] = champ
        if (champ_mse, complexity(champ)) < (hof_mse, complexity(hof)):
            hof, hof_mse = champ, champ_mse
        # migrate the hall-of-fame into every island in place of its worst member
        for pop in pops:
            if hof not in pop and g.random() < config.migration_prob:
                worst = max(range(len(pop)), key=lambda j: (sel_score(pop[j]), j))
                pop[worst] = hof
        rl_score = float("nan")
        if rl_eval is not None:
            rl_score = float(rl_eval(hof))
            n_evals += 1
        history.append(RoundLog(rnd, print_expr(hof), hof_mse, complexity(hof), rl_score))
    return SymDistillResult(hof, hof_mse, history, n_evals)


def drift_teacher(params: MlpParams) -> Callable[[SyntheticBatch], np.ndarray]:
    return lambda batch: mlp_forward(params, batch.features)[0][:, 0]


def optimizer_teacher(params: MlpParams, output_scale: float) -> Callable[[SyntheticBatch], np.ndarray]:
    """Noise-free learned update ``output_scale * net(features)``."""
    return lambda batch: output_scale * mlp_forward(params, batch.features)[0][:, 0]


def expr_teacher(expr: Expr) -> Callable[[SyntheticBatch], np.ndarray]:
    return lambda batch: np.broadcast_to(eval_expr(expr, batch.bindings), batch.features.shape[:1])

"""Drift functions: the PPO clip drift, the learned LPO network and symbolic drifts.

A drift ``D(r, A)`` penalises moving the policy ratio ``r`` away from one. The
policy objective per sample is ``r * A - D(r, A)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..numcore import MlpParams, MlpSpec, RngLike, as_generator, init_mlp, mlp_backward, mlp_forward
from ..symdsl import DRIFT_SIGNATURE, Expr, eval_expr, parse, print_expr, variables

N_LPO_FEATURES = 7
LPO_SPEC = MlpSpec((N_LPO_FEATURES, 128, 1), "relu", "relu")
VIOLATION_TOL = 1e-9


class DriftDomainError(ValueError):
    """Raised for non-positive probability ratios."""


class DriftInitError(RuntimeError):
    """Raised when the LPO network cannot be fitted to the PPO drift."""


def _check_ratio(r: np.ndarray) -> None:
    if np.any(~(r > 0)):
        raise DriftDomainError("probability ratio must be positive")


def lpo_featurize(r, A) -> np.ndarray:
    """``[(1-r), (1-r)^2, (1-r)A, (1-r)^2 A, log r, A log r, A log^2 r]`` on the last axis."""
    r = np.asarray(r, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    _check_ratio(r)
    r, A = np.broadcast_arrays(r, A)
    u = 1.0 - r
    lr = np.log(r)
    return np.stack([u, u * u, u * A, u * u * A, lr, lr * A, lr * lr * A], axis=-1)


def lpo_feature_dr(r, A) -> np.ndarray:
    """Derivative of :func:`lpo_featurize` with respect to ``r``."""
    r = np.asarray(r, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    r, A = np.broadcast_arrays(r, A)
    u = 1.0 - r
    lr = np.log(r)
    one = np.ones_like(r)
    return np.stack([-one, -2 * u, -A, -2 * u * A, 1 / r, A / r, 2 * lr * A / r], axis=-1)


@dataclass(frozen=True)
class DriftFunction:
    """Tagged drift: ``ppo_clip``, ``blackbox`` (LPO network) or ``symbolic``.

    ``eps`` is the PPO clip range; symbolic drifts may read it as variable ``eps``.
    """

    kind: str
    eps: float = 0.2
    params: Optional[MlpParams] = None
    expr: Optional[Expr] = None

    def __post_init__(self):
        if self.kind not in ("ppo_clip", "blackbox", "symbolic"):
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.kind == "blackbox":
            p = self.params
            if p is None:
                raise ValueError("blackbox drift needs parameters")
            if p.bias_enabled or p.spec.output_activation != "relu":
                raise ValueError("blackbox drift must be bias-free with relu output")
            if p.spec.input_width != N_LPO_FEATURES or p.spec.output_width != 1:
                raise ValueError("blackbox drift must map 7 features to 1 output")
        if self.kind == "symbolic":
            if self.expr is None:
                raise ValueError("symbolic drift needs an expression")
            extra = variables(self.expr) - set(DRIFT_SIGNATURE.names)
            if extra:
                raise ValueError(f"drift expression uses unknown variables {sorted(extra)}")

    @classmethod
    def ppo(cls, eps: float = 0.2) -> "DriftFunction":
        return cls("ppo_clip", eps)

    @classmethod
    def blackbox(cls, params: MlpParams, eps: float = 0.2) -> "DriftFunction":
        return cls("blackbox", eps, params=params)

    @classmethod
    def symbolic(cls, expr, eps: float = 0.2) -> "DriftFunction":
        if isinstance(expr, str):
            expr = parse(expr, DRIFT_SIGNATURE)
        return cls("symbolic", eps, expr=expr)

    def describe(self) -> str:
        if self.kind == "symbolic":
            return print_expr(self.expr)
        if self.kind == "blackbox":
            return f"blackbox{self.params.spec.layer_widths}"
        return f"ppo_clip(eps={self.eps})"


def ppo_drift(r, A, eps: float) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    return np.maximum((r - np.clip(r, 1 - eps, 1 + eps)) * A, 0.0)


def _symbolic_raw(d: DriftFunction, r, A) -> np.ndarray:
    r, A = np.broadcast_arrays(np.asarray(r, float), np.asarray(A, float))
    return np.broadcast_to(eval_expr(d.expr, {"r": r, "A": A, "eps": d.eps}), r.shape)


def drift_values(d: DriftFunction, r, A) -> tuple[np.ndarray, bool]:
    """Drift values and whether a symbolic drift went negative before clamping."""
    r = np.asarray(r, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    _check_ratio(r)
    if d.kind == "ppo_clip":
        return np.broadcast_to(ppo_drift(r, A, d.eps), np.broadcast(r, A).shape).copy(), False
    if d.kind == "blackbox":
        feats = lpo_featurize(r, A)
        out, _ = mlp_forward(d.params, feats.reshape(-1, N_LPO_FEATURES))
        return out[:, 0].reshape(feats.shape[:-1]), False
    raw = _symbolic_raw(d, r, A)
    return np.maximum(raw, 0.0), bool(np.any(raw < -VIOLATION_TOL))


def drift_eval(d: DriftFunction, r, A) -> np.ndarray:
    return drift_values(d, r, A)[0]


def drift_and_grad_r(d: DriftFunction, r, A) -> tuple[np.ndarray, np.ndarray]:
    """``(D, dD/dr)`` elementwise for 1-D arrays ``r`` and ``A``."""
    r = np.asarray(r, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    _check_ratio(r)
    if d.kind == "ppo_clip":
        D = ppo_drift(r, A, d.eps)
        outside = (r > 1 + d.eps) | (r < 1 - d.eps)
        return D, np.where((D > 0) & outside, A, 0.0)
    if d.kind == "blackbox":
        feats = lpo_featurize(r, A)
        out, cache = mlp_forward(d.params, feats)
        _, dfeat = mlp_backward(d.params, cache, np.ones_like(out))
        return out[:, 0], np.sum(dfeat * lpo_feature_dr(r, A), axis=-1)
    D = np.maximum(_symbolic_raw(d, r, A), 0.0)
    h = 1e-5 * np.maximum(1.0, np.abs(r))
    h = np.minimum(h, 0.5 * r)
    up = np.maximum(_symbolic_raw(d, r + h, A), 0.0)
    down = np.maximum(_symbolic_raw(d, r - h, A), 0.0)
    return D, (up - down) / (2 * h)


# --- initialisation near PPO ---------------------------------------------------------


def sample_drift_inputs(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Ratios over ``[0.5, 1.8]`` with extra mass near one; advantages over ``[-3.5, 3.5]``."""
    wide = rng.uniform(0.5, 1.8, n)
    near = 1.0 + rng.uniform(-0.3, 0.3, n)
    r = np.where(rng.random(n) < 0.7, wide, near)
    A = rng.uniform(-3.5, 3.5, n)
    return r, A


def fit_drift_network(
    params: MlpParams,
    target_fn,
    rng: np.random.Generator,
    n_iters: int,
    lr: float = 3e-3,
    batch_size: int = 1024,
    sampler=sample_drift_inputs,
) -> MlpParams:
    """Adam regression of a drift network onto ``target_fn(r, A)`` over fresh batches."""
    theta = params.values.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = 0.9, 0.999
    for t in range(1, n_iters + 1):
        r, A = sampler(batch_size, rng)
        feats = lpo_featurize(r, A)
        current = params.with_values(theta)
        out, cache = mlp_forward(current, feats)
        err = out[:, 0] - target_fn(r, A)
        grad, _ = mlp_backward(current, cache, (2.0 / batch_size) * err[:, None])
        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        step_lr = lr * (1.0 - 0.9 * t / n_iters)
        theta = theta - step_lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + 1e-8)
    return params.with_values(theta)


def drift_mse(params: MlpParams, target_fn, r, A) -> float:
    out, _ = mlp_forward(params, lpo_featurize(r, A))
    return float(np.mean((out[:, 0] - target_fn(r, A)) ** 2))


def init_lpo_near_ppo(
    rng: RngLike,
    eps: float = 0.2,
    spec: MlpSpec = LPO_SPEC,
    target_mse: float = 1e-4,
    fail_mse: float = 1e-3,
    chunk_iters: int = 6000,
    max_iters: int = 20000,
) -> MlpParams:
    """Fit a bias-free relu LPO network to the PPO drift.

    Trains in chunks until held-out MSE drops below ``target_mse`` or the
    iteration cap is hit; raises :class:`DriftInitError` if the MSE is still at
    least ``fail_mse``.
    """
    if spec.input_width != N_LPO_FEATURES or spec.output_activation != "relu":
        raise ValueError("LPO network must map 7 features through a relu output")
    rng = as_generator(rng)
    params = init_mlp(spec, rng, bias_enabled=False)
    # nonnegative output weights over relu features keep the relu output alive at init
    last, _ = spec.layer_slices(False)[-1]
    values = params.values.copy()
    values[last] = np.abs(values[last])
    params = params.with_values(values)
    target = lambda r, A: ppo_drift(r, A, eps)  # noqa: E731
    r_hold, A_hold = sample_drift_inputs(4096, rng)
    done = 0
    mse = drift_mse(params, target, r_hold, A_hold)
    while done < max_iters and mse >= target_mse:
        n = min(chunk_iters, max_iters - done)
        params = fit_drift_network(params, target, rng, n)
        done += n
        mse = drift_mse(params, target, r_hold, A_hold)
    if mse >= fail_mse:
        raise DriftInitError(f"held-out MSE {mse:.3g} after {done} iterations")
    return params

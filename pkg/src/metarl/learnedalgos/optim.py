"""Per-parameter update rules: SGD, Adam, learned optimizers and symbolic rules.

Every rule sees the same per-parameter state: six momenta, the Adam second
moment and an iteration counter. Learned and symbolic rules act on each parameter
independently, so permuting parameters permutes the update.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..numcore import MlpCache, MlpParams, MlpSpec, mlp_forward
from ..symdsl import (
    MOMENTUM_COEFFS,
    NO_FEATURES_SIGNATURE,
    OPEN_SIGNATURE,
    Expr,
    eval_expr,
    momentum_name,
    parse,
    print_expr,
    variables,
)

FEATURE_EPS = 1e-8
N_OPEN_FEATURES = 19
N_NO_FEATURES = 15
FEATURE_WIDTHS = {"open_ff": N_OPEN_FEATURES, "no_features": N_NO_FEATURES}
LEARNED_OPT_SPEC = {k: MlpSpec((w, 16, 16, 1), "relu", "identity") for k, w in FEATURE_WIDTHS.items()}
MOMENTA = np.array(MOMENTUM_COEFFS)


class DivergenceError(FloatingPointError):
    """Raised when an update produces non-finite parameters."""


@dataclass(frozen=True)
class UpdateContext:
    """Training-progress signals passed to the update rule.

    ``l_p``, ``dorm`` and ``rand`` are per-parameter arrays (``rand`` may be None).
    """

    t_p: float = 0.0
    b_p: float = 0.0
    l_p: Optional[np.ndarray] = None
    dorm: Optional[np.ndarray] = None
    rand: Optional[np.ndarray] = None

    def arrays(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        zeros = np.zeros(n)
        l_p = zeros if self.l_p is None else np.asarray(self.l_p, dtype=np.float64)
        dorm = zeros if self.dorm is None else np.asarray(self.dorm, dtype=np.float64)
        rand = zeros if self.rand is None else np.asarray(self.rand, dtype=np.float64)
        for name, a in (("l_p", l_p), ("dorm", dorm), ("rand", rand)):
            if a.shape != (n,):
                raise ValueError(f"{name} must have one entry per parameter")
        return l_p, dorm, rand


@dataclass
class OptState:
    """Per-parameter optimizer state owned by a single training run."""

    momenta: np.ndarray  # (6, n) aligned with MOMENTUM_COEFFS
    adam_m: np.ndarray
    adam_v: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptState":
        return cls(np.zeros((len(MOMENTA), n)), np.zeros(n), np.zeros(n), 0)


@dataclass(frozen=True)
class UpdateRule:
    kind: str
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    params: Optional[MlpParams] = None
    feature_set: str = "open_ff"
    output_scale: float = 1e-3
    noise_scale: float = 1e-3
    expr: Optional[Expr] = None
    anneal: bool = True

    def __post_init__(self):
        if self.kind not in ("sgd", "adam", "learned_blackbox", "symbolic"):
            raise ValueError(f"unknown update rule {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.feature_set not in FEATURE_WIDTHS:
            raise ValueError(f"unknown feature set {self.feature_set!r}")
        if self.kind == "learned_blackbox":
            if self.params is None:
                raise ValueError("learned optimizer needs network parameters")
            if self.params.spec.input_width != FEATURE_WIDTHS[self.feature_set]:
                raise ValueError("network input width does not match the feature set")
            if self.params.spec.output_width != 1:
                raise ValueError("learned optimizer network must have one output")
        if self.kind == "symbolic":
            if self.expr is None:
                raise ValueError("symbolic rule needs an expression")
            extra = variables(self.expr) - set(self.signature.names)
            if extra:
                raise ValueError(f"update expression uses unknown variables {sorted(extra)}")

    @property
    def signature(self):
        return OPEN_SIGNATURE if self.feature_set == "open_ff" else NO_FEATURES_SIGNATURE

    @classmethod
    def sgd(cls, lr: float, anneal: bool = True) -> "UpdateRule":
        return cls("sgd", lr, anneal=anneal)

    @classmethod
    def adam(cls, lr: float, beta1=0.9, beta2=0.999, eps_adam=1e-8, anneal=True) -> "UpdateRule":
        return cls("adam", lr, beta1, beta2, eps_adam, anneal=anneal)

    @classmethod
    def learned(cls, params: MlpParams, feature_set="open_ff", output_scale=1e-3, noise_scale=1e-3):
        return cls("learned_blackbox", params=params, feature_set=feature_set,
                   output_scale=output_scale, noise_scale=noise_scale)

    @classmethod
    def symbolic(cls, expr, lr: float = 1e-3, feature_set: str = "open_ff") -> "UpdateRule":
        if isinstance(expr, str):
            sig = OPEN_SIGNATURE if feature_set == "open_ff" else NO_FEATURES_SIGNATURE
            expr = parse(expr, sig)
        return cls("symbolic", lr, expr=expr, feature_set=feature_set)

    @property
    def uses_features(self) -> bool:
        """Whether the rule reads momenta, dormancy or noise (plain SGD and Adam do not)."""
        return self.kind in ("learned_blackbox", "symbolic")

    def describe(self) -> str:
        if self.kind == "symbolic":
            return print_expr(self.expr)
        if self.kind == "learned_blackbox":
            return f"learned_{self.feature_set}{self.params.spec.layer_widths}"
        return f"{self.kind}(lr={self.lr})"


def update_momenta(momenta: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``m_b <- b * g + (1 - b) * m_b`` for each coefficient ``b``."""
    b = MOMENTA[:, None]
    return b * g[None, :] + (1.0 - b) * momenta


def dormancy_scores(h) -> np.ndarray:
    """Each neuron's mean |activation| relative to the layer average (0 if the layer is silent)."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    means = np.mean(np.abs(h), axis=0)
    avg = means.mean()
    if avg == 0:
        return np.zeros_like(means)
    return means / avg


def _log_sgn(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.log(np.abs(x) + FEATURE_EPS), np.sign(x)


def open_featurize(p, g, momenta, ctx: UpdateContext) -> np.ndarray:
    """``(n, 19)`` inputs: p, log/sign pairs for g and the momenta, t_p, b_p, dorm, l_p."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    n = p.shape[0]
    l_p, dorm, _ = ctx.arrays(n)
    cols = [p, *_log_sgn(g)]
    for m in np.asarray(momenta, dtype=np.float64):
        cols.extend(_log_sgn(m))
    t_p = np.broadcast_to(np.asarray(ctx.t_p, dtype=np.float64), (n,))
    b_p = np.broadcast_to(np.asarray(ctx.b_p, dtype=np.float64), (n,))
    cols += [t_p, b_p, dorm, l_p]
    return np.stack(cols, axis=1)


def no_features_featurize(p, g, momenta) -> np.ndarray:
    """First 15 OPEN inputs: parameter, gradient and momentum information only."""
    return open_featurize(p, g, momenta, UpdateContext())[:, :N_NO_FEATURES]


def annealed_lr(rule: UpdateRule, t_p: float) -> float:
    return rule.lr * (1.0 - t_p) if rule.anneal else rule.lr


def compute_update(rule: UpdateRule, state: OptState, params: np.ndarray, grads: np.ndarray,
                   ctx: UpdateContext) -> tuple[np.ndarray, OptState]:
    """Step ``delta`` (new params = params - delta) and the advanced state."""
    p = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    n = p.shape[0]
    if g.shape != (n,) or state.momenta.shape != (len(MOMENTA), n):
        raise ValueError("parameters, gradients and optimizer state must be aligned")
    momenta = update_momenta(state.momenta, g) if rule.uses_features else state.momenta
    it = state.iteration + 1
    adam_m, adam_v = state.adam_m, state.adam_v
    lr = annealed_lr(rule, ctx.t_p)
    if rule.kind == "sgd":
        delta = lr * g
    elif rule.kind == "adam":
        adam_m = rule.beta1 * adam_m + (1 - rule.beta1) * g
        adam_v = rule.beta2 * adam_v + (1 - rule.beta2) * g * g
        m_hat = adam_m / (1 - rule.beta1**it)
        v_hat = adam_v / (1 - rule.beta2**it)
        delta = lr * m_hat / (np.sqrt(v_hat) + rule.eps_adam)
    elif rule.kind == "learned_blackbox":
        feats = open_featurize(p, g, momenta, ctx)[:, : FEATURE_WIDTHS[rule.feature_set]]
        out, _ = mlp_forward(rule.params, feats)
        _, _, rand = ctx.arrays(n)
        delta = rule.output_scale * (out[:, 0] + rule.noise_scale * rand)
    else:
        l_p, dorm, rand = ctx.arrays(n)
        bindings = {"p": p, "g": g, "lr": lr, "t_p": ctx.t_p, "b_p": ctx.b_p, "l_p": l_p,
                    "dorm": dorm, "rand": rand, "iteration": float(state.iteration)}
        for b, m in zip(MOMENTUM_COEFFS, momenta):
            bindings[momentum_name(b)] = m
        delta = np.broadcast_to(eval_expr(rule.expr, bindings), (n,))
    new_state = OptState(momenta, adam_m, adam_v, it)
    return np.asarray(delta, dtype=np.float64), new_state


def apply_update_rule(rule: UpdateRule, state: OptState, params: np.ndarray, grads: np.ndarray,
                      ctx: UpdateContext) -> tuple[np.ndarray, OptState]:
    """One optimizer step; raises :class:`DivergenceError` on non-finite parameters."""
    with np.errstate(all="ignore"):
        delta, new_state = compute_update(rule, state, params, grads, ctx)
        new_params = np.asarray(params, dtype=np.float64) - delta
    if not np.all(np.isfinite(new_params)):
        raise DivergenceError(f"{rule.kind} update produced non-finite parameters")
    return new_params, new_state


# --- per-parameter layer context -------------------------------------------------------


def layer_proportions(spec: MlpSpec, bias_enabled: bool) -> np.ndarray:
    """Per-parameter ``layer_index / (n_layers - 1)``; 0 for single-layer networks."""
    out = np.zeros(spec.n_params(bias_enabled))
    denom = max(spec.n_layers - 1, 1)
    for i, (ws, bs) in enumerate(spec.layer_slices(bias_enabled)):
        frac = i / denom if spec.n_layers > 1 else 0.0
        out[ws] = frac
        if bs is not None:
            out[bs] = frac
    return out


def dormancy_per_param(params: MlpParams, cache: MlpCache) -> np.ndarray:
    """Map each weight ``W[:, j]`` and bias ``b[j]`` to the dormancy of neuron ``j``.

    Hidden layers use post-activation magnitudes; the output layer uses the
    pre-activation since it has no nonlinearity of its own.
    """
    spec = params.spec
    w = spec.layer_widths
    out = np.zeros(len(params.values))
    last = spec.n_layers - 1
    for i, (ws, bs) in enumerate(spec.layer_slices(params.bias_enabled)):
        acts = cache.pre[i] if i == last else cache.post[i]
        scores = dormancy_scores(acts)
        out[ws] = np.broadcast_to(scores[None, :], (w[i], w[i + 1])).ravel()
        if bs is not None:
            out[bs] = scores
    return out

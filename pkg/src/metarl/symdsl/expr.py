"""Expression trees, the protected evaluator and the canonical printer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Union

import numpy as np

UNARY_OPS = ("neg", "abs", "log", "exp", "tanh", "relu", "sin", "cos", "sgn", "square")
BINARY_OPS = ("add", "sub", "mul", "div", "min", "max", "pow")
TERNARY_OPS = ("clip", "where")
INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "**"}

CLAMP = 1e12
TINY = 1e-10


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not np.isfinite(v):
            raise ValueError("constants must be finite")
        object.__setattr__(self, "value", v)

    @property
    def children(self) -> tuple:
        return ()


@dataclass(frozen=True)
class Var:
    name: str

    @property
    def children(self) -> tuple:
        return ()


@dataclass(frozen=True)
class Unary:
    op: str
    child: "Expr"

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise ValueError(f"unknown unary op {self.op!r}")

    @property
    def children(self) -> tuple:
        return (self.child,)


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise ValueError(f"unknown binary op {self.op!r}")

    @property
    def children(self) -> tuple:
        return (self.left, self.right)


@dataclass(frozen=True)
class Ternary:
    op: str
    a: "Expr"
    b: "Expr"
    c: "Expr"

    def __post_init__(self):
        if self.op not in TERNARY_OPS:
            raise ValueError(f"unknown ternary op {self.op!r}")

    @property
    def children(self) -> tuple:
        return (self.a, self.b, self.c)


Expr = Union[Const, Var, Unary, Binary, Ternary]


def with_children(e: Expr, children: tuple) -> Expr:
    if isinstance(e, Unary):
        return Unary(e.op, *children)
    if isinstance(e, Binary):
        return Binary(e.op, *children)
    if isinstance(e, Ternary):
        return Ternary(e.op, *children)
    return e


def complexity(e: Expr) -> int:
    """Total node count."""
    return 1 + sum(complexity(c) for c in e.children)


def depth(e: Expr) -> int:
    return 1 + max((depth(c) for c in e.children), default=0)


def variables(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    out: set[str] = set()
    for c in e.children:
        out |= variables(c)
    return out


def subtrees(e: Expr, path: tuple = ()) -> Iterator[tuple[tuple, Expr]]:
    """Pre-order ``(path, node)`` pairs; a path is a tuple of child indices."""
    yield path, e
    for i, c in enumerate(e.children):
        yield from subtrees(c, path + (i,))


def get_at(e: Expr, path: tuple) -> Expr:
    for i in path:
        e = e.children[i]
    return e


def replace_at(e: Expr, path: tuple, new: Expr) -> Expr:
    if not path:
        return new
    kids = list(e.children)
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(e, tuple(kids))


# --- evaluation --------------------------------------------------------------------


def _clamp(x):
    return np.clip(x, -CLAMP, CLAMP)


def _safe_div(a, b):
    sgn = np.where(b >= 0, 1.0, -1.0)
    return _clamp(a / (b + sgn * TINY))


def _power(a, b):
    b_arr = np.asarray(b)
    is_int = (b_arr == np.round(b_arr)) & (np.abs(b_arr) <= 4)
    general = np.exp(np.minimum(b * np.log(np.abs(a) + TINY), 700.0))
    if not np.any(is_int):
        return _clamp(general)
    k = np.where(is_int, b_arr, 0.0).astype(np.int64)
    mag = np.power(a, np.abs(k))
    exact = np.where(k < 0, _safe_div(1.0, mag), mag)
    return _clamp(np.where(is_int, exact, general))


_UNARY = {
    "neg": lambda x: -x,
    "abs": np.abs,
    "log": lambda x: np.log(np.abs(x) + TINY),
    "exp": lambda x: _clamp(np.exp(np.minimum(x, 700.0))),
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
    "sin": np.sin,
    "cos": np.cos,
    "sgn": np.sign,
    "square": lambda x: _clamp(x * x),
}

_BINARY = {
    "add": lambda a, b: _clamp(a + b),
    "sub": lambda a, b: _clamp(a - b),
    "mul": lambda a, b: _clamp(a * b),
    "div": _safe_div,
    "min": np.minimum,
    "max": np.maximum,
    "pow": _power,
}


def _eval(e: Expr, env: Mapping[str, np.ndarray]):
    if isinstance(e, Const):
        return np.float64(e.value)
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Unary):
        return _UNARY[e.op](_eval(e.child, env))
    if isinstance(e, Binary):
        return _BINARY[e.op](_eval(e.left, env), _eval(e.right, env))
    a, b, c = (_eval(x, env) for x in e.children)
    if e.op == "clip":
        return np.minimum(np.maximum(a, b), c)
    return np.where(a > 0, b, c)


def eval_expr(e: Expr, bindings: Mapping[str, object]):
    """Evaluate with protected operators; total for finite bindings.

    Bindings may be scalars or broadcast-compatible arrays. Every intermediate
    is kept within ``[-1e12, 1e12]``.
    """
    env = {k: np.asarray(v, dtype=np.float64) for k, v in bindings.items()}
    missing = variables(e) - env.keys()
    if missing:
        raise KeyError(f"unbound variables: {sorted(missing)}")
    with np.errstate(all="ignore"):
        out = _clamp(_eval(e, env))
    return out


# --- printing ----------------------------------------------------------------------


def _fmt_const(v: float) -> str:
    text = repr(float(v))
    return f"({text})" if v < 0 or text.startswith("-") else text


def print_expr(e: Expr) -> str:
    """Fully parenthesised text that parses back to the same tree."""
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Binary) and e.op in INFIX:
        return f"({print_expr(e.left)} {INFIX[e.op]} {print_expr(e.right)})"
    args = ", ".join(print_expr(c) for c in e.children)
    return f"{e.op}({args})"

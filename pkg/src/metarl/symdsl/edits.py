"""Random trees and the mutation / crossover edits used by genetic programming."""

from __future__ import annotations

import numpy as np

from ..numcore import RngLike, as_generator
from .expr import (
    BINARY_OPS,
    TERNARY_OPS,
    UNARY_OPS,
    Binary,
    Const,
    Expr,
    Ternary,
    Unary,
    Var,
    complexity,
    get_at,
    replace_at,
    subtrees,
)
from .signature import Signature

SPECIAL_CONSTANTS = (1.0, 2.0, -1.0, 0.5)
MAX_TRIES = 20
EDITS = ("point_op", "replace_leaf", "insert_unary", "delete_unary", "perturb_const", "replace_subtree")


def random_constant(rng: np.random.Generator) -> Const:
    if rng.random() < 0.5:
        return Const(float(rng.normal()))
    return Const(SPECIAL_CONSTANTS[rng.integers(len(SPECIAL_CONSTANTS))])


def random_leaf(sig: Signature, rng: np.random.Generator) -> Expr:
    if rng.random() < 0.5:
        return Var(sig.names[rng.integers(len(sig.names))])
    return random_constant(rng)


def random_tree(sig: Signature, rng: RngLike, max_depth: int = 2) -> Expr:
    """Grow-method tree of depth at most ``max_depth`` (a leaf has depth 1)."""
    rng = as_generator(rng)
    if max_depth <= 1 or rng.random() < 0.3:
        return random_leaf(sig, rng)
    kind = rng.integers(3) if max_depth > 1 else 0
    sub = max_depth - 1
    if kind == 0:
        return Unary(UNARY_OPS[rng.integers(len(UNARY_OPS))], random_tree(sig, rng, sub))
    if kind == 1:
        op = BINARY_OPS[rng.integers(len(BINARY_OPS))]
        return Binary(op, random_tree(sig, rng, sub), random_tree(sig, rng, sub))
    op = TERNARY_OPS[rng.integers(len(TERNARY_OPS))]
    return Ternary(op, *(random_tree(sig, rng, sub) for _ in range(3)))


def _pick(rng: np.random.Generator, items: list):
    return items[rng.integers(len(items))] if items else None


def _apply_edit(kind: str, e: Expr, sig: Signature, rng: np.random.Generator) -> Expr | None:
    nodes = list(subtrees(e))
    if kind == "point_op":
        choice = _pick(rng, [(p, n) for p, n in nodes if n.children])
        if choice is None:
            return None
        path, node = choice
        pool = {Unary: UNARY_OPS, Binary: BINARY_OPS, Ternary: TERNARY_OPS}[type(node)]
        others = [op for op in pool if op != node.op]
        return replace_at(e, path, type(node)(_pick(rng, others), *node.children))
    if kind == "replace_leaf":
        path, _ = _pick(rng, [(p, n) for p, n in nodes if not n.children])
        return replace_at(e, path, random_leaf(sig, rng))
    if kind == "insert_unary":
        path, node = _pick(rng, nodes)
        return replace_at(e, path, Unary(_pick(rng, list(UNARY_OPS)), node))
    if kind == "delete_unary":
        choice = _pick(rng, [(p, n) for p, n in nodes if isinstance(n, Unary)])
        if choice is None:
            return None
        path, node = choice
        return replace_at(e, path, node.child)
    if kind == "perturb_const":
        choice = _pick(rng, [(p, n) for p, n in nodes if isinstance(n, Const)])
        if choice is None:
            return None
        path, node = choice
        sigma = 0.1 * (1.0 + abs(node.value))
        return replace_at(e, path, Const(node.value + sigma * rng.normal()))
    if kind == "replace_subtree":
        path, _ = _pick(rng, nodes)
        return replace_at(e, path, random_tree(sig, rng, 2))
    raise ValueError(f"unknown edit {kind!r}")


def mutate(e: Expr, sig: Signature, rng: RngLike, max_size: int) -> Expr:
    """Apply one uniformly chosen edit; retry when inapplicable or oversized."""
    rng = as_generator(rng)
    for _ in range(MAX_TRIES):
        out = _apply_edit(EDITS[rng.integers(len(EDITS))], e, sig, rng)
        if out is not None and complexity(out) <= max_size:
            return out
    return e


def crossover(a: Expr, b: Expr, rng: RngLike, max_size: int) -> Expr:
    """Replace a random subtree of ``a`` with a random subtree of ``b``."""
    rng = as_generator(rng)
    paths_a = [p for p, _ in subtrees(a)]
    donors = [n for _, n in subtrees(b)]
    for _ in range(MAX_TRIES):
        path = paths_a[rng.integers(len(paths_a))]
        donor = donors[rng.integers(len(donors))]
        out = replace_at(a, path, donor)
        if complexity(out) <= max_size:
            return out
    return a


__all__ = ["random_tree", "random_leaf", "random_constant", "mutate", "crossover", "get_at", "EDITS"]

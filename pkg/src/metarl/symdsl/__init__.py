"""Symbolic expression language: trees, text grammar, evaluation and GP edits."""

from .edits import crossover, mutate, random_tree
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
    eval_expr,
    print_expr,
    variables,
)
from .parser import DslError, DslSyntaxError, ExprTooLargeError, UnknownIdentifierError, parse
from .signature import (
    DRIFT_SIGNATURE,
    MOMENTUM_COEFFS,
    NO_FEATURES_SIGNATURE,
    OPEN_SIGNATURE,
    SIGNATURES,
    Signature,
    momentum_name,
)

__all__ = [
    "BINARY_OPS", "TERNARY_OPS", "UNARY_OPS", "Binary", "Const", "Expr", "Ternary", "Unary", "Var",
    "complexity", "eval_expr", "print_expr", "variables", "parse", "DslError", "DslSyntaxError",
    "ExprTooLargeError", "UnknownIdentifierError", "Signature", "DRIFT_SIGNATURE",
    "NO_FEATURES_SIGNATURE", "OPEN_SIGNATURE", "SIGNATURES", "MOMENTUM_COEFFS", "momentum_name",
    "mutate", "crossover", "random_tree",
]

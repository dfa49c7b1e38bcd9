"""Prompt construction and response parsing for the proposal loop."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from string import Template
from typing import Optional, Sequence

from ..symdsl import BINARY_OPS, TERNARY_OPS, UNARY_OPS, DslError, Expr, Signature, parse

PROMPT_KINDS = ("drift", "optimizer_ff")
ERROR_FEEDBACK = "Code not valid. Error:\n{error}\nPlease generate the next one."
FITNESS_FEEDBACK = "Fitness: {fitness}.\nPlease generate the next one."
NEXT_REQUEST = "Please generate the next one."


class ResponseFormatError(ValueError):
    """The model reply is not a JSON object with the required keys."""

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(message)


class ProposalValidationError(ValueError):
    """The proposed code does not parse or violates the algorithm's constraints."""


@dataclass
class ProposalRecord:
    name: str
    thought: str
    code: str
    expr: Optional[Expr] = None
    fitness: Optional[float] = None
    error: str = ""

    @property
    def valid(self) -> bool:
        return self.expr is not None and self.fitness is not None

    def to_dict(self) -> dict:
        return {"name": self.name, "thought": self.thought, "code": self.code,
                "fitness": self.fitness, "error": self.error}


def format_fitness(value: float) -> str:
    return repr(float(value)) if math.isfinite(value) else str(float(value))


def grammar_summary() -> str:
    return "\n".join([
        "- numbers, the input names listed below, parentheses",
        "- infix operators + - * / and ** (power); unary minus",
        "- one-argument functions: " + ", ".join(UNARY_OPS),
        "- two-argument functions: " + ", ".join(op for op in BINARY_OPS
                                                   if op not in ("add", "sub", "mul", "div", "pow")) + ", pow",
        "- three-argument functions: clip(x, lo, hi), where(cond, if_positive, otherwise)",
        "- log, division and power are protected: log(x) = log(|x| + 1e-10), division adds "
        "1e-10 away from zero, and results are clamped to [-1e12, 1e12]",
    ])


def _history_text(history: Sequence[ProposalRecord]) -> str:
    items = []
    for rec in history:
        fit = format_fitness(rec.fitness) if rec.fitness is not None else "invalid"
        items.append(json.dumps({"name": rec.name, "code": rec.code, "fitness": fit}))
    return "[\n" + ",\n".join(items) + "\n]"


def load_template(kind: str) -> Template:
    if kind not in PROMPT_KINDS:
        raise ValueError(f"unknown prompt kind {kind!r}")
    name = "drift.txt" if kind == "drift" else "optimizer.txt"
    text = resources.files("metarl.metallm").joinpath("templates", name).read_text()
    return Template(text)


def build_prompt(kind: str, sig: Signature, history: Sequence[ProposalRecord]) -> str:
    """Task prompt listing the language, every input description and all results so far."""
    if not history:
        raise ValueError("history must contain at least the warm-start record")
    return load_template(kind).substitute(
        grammar=grammar_summary(),
        variables=sig.describe(),
        history=_history_text(history),
    )


def _outermost_object(text: str) -> dict:
    start = text.find("{")
    end = text.rfind("}")
    if start < 0 or end <= start:
        raise ResponseFormatError("response contains no JSON object")
    try:
        data = json.loads(text[start : end + 1], strict=False)
    except json.JSONDecodeError as exc:
        raise ResponseFormatError(f"response JSON does not parse: {exc}") from exc
    if not isinstance(data, dict):
        raise ResponseFormatError("response JSON is not an object")
    return data


def parse_response(text: str, sig: Signature, max_size: Optional[int] = None) -> ProposalRecord:
    """Extract thought/name/code from a reply and parse the code against ``sig``."""
    data = _outermost_object(text)
    for key in ("thought", "name", "code"):
        if key not in data:
            raise ResponseFormatError(f'missing key "{key}"', key)
        if not isinstance(data[key], str):
            raise ResponseFormatError(f'key "{key}" must be a string', key)
    try:
        expr = parse(data["code"], sig, max_size)
    except DslError as exc:
        raise ProposalValidationError(str(exc)) from exc
    return ProposalRecord(data["name"], data["thought"], data["code"], expr)

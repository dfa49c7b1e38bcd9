"""The propose / evaluate loop with warm start, error feedback and transcript replay."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..symdsl import Expr, Signature, eval_expr, parse
from .client import ChatClient, Message, MockClient, TransportError
from .prompts import (
    ERROR_FEEDBACK,
    FITNESS_FEEDBACK,
    NEXT_REQUEST,
    ProposalRecord,
    ProposalValidationError,
    ResponseFormatError,
    build_prompt,
    format_fitness,
    parse_response,
)

MAX_CONSECUTIVE_FAILURES = 3


def check_drift_validity(expr: Expr, eps: float = 0.2, rng_seed: int = 0) -> Optional[str]:
    """Empirical drift checks: zero at ``r = 1`` and non-negative on a grid.

    Returns an explanation when a check fails, else None.
    """
    g = np.random.default_rng(rng_seed)
    A = np.concatenate([g.normal(0, 2, 256), np.linspace(-5, 5, 41)])
    at_one = eval_expr(expr, {"r": np.ones_like(A), "A": A, "eps": eps})
    at_one = np.broadcast_to(at_one, A.shape)
    worst = float(np.max(np.abs(at_one)))
    if worst > 1e-6:
        return f"drift must be zero at r = 1 for every advantage, but |D(1, A)| reaches {worst:.3g}"
    r, Ag = np.meshgrid(np.exp(np.linspace(-2, 2, 81)), np.linspace(-5, 5, 41))
    vals = np.broadcast_to(eval_expr(expr, {"r": r, "A": Ag, "eps": eps}), r.shape)
    lowest = float(vals.min())
    if lowest < -1e-9:
        i = np.unravel_index(np.argmin(vals), vals.shape)
        return (f"drift must be non-negative everywhere, but D({r[i]:.3g}, {Ag[i]:.3g}) = "
                f"{lowest:.3g}")
    return None


@dataclass
class LoopResult:
    best: ProposalRecord
    records: list[ProposalRecord]
    messages: list[Message]
    n_evaluated: int
    n_invalid: int
    aborted: bool = False
    abort_reason: str = ""
    rl_runs: int = 0
    env_steps: int = 0

    def transcript(self) -> dict:
        return {
            "messages": [m.to_dict() for m in self.messages],
            "records": [r.to_dict() for r in self.records],
            "best": self.best.to_dict(),
            "n_evaluated": self.n_evaluated,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "rl_runs": self.rl_runs,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.transcript(), indent=2))


def select_best(records: list[ProposalRecord]) -> ProposalRecord:
    """Highest fitness among evaluated records; later records win ties."""
    best = None
    for rec in records:
        if rec.fitness is None or math.isnan(rec.fitness):
            continue
        if best is None or rec.fitness >= best.fitness:
            best = rec
    if best is None:
        raise ValueError("no evaluated records")
    return best


def propose_loop(
    client: ChatClient,
    kind: str,
    sig: Signature,
    warm_start: ProposalRecord,
    evaluate: Callable[[Expr], float],
    budget: int,
    max_size: Optional[int] = None,
    eps: float = 0.2,
    rl_eval_seeds: int = 1,
    steps_per_run: int = 0,
) -> LoopResult:
    """Query, validate, evaluate and feed back until ``budget`` proposals are scored.

    ``warm_start.fitness`` must already be measured. Invalid replies get error
    feedback and do not use budget; after three consecutive failures one budget
    unit is forfeited. A transport failure aborts the loop with the best so far.
    """
    if warm_start.fitness is None:
        raise ValueError("warm start must carry a measured fitness")
    records = [warm_start]
    prompt = build_prompt(kind, sig, records) + "\n\n" + NEXT_REQUEST
    messages = [Message("user", prompt)]
    used = 0
    failures = 0
    n_invalid = 0
    aborted, reason = False, ""
    while used < budget:
        try:
            reply = client.complete(messages)
        except TransportError as exc:
            aborted, reason = True, str(exc)
            break
        messages.append(Message("assistant", reply))
        try:
            rec = parse_response(reply, sig, max_size)
            if kind == "drift":
                problem = check_drift_validity(rec.expr, eps)
                if problem is not None:
                    raise ProposalValidationError(problem)
        except (ResponseFormatError, ProposalValidationError) as exc:
            n_invalid += 1
            failures += 1
            messages.append(Message("user", ERROR_FEEDBACK.format(error=exc)))
            if failures >= MAX_CONSECUTIVE_FAILURES:
                used += 1
                failures = 0
            continue
        failures = 0
        rec.fitness = float(evaluate(rec.expr))
        records.append(rec)
        used += 1
        messages.append(Message("user", FITNESS_FEEDBACK.format(fitness=format_fitness(rec.fitness))))
    n_evaluated = len(records) - 1
    runs = (n_evaluated + 1) * rl_eval_seeds
    return LoopResult(select_best(records), records, messages, n_evaluated, n_invalid, aborted,
                      reason, runs, runs * steps_per_run)


def replay_transcript(path, kind: str, sig: Signature, warm_start: ProposalRecord, budget: int,
                      max_size: Optional[int] = None, eps: float = 0.2) -> LoopResult:
    """Re-run a saved loop with the recorded replies and fitnesses."""
    data = json.loads(Path(path).read_text())
    replies = [m["content"] for m in data["messages"] if m["role"] == "assistant"]
    fitness_by_code = {r["code"]: r["fitness"] for r in data["records"][1:]}

    def lookup(expr: Expr) -> float:
        for code, fit in fitness_by_code.items():
            if parse(code, sig) == expr:
                return float(fit)
        raise KeyError("expression missing from transcript")

    return propose_loop(MockClient(replies), kind, sig, warm_start, lookup, budget, max_size, eps)

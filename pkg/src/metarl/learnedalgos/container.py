"""Tagged JSON containers for drift functions and update rules.

Network parameters are embedded as base64 of the numcore checkpoint bytes and
symbolic algorithms as DSL text.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

from ..numcore import params_from_bytes, params_to_bytes
from ..symdsl import print_expr
from .drift import DriftFunction
from .optim import UpdateRule


def _encode_params(params) -> str:
    return base64.b64encode(params_to_bytes(params)).decode("ascii")


def _decode_params(text: str):
    return params_from_bytes(base64.b64decode(text))


def drift_to_dict(d: DriftFunction) -> dict:
    out = {"type": "drift", "kind": d.kind, "eps": d.eps}
    if d.kind == "blackbox":
        out["checkpoint"] = _encode_params(d.params)
    elif d.kind == "symbolic":
        out["expr"] = print_expr(d.expr)
    return out


def drift_from_dict(data: dict) -> DriftFunction:
    if data.get("type") != "drift":
        raise ValueError("not a drift container")
    kind = data["kind"]
    eps = float(data.get("eps", 0.2))
    if kind == "ppo_clip":
        return DriftFunction.ppo(eps)
    if kind == "blackbox":
        return DriftFunction.blackbox(_decode_params(data["checkpoint"]), eps)
    if kind == "symbolic":
        return DriftFunction.symbolic(data["expr"], eps)
    raise ValueError(f"unknown drift kind {kind!r}")


def rule_to_dict(rule: UpdateRule) -> dict:
    out = {"type": "update_rule", "kind": rule.kind, "lr": rule.lr, "anneal": rule.anneal}
    if rule.kind == "adam":
        out.update(beta1=rule.beta1, beta2=rule.beta2, eps_adam=rule.eps_adam)
    elif rule.kind == "learned_blackbox":
        out.update(
            checkpoint=_encode_params(rule.params),
            feature_set=rule.feature_set,
            output_scale=rule.output_scale,
            noise_scale=rule.noise_scale,
        )
    elif rule.kind == "symbolic":
        out.update(expr=print_expr(rule.expr), feature_set=rule.feature_set)
    return out


def rule_from_dict(data: dict) -> UpdateRule:
    if data.get("type") != "update_rule":
        raise ValueError("not an update-rule container")
    kind = data["kind"]
    if kind == "sgd":
        return UpdateRule.sgd(data["lr"], data.get("anneal", True))
    if kind == "adam":
        return UpdateRule.adam(data["lr"], data["beta1"], data["beta2"], data["eps_adam"],
                               data.get("anneal", True))
    if kind == "learned_blackbox":
        return UpdateRule.learned(_decode_params(data["checkpoint"]), data["feature_set"],
                                  data["output_scale"], data["noise_scale"])
    if kind == "symbolic":
        return UpdateRule.symbolic(data["expr"], data["lr"], data["feature_set"])
    raise ValueError(f"unknown update rule kind {kind!r}")


def to_dict(obj) -> dict:
    if isinstance(obj, DriftFunction):
        return drift_to_dict(obj)
    if isinstance(obj, UpdateRule):
        return rule_to_dict(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def from_dict(data: dict):
    return drift_from_dict(data) if data.get("type") == "drift" else rule_from_dict(data)


def save_algorithm(path, obj) -> None:
    Path(path).write_text(json.dumps(to_dict(obj), indent=2, sort_keys=True))


def load_algorithm(path):
    return from_dict(json.loads(Path(path).read_text()))

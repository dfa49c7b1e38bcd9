"""Variable signatures for the contexts in which expressions are evaluated."""

from __future__ import annotations

from dataclasses import dataclass

MOMENTUM_COEFFS = (0.1, 0.5, 0.9, 0.99, 0.999, 0.9999)


def momentum_name(beta: float) -> str:
    """``0.99 -> "m_0_99"``."""
    return "m_" + repr(float(beta)).replace(".", "_")


@dataclass(frozen=True)
class Signature:
    """Ordered variable names with short descriptions for prompts."""

    names: tuple[str, ...]
    descriptions: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "descriptions", tuple(self.descriptions))
        if not self.names:
            raise ValueError("signature must declare at least one variable")
        if len(set(self.names)) != len(self.names):
            raise ValueError("variable names must be unique")
        if len(self.descriptions) != len(self.names):
            raise ValueError("one description per variable")

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.names)

    def describe(self) -> str:
        return "\n".join(f"- {n}: {d}" for n, d in zip(self.names, self.descriptions))


DRIFT_SIGNATURE = Signature(
    ("r", "A", "eps"),
    (
        "ratio of new to old action probability, always positive",
        "advantage estimate of the sampled action",
        "clipping range hyperparameter, 0.2 by default",
    ),
)

_MOMENTA = tuple(
    (momentum_name(b), f"momentum with coefficient {b}, updated as m = {b} * g + (1 - {b}) * m")
    for b in MOMENTUM_COEFFS
)

NO_FEATURES_SIGNATURE = Signature(
    ("p", "g") + tuple(n for n, _ in _MOMENTA) + ("lr",),
    ("current parameter value", "gradient of the loss for this parameter")
    + tuple(d for _, d in _MOMENTA)
    + ("base learning rate, linearly annealed to zero over training",),
)

OPEN_SIGNATURE = Signature(
    ("p", "g") + tuple(n for n, _ in _MOMENTA)
    + ("l_p", "b_p", "t_p", "dorm", "rand", "lr", "iteration"),
    ("current parameter value", "gradient of the loss for this parameter")
    + tuple(d for _, d in _MOMENTA)
    + (
        "layer proportion: 0 in the first layer, rising linearly to 1 in the last",
        "batch proportion: fraction of the current update's epochs and minibatches done",
        "training proportion: fraction of the total training budget consumed",
        "dormancy of the neuron this parameter feeds, between 0 and the layer width",
        "a fresh standard normal sample per parameter",
        "base learning rate, linearly annealed to zero over training",
        "number of optimizer steps taken so far",
    ),
)

SIGNATURES = {"drift": DRIFT_SIGNATURE, "no_features": NO_FEATURES_SIGNATURE, "open": OPEN_SIGNATURE}

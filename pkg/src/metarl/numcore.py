"""Deterministic numeric primitives shared by every black-box component.

MLPs are stored as a flat float64 vector plus an :class:`MlpSpec`. Layer ``i``
occupies a ``(w_i, w_{i+1})`` row-major weight block followed (when biases are
enabled) by a ``w_{i+1}`` bias block. Forward passes compute ``h @ W + b``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "relu")


class ShapeError(ValueError):
    """Raised when an input does not match the width a layer expects."""


class CacheMismatchError(ValueError):
    """Raised when a backward pass is given a cache from different parameters."""


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]

    def n_params(self, bias_enabled: bool) -> int:
        w = self.layer_widths
        n = sum(w[i] * w[i + 1] for i in range(len(w) - 1))
        if bias_enabled:
            n += sum(w[1:])
        return n

    def layer_slices(self, bias_enabled: bool) -> list[tuple[slice, slice | None]]:
        """(weight slice, bias slice) for each layer in the flat vector."""
        out = []
        pos = 0
        w = self.layer_widths
        for i in range(len(w) - 1):
            nw = w[i] * w[i + 1]
            ws = slice(pos, pos + nw)
            pos += nw
            bs = None
            if bias_enabled:
                bs = slice(pos, pos + w[i + 1])
                pos += w[i + 1]
            out.append((ws, bs))
        return out


@dataclass(frozen=True, eq=False)
class MlpParams:
    spec: MlpSpec
    values: np.ndarray
    bias_enabled: bool = True

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ShapeError("parameter values must be a flat vector")
        expected = self.spec.n_params(self.bias_enabled)
        if values.shape[0] != expected:
            raise ShapeError(
                f"spec {self.spec.layer_widths} (bias={self.bias_enabled}) needs "
                f"{expected} values, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "MlpParams":
        return MlpParams(self.spec, np.array(values, dtype=np.float64), self.bias_enabled)

    @cached_property
    def _layers(self) -> list[tuple[np.ndarray, np.ndarray | None]]:
        w = self.spec.layer_widths
        out = []
        for i, (ws, bs) in enumerate(self.spec.layer_slices(self.bias_enabled)):
            W = self.values[ws].reshape(w[i], w[i + 1])
            b = self.values[bs] if bs is not None else None
            out.append((W, b))
        return out

    def layers(self) -> list[tuple[np.ndarray, np.ndarray | None]]:
        return self._layers

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class MlpCache:
    """Activations recorded by :func:`mlp_forward` for the backward pass."""

    spec: MlpSpec
    values: np.ndarray
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    batched: bool = True


def _activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "tanh":
        return np.tanh(x)
    return x


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, MlpCache]:
    """Run the network on one input vector or a ``(batch, in)`` matrix."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    h = x if batched else x[None, :]
    if h.ndim != 2 or h.shape[1] != params.spec.input_width:
        raise ShapeError(
            f"layer 0 expects input width {params.spec.input_width}, got shape {x.shape}"
        )
    cache = MlpCache(params.spec, params.values, batched=batched)
    layers = params.layers()
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        cache.inputs.append(h)
        z = h @ W
        if b is not None:
            z = z + b
        act = params.spec.output_activation if i == last else params.spec.hidden_activation
        h = _activate(z, act)
        cache.pre.append(z)
        cache.post.append(h)
    out = h if batched else h[0]
    return out, cache


def mlp_predict(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Batched forward pass without recording a cache (rollouts)."""
    h = np.asarray(x, dtype=np.float64)
    layers = params.layers()
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        h = h @ W
        if b is not None:
            h += b
        act = params.spec.output_activation if i == last else params.spec.hidden_activation
        if act == "relu":
            np.maximum(h, 0.0, out=h)
        elif act == "tanh":
            np.tanh(h, out=h)
    return h


def mlp_backward(
    params: MlpParams, cache: MlpCache, upstream_grad
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream_grad * output)`` w.r.t. parameters and input.

    For batched caches the parameter gradient is summed over the batch.
    """
    if cache.spec != params.spec or cache.values is not params.values:
        raise CacheMismatchError("cache was produced by a different parameter set")
    g = np.asarray(upstream_grad, dtype=np.float64)
    if not cache.batched:
        g = g[None, :]
    if g.shape != cache.post[-1].shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != output {cache.post[-1].shape}")
    grads = np.zeros(len(params.values))
    slices = params.spec.layer_slices(params.bias_enabled)
    layers = params.layers()
    last = len(layers) - 1
    for i in range(last, -1, -1):
        W, _ = layers[i]
        act = params.spec.output_activation if i == last else params.spec.hidden_activation
        if act == "relu":
            g = g * (cache.pre[i] > 0)
        elif act == "tanh":
            g = g * (1.0 - cache.post[i] ** 2)
        ws, bs = slices[i]
        grads[ws] = (cache.inputs[i].T @ g).ravel()
        if bs is not None:
            grads[bs] = g.sum(axis=0)
        g = g @ W.T
    input_grad = g if cache.batched else g[0]
    return grads, input_grad


def clip_global_norm(grads, max_norm: float) -> np.ndarray:
    """Rescale ``grads`` so that its L2 norm does not exceed ``max_norm``."""
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    grads = np.asarray(grads, dtype=np.float64)
    if not np.all(np.isfinite(grads)):
        raise ValueError("cannot clip non-finite gradients")
    norm = float(np.sqrt(np.dot(grads, grads)))
    if norm <= max_norm:
        return grads.copy()
    return grads * (max_norm / norm)


def orthogonal(shape: tuple[int, int], gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(
    spec: MlpSpec,
    rng,
    bias_enabled: bool = True,
    hidden_gain: float = np.sqrt(2.0),
    output_gain: float = 1.0,
) -> MlpParams:
    """Orthogonal weights with per-layer gains, zero biases."""
    rng = as_generator(rng)
    w = spec.layer_widths
    values = np.zeros(spec.n_params(bias_enabled))
    for i, (ws, _) in enumerate(spec.layer_slices(bias_enabled)):
        gain = output_gain if i == spec.n_layers - 1 else hidden_gain
        values[ws] = orthogonal((w[i], w[i + 1]), gain, rng).ravel()
    return MlpParams(spec, values, bias_enabled)


# --- reproducible random streams -------------------------------------------------

_MASK64 = (1 << 64) - 1


def derive_id(*keys) -> int:
    """Stable 64-bit id for an arbitrary tuple of str/int keys."""
    h = hashlib.blake2b(repr(keys).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream: ``(seed, stream_id, counter)`` fixes every draw.

    Backed by the Philox counter-based generator, keyed by ``(seed, stream_id)``.
    """

    seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id", "counter"):
            v = getattr(self, name)
            object.__setattr__(self, name, int(v) & _MASK64)

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        counter = np.array([self.counter, 0, 0, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def child(self, *keys) -> "RngStream":
        return RngStream(self.seed, derive_id(self.stream_id, *keys), 0)

    def advance(self, n: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.counter + n)


RngLike = Union[RngStream, np.random.Generator, int]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


# --- checkpoint format ------------------------------------------------------------
#
#   bytes 0..7   magic b"MLPCKPT1"
#   bytes 8..11  little-endian uint32 header length H
#   next H bytes UTF-8 JSON header: layer_widths, hidden_activation,
#                output_activation, bias_enabled, n_values
#   remainder    n_values little-endian float64

CHECKPOINT_MAGIC = b"MLPCKPT1"


def params_to_bytes(params: MlpParams) -> bytes:
    header = json.dumps(
        {
            "layer_widths": list(params.spec.layer_widths),
            "hidden_activation": params.spec.hidden_activation,
            "output_activation": params.spec.output_activation,
            "bias_enabled": params.bias_enabled,
            "n_values": int(len(params.values)),
        },
        sort_keys=True,
    ).encode()
    body = params.values.astype("<f8").tobytes()
    return CHECKPOINT_MAGIC + struct.pack("<I", len(header)) + header + body


def params_from_bytes(blob: bytes) -> MlpParams:
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not an MLP checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + hlen].decode())
    values = np.frombuffer(blob[12 + hlen :], dtype="<f8").astype(np.float64)
    if values.shape[0] != header["n_values"]:
        raise ValueError("checkpoint truncated")
    spec = MlpSpec(
        tuple(header["layer_widths"]), header["hidden_activation"], header["output_activation"]
    )
    return MlpParams(spec, values, bool(header["bias_enabled"]))


def save_params(path, params: MlpParams) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path) -> MlpParams:
    return params_from_bytes(Path(path).read_bytes())


def halved_spec(spec: MlpSpec) -> MlpSpec:
    """Hidden widths rounded-up halves; input and output widths are fixed by the interface."""
    w = spec.layer_widths
    hidden = tuple(-(-x // 2) for x in w[1:-1])
    return MlpSpec((w[0],) + hidden + (w[-1],), spec.hidden_activation, spec.output_activation)

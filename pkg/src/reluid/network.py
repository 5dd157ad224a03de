"""Fully-connected ReLU networks with reverse layer indexing.

Layers are numbered from the input (``K``) down to the output (``0``).
``M^k`` maps layer ``k+1`` to layer ``k`` and has shape ``(n_k, n_{k+1})``;
rows are output neurons.  Weights are stored input side first, i.e.
``weights[0]`` is ``M^{K-1}`` and ``weights[-1]`` is ``M^0``.  Most ML
formats use the opposite order, so always go through :meth:`NetworkParams.weight`
when a layer index is at hand.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Dimensions of an input or a parameter set do not match."""


class NetworkFormatError(ValueError):
    """A serialized network document is malformed."""


@dataclass(frozen=True)
class Architecture:
    """Depth ``K`` and widths ``[n_K, ..., n_0]``."""

    widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if len(widths) < 3:
            raise ShapeError("a network needs K >= 2, i.e. at least 3 widths")
        if any(w < 1 for w in widths):
            raise ShapeError(f"all widths must be >= 1, got {widths}")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    def width(self, k: int) -> int:
        """Number of neurons ``n_k`` of layer ``k``."""
        if not 0 <= k <= self.depth:
            raise IndexError(f"layer {k} outside [0, {self.depth}]")
        return self.widths[self.depth - k]

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    @classmethod
    def parse(cls, text: str) -> "Architecture":
        """Parse ``"3-3-2-1"`` (input first)."""
        return cls(tuple(int(t) for t in text.replace(",", "-").split("-") if t))

    def __str__(self):
        return "-".join(str(w) for w in self.widths)


class NetworkParams:
    """Immutable parameters ``(M, b)`` of a ReLU network.

    Parameters
    ----------
    weights : sequence of arrays
        ``[M^{K-1}, ..., M^0]``.
    biases : sequence of arrays
        ``[b^{K-1}, ..., b^0]``.
    """

    __slots__ = ("arch", "weights", "biases")

    def __init__(self, weights: Sequence, biases: Sequence):
        if len(weights) != len(biases):
            raise ShapeError("need as many bias vectors as weight matrices")
        if len(weights) < 2:
            raise ShapeError("a network needs K >= 2 layers")
        ws, bs = [], []
        for idx, (w, b) in enumerate(zip(weights, biases)):
            w = np.array(w, dtype=float, ndmin=2)
            b = np.array(b, dtype=float).reshape(-1)
            if w.ndim != 2:
                raise ShapeError(f"weight {idx} is not a matrix")
            if b.shape[0] != w.shape[0]:
                raise ShapeError(
                    f"bias {idx} has length {b.shape[0]}, weight has {w.shape[0]} rows")
            if idx > 0 and w.shape[1] != ws[-1].shape[0]:
                raise ShapeError(
                    f"weight {idx} has {w.shape[1]} columns, previous layer has "
                    f"{ws[-1].shape[0]} neurons")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ShapeError(f"layer {idx} has non-finite entries")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        widths = [ws[0].shape[1]] + [w.shape[0] for w in ws]
        object.__setattr__(self, "arch", Architecture(tuple(widths)))
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    def __setattr__(self, name, value):
        raise AttributeError("NetworkParams is immutable")

    @classmethod
    def from_layers(cls, layers: dict[int, tuple]) -> "NetworkParams":
        """Build from ``{k: (M^k, b^k)}`` keyed by paper layer index."""
        depth = max(layers) + 1
        if sorted(layers) != list(range(depth)):
            raise ShapeError("layers must be numbered 0..K-1")
        ordered = [layers[k] for k in range(depth - 1, -1, -1)]
        return cls([m for m, _ in ordered], [b for _, b in ordered])

    @classmethod
    def zeros(cls, arch: Architecture) -> "NetworkParams":
        K = arch.depth
        return cls([np.zeros((arch.width(k), arch.width(k + 1))) for k in range(K - 1, -1, -1)],
                   [np.zeros(arch.width(k)) for k in range(K - 1, -1, -1)])

    @property
    def depth(self) -> int:
        return self.arch.depth

    def weight(self, k: int) -> np.ndarray:
        """``M^k``."""
        return self.weights[self._slot(k)]

    def bias(self, k: int) -> np.ndarray:
        """``b^k``."""
        return self.biases[self._slot(k)]

    def _slot(self, k: int) -> int:
        if not 0 <= k < self.depth:
            raise IndexError(f"no weight layer {k} in a depth-{self.depth} network")
        return self.depth - 1 - k

    def replace_layer(self, k: int, weight=None, bias=None) -> "NetworkParams":
        ws, bs = list(self.weights), list(self.biases)
        i = self._slot(k)
        if weight is not None:
            ws[i] = weight
        if bias is not None:
            bs[i] = bias
        return NetworkParams(ws, bs)

    def allclose(self, other: "NetworkParams", atol: float = 0.0) -> bool:
        if self.arch != other.arch:
            return False
        return all(np.allclose(a, b, rtol=0, atol=atol)
                   for a, b in zip(self.weights + self.biases, other.weights + other.biases))

    def max_abs_diff(self, other: "NetworkParams") -> float:
        if self.arch != other.arch:
            raise ShapeError("architectures differ")
        return max(float(np.max(np.abs(a - b)))
                   for a, b in zip(self.weights + self.biases, other.weights + other.biases))

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return self.allclose(other)

    __hash__ = None

    def __repr__(self):
        return f"NetworkParams(arch={self.arch})"

    def __call__(self, x):
        return forward(self, x)


def relu(z):
    return np.maximum(z, 0.0)


def _as_batch(x, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    x = np.atleast_2d(x) if x.ndim == 1 else (x.reshape(1, 1) if x.ndim == 0 else x)
    if x.shape[-1] != dim:
        raise ShapeError(f"expected points of dimension {dim}, got {x.shape[-1]}")
    return x, single


def _layer(params: NetworkParams, k: int, y: np.ndarray) -> np.ndarray:
    z = y @ params.weight(k).T + params.bias(k)
    return z if k == 0 else relu(z)


def forward(params: NetworkParams, x) -> np.ndarray:
    """Evaluate ``f_{M,b}`` at one point or a batch of shape ``(N, n_K)``."""
    return eval_f_k(params, 0, x)


def eval_f_k(params: NetworkParams, k: int, x) -> np.ndarray:
    """``f_k = h_k o ... o h_{K-1}``; ``f_K`` is the identity."""
    K = params.depth
    if not 0 <= k <= K:
        raise IndexError(f"k={k} outside [0, {K}]")
    y, single = _as_batch(x, params.arch.n_in)
    for layer in range(K - 1, k - 1, -1):
        y = _layer(params, layer, y)
    return y[0] if single else y


def eval_g_k(params: NetworkParams, k: int, y) -> np.ndarray:
    """``g_k = h_0 o ... o h_{k-1}``; ``g_0`` is the identity."""
    K = params.depth
    if not 0 <= k <= K:
        raise IndexError(f"k={k} outside [0, {K}]")
    z, single = _as_batch(y, params.arch.width(k))
    for layer in range(k - 1, -1, -1):
        z = _layer(params, layer, z)
    return z[0] if single else z


def activation_pattern(params: NetworkParams, x) -> tuple[tuple[int, ...], ...]:
    """Bits ``s^k`` for hidden layers ``K-1, ..., 1``; a zero pre-activation is active."""
    x, single = _as_batch(x, params.arch.n_in)
    if not single:
        raise ShapeError("activation_pattern takes a single point")
    return _pattern_from(params, params.depth, x[0])


def _pattern_from(params: NetworkParams, k: int, y: np.ndarray) -> tuple[tuple[int, ...], ...]:
    bits = []
    for layer in range(k - 1, 0, -1):
        z = params.weight(layer) @ y + params.bias(layer)
        s = z >= 0
        bits.append(tuple(int(v) for v in s))
        y = np.where(s, z, 0.0)
    return tuple(bits)


def tail_pattern(params: NetworkParams, k: int, y) -> tuple[tuple[int, ...], ...]:
    """Activation bits of the hidden layers inside ``g_k`` (``k-1, ..., 1``) at ``y``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != params.arch.width(k):
        raise ShapeError(f"expected a point of dimension {params.arch.width(k)}")
    return _pattern_from(params, k, y)


# -- serialization ---------------------------------------------------------

def to_document(params: NetworkParams) -> dict:
    K = params.depth
    return {
        "depth": K,
        "widths": list(params.arch.widths),
        "layers": [
            {"k": k, "weights": params.weight(k).tolist(), "bias": params.bias(k).tolist()}
            for k in range(K - 1, -1, -1)
        ],
    }


def from_document(doc: dict) -> NetworkParams:
    try:
        depth = int(doc["depth"])
        widths = [int(w) for w in doc["widths"]]
        layers = doc["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkFormatError(f"missing or malformed field: {exc}") from exc
    arch = Architecture(tuple(widths))
    if arch.depth != depth:
        raise ShapeError(f"depth {depth} does not match {len(widths)} widths")
    by_k = {}
    for layer in layers:
        try:
            k = int(layer["k"])
            by_k[k] = (layer["weights"], layer["bias"])
        except (KeyError, TypeError, ValueError) as exc:
            raise NetworkFormatError(f"malformed layer entry: {exc}") from exc
    if sorted(by_k) != list(range(depth)):
        raise NetworkFormatError(f"layers must cover k = 0..{depth - 1}")
    for k, (w, b) in by_k.items():
        w = np.array(w, dtype=float)
        if w.ndim != 2 or w.shape != (arch.width(k), arch.width(k + 1)):
            raise ShapeError(
                f"layer {k}: weight shape {w.shape} != {(arch.width(k), arch.width(k + 1))}")
        if np.asarray(b, dtype=float).shape != (arch.width(k),):
            raise ShapeError(f"layer {k}: bias length mismatch")
    return NetworkParams.from_layers(by_k)


def serialize(params: NetworkParams) -> bytes:
    # json writes floats with repr(), the shortest round-tripping form
    return json.dumps(to_document(params), allow_nan=False, indent=1).encode()


def deserialize(data: bytes | str) -> NetworkParams:
    try:
        doc = json.loads(data, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(str(exc)) from exc
    if not isinstance(doc, dict):
        raise NetworkFormatError("network document must be a JSON object")
    return from_document(doc)


def _reject_constant(name):
    raise ShapeError(f"non-finite entry {name}")


def load(path) -> NetworkParams:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def save(params: NetworkParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(params))

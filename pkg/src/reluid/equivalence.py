"""Permutation and positive rescaling of hidden neurons.

A witness holds, for every layer ``k = 0..K``, a permutation ``perms[k]``
(``perms[k][j]`` is the image of neuron ``j``) and a positive scale vector
``scales[k]``.  Applying it sends ``M^k[i, j]`` to position
``(perms[k][i], perms[k+1][j])`` with value ``scales[k][i] / scales[k+1][j] * M^k[i, j]``
and ``b^k[i]`` to position ``perms[k][i]`` with value ``scales[k][i] * b^k[i]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .network import Architecture, NetworkParams, ShapeError

DEFAULT_TOL = 1e-6


class NormalizationImpossible(ValueError):
    """A hidden neuron has an all-zero incoming weight row."""


class WitnessError(ValueError):
    """Witness is inconsistent with an architecture or with the group axioms."""


@dataclass(frozen=True)
class EquivalenceWitness:
    perms: tuple[np.ndarray, ...]
    scales: tuple[np.ndarray, ...]

    def __post_init__(self):
        perms = tuple(np.asarray(p, dtype=np.intp).reshape(-1) for p in self.perms)
        scales = tuple(np.asarray(s, dtype=float).reshape(-1) for s in self.scales)
        if len(perms) != len(scales) or len(perms) < 3:
            raise WitnessError("need K+1 permutations and K+1 scale vectors, K >= 2")
        for k, (p, s) in enumerate(zip(perms, scales)):
            if p.shape != s.shape:
                raise WitnessError(f"layer {k}: permutation and scales differ in size")
            if not np.array_equal(np.sort(p), np.arange(p.size)):
                raise WitnessError(f"layer {k}: {p.tolist()} is not a permutation")
            if not np.all(np.isfinite(s)) or np.any(s <= 0):
                raise WitnessError(f"layer {k}: scales must be finite and > 0")
        for k in (0, len(perms) - 1):
            if not np.array_equal(perms[k], np.arange(perms[k].size)):
                raise WitnessError(f"layer {k} must keep the identity permutation")
            if not np.all(scales[k] == 1.0):
                raise WitnessError(f"layer {k} must keep unit scales")
        for a in perms + scales:
            a.setflags(write=False)
        object.__setattr__(self, "perms", perms)
        object.__setattr__(self, "scales", scales)

    @property
    def depth(self) -> int:
        return len(self.perms) - 1

    @property
    def widths(self) -> tuple[int, ...]:
        """Input first, like :class:`Architecture`."""
        return tuple(p.size for p in reversed(self.perms))

    @classmethod
    def identity(cls, arch: Architecture) -> "EquivalenceWitness":
        K = arch.depth
        return cls(tuple(np.arange(arch.width(k)) for k in range(K + 1)),
                   tuple(np.ones(arch.width(k)) for k in range(K + 1)))

    def is_identity(self, tol: float = 0.0) -> bool:
        return all(np.array_equal(p, np.arange(p.size)) for p in self.perms) and all(
            np.max(np.abs(s - 1.0)) <= tol for s in self.scales)

    def close_to(self, other: "EquivalenceWitness", tol: float = 1e-12) -> bool:
        if self.widths != other.widths:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.perms, other.perms)) and all(
            np.allclose(a, b, rtol=tol, atol=0) for a, b in zip(self.scales, other.scales))

    def to_document(self) -> dict:
        return {"perms": [p.tolist() for p in self.perms],
                "scales": [s.tolist() for s in self.scales]}

    @classmethod
    def from_document(cls, doc: dict) -> "EquivalenceWitness":
        try:
            return cls(tuple(doc["perms"]), tuple(doc["scales"]))
        except (KeyError, TypeError) as exc:
            raise WitnessError(f"malformed witness document: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_document())

    @classmethod
    def loads(cls, text: str) -> "EquivalenceWitness":
        return cls.from_document(json.loads(text))


def _check_sizes(arch: Architecture, w: EquivalenceWitness):
    if w.widths != arch.widths:
        raise WitnessError(f"witness widths {w.widths} do not match architecture {arch.widths}")


def apply_transform(params: NetworkParams, w: EquivalenceWitness) -> NetworkParams:
    """Image of ``params`` under the witness."""
    _check_sizes(params.arch, w)
    layers = {}
    for k in range(params.depth):
        M, b = params.weight(k), params.bias(k)
        pk, pk1 = w.perms[k], w.perms[k + 1]
        lk, lk1 = w.scales[k], w.scales[k + 1]
        Mt = np.empty_like(M)
        Mt[np.ix_(pk, pk1)] = lk[:, None] * M / lk1[None, :]
        bt = np.empty_like(b)
        bt[pk] = lk * b
        layers[k] = (Mt, bt)
    return NetworkParams.from_layers(layers)


def compose_witness(w1: EquivalenceWitness, w2: EquivalenceWitness) -> EquivalenceWitness:
    """Witness of "apply ``w1``, then ``w2``"."""
    if w1.widths != w2.widths:
        raise WitnessError("witness sizes differ")
    perms = tuple(p2[p1] for p1, p2 in zip(w1.perms, w2.perms))
    scales = tuple(s2[p1] * s1 for p1, s1, s2 in zip(w1.perms, w1.scales, w2.scales))
    return EquivalenceWitness(perms, scales)


def invert_witness(w: EquivalenceWitness) -> EquivalenceWitness:
    perms, scales = [], []
    for p, s in zip(w.perms, w.scales):
        inv = np.empty_like(p)
        inv[p] = np.arange(p.size)
        si = np.empty_like(s)
        si[p] = 1.0 / s
        perms.append(inv)
        scales.append(si)
    return EquivalenceWitness(tuple(perms), tuple(scales))


def normalize(params: NetworkParams) -> tuple[NetworkParams, EquivalenceWitness]:
    """Rescale hidden neurons so every hidden weight row has unit norm.

    Returns
    -------
    normalized : NetworkParams
    witness : EquivalenceWitness
        Maps ``params`` to ``normalized``; all permutations are identities.
    """
    K = params.depth
    arch = params.arch
    scales = [None] * (K + 1)
    scales[K] = np.ones(arch.width(K))
    for k in range(K - 1, 0, -1):
        rows = params.weight(k) / scales[k + 1][None, :]
        norms = np.linalg.norm(rows, axis=1)
        if np.any(norms == 0):
            bad = np.flatnonzero(norms == 0).tolist()
            raise NormalizationImpossible(f"layer {k}: zero weight rows {bad}")
        scales[k] = 1.0 / norms
    scales[0] = np.ones(arch.width(0))
    w = EquivalenceWitness(tuple(np.arange(arch.width(k)) for k in range(K + 1)), tuple(scales))
    return apply_transform(params, w), w


def _match_rows(A: np.ndarray, a: np.ndarray, B: np.ndarray, b: np.ndarray, tol: float):
    """Optimal assignment of rows ``(A, a)`` onto ``(B, b)``; None if any pair exceeds tol."""
    cost = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2) + np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    scale = 1.0 + np.maximum(np.abs(a[rows]), np.abs(b[cols]))
    if np.any(cost[rows, cols] > tol * scale):
        return None
    perm = np.empty(A.shape[0], dtype=np.intp)
    perm[rows] = cols
    return perm


def _param_scale(p: NetworkParams) -> float:
    return max(1.0, max(float(np.max(np.abs(a))) for a in p.weights + p.biases))


def check_equivalent(p1: NetworkParams, p2: NetworkParams,
                     tol: float = DEFAULT_TOL) -> EquivalenceWitness | None:
    """Find a witness taking ``p1`` to ``p2``, or return None.

    Both networks are normalized, then hidden rows are matched layer by layer
    from the input side, carrying the column permutation already fixed.
    """
    if p1.arch != p2.arch:
        raise ShapeError(f"architectures differ: {p1.arch} vs {p2.arch}")
    arch = p1.arch
    K = arch.depth
    n1, w1 = normalize(p1)
    n2, w2 = normalize(p2)
    perms = [None] * (K + 1)
    perms[K] = np.arange(arch.width(K))
    for k in range(K - 1, 0, -1):
        M = np.empty_like(n1.weight(k))
        M[:, perms[k + 1]] = n1.weight(k)
        perm = _match_rows(M, n1.bias(k), n2.weight(k), n2.bias(k), tol)
        if perm is None:
            return None
        perms[k] = perm
    M0 = np.empty_like(n1.weight(0))
    M0[:, perms[1]] = n1.weight(0)
    out_scale = 1.0 + max(float(np.max(np.abs(n2.weight(0)))), float(np.max(np.abs(n2.bias(0)))))
    if (np.max(np.abs(M0 - n2.weight(0))) > tol * out_scale
            or np.max(np.abs(n1.bias(0) - n2.bias(0))) > tol * out_scale):
        return None
    perms[0] = np.arange(arch.width(0))
    middle = EquivalenceWitness(tuple(perms), tuple(np.ones(arch.width(k)) for k in range(K + 1)))
    witness = compose_witness(compose_witness(w1, middle), invert_witness(w2))
    err = apply_transform(p1, witness).max_abs_diff(p2)
    if err > tol * _param_scale(p2):
        return None
    return witness

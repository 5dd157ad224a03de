"""Linear regions of the maps ``g_k`` and ``f_k`` and the pushforward domains.

Both maps are stacks of affine layers, some followed by ReLU.  A cell of a
stack is fixed by one bit per ReLU unit; on it the stack is affine and the
cell is the polyhedron cut out by the sign conditions on every pre-activation.
Cells are found by a frontier search that steps across each facet and reads
the neighbour's pattern off a fresh evaluation.
"""
from __future__ import annotations

import itertools
import logging
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .domain import DomainSpec
from .network import NetworkParams, ShapeError, tail_pattern
from .polytope import INTERIOR_SLACK, Polytope, max_slack_point

log = logging.getLogger(__name__)

MAX_UNITS = 24
EXACT_INPUT_CAP = 6
ZERO_ROW = 1e-12
BOX_MARGIN = 1.0


class RegionLimitError(ValueError):
    """Exhaustive enumeration requested on too many hidden units."""


# -- affine stacks ---------------------------------------------------------

@dataclass(frozen=True)
class Stack:
    """Affine layers ``(W, b, relu)`` applied in order."""

    layers: tuple

    @property
    def dim_in(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def dim_out(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def relu_widths(self) -> tuple[int, ...]:
        return tuple(W.shape[0] for W, _, r in self.layers if r)

    @property
    def n_units(self) -> int:
        return sum(self.relu_widths)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        for W, b, relu in self.layers:
            y = y @ W.T + b
            if relu:
                y = np.maximum(y, 0.0)
        return y

    def pattern(self, y) -> tuple[tuple[int, ...], ...]:
        y = np.asarray(y, dtype=float).reshape(-1)
        bits = []
        for W, b, relu in self.layers:
            z = W @ y + b
            if relu:
                s = z >= 0
                bits.append(tuple(int(v) for v in s))
                z = np.where(s, z, 0.0)
            y = z
        return tuple(bits)

    def affine_system(self, pattern):
        """Sign constraints and affine map of the cell with this pattern.

        Returns ``(Z, zeta, senses, V, c)`` with one row of ``(Z, zeta)`` per
        ReLU unit (pre-activation ``Z y + zeta``), ``senses`` +1 for active and
        -1 for inactive, and ``V y + c`` the stack output on the cell.
        """
        n = self.dim_in
        Wc, bc = np.eye(n), np.zeros(n)
        rows, offs, senses = [], [], []
        li = 0
        for W, b, relu in self.layers:
            Z = W @ Wc
            zeta = W @ bc + b
            if relu:
                s = np.asarray(pattern[li], dtype=float)
                li += 1
                rows.append(Z)
                offs.append(zeta)
                senses.append(np.where(s > 0, 1.0, -1.0))
                Z = s[:, None] * Z
                zeta = s * zeta
            Wc, bc = Z, zeta
        if rows:
            return (np.vstack(rows), np.concatenate(offs), np.concatenate(senses), Wc, bc)
        return np.zeros((0, n)), np.zeros(0), np.zeros(0), Wc, bc


def tail_stack(params: NetworkParams, k: int) -> Stack:
    """``g_k`` as a stack on ``R^{n_k}``."""
    if not 1 <= k <= params.depth:
        raise IndexError(f"k={k} outside [1, {params.depth}]")
    return Stack(tuple((params.weight(l), params.bias(l), l > 0) for l in range(k - 1, -1, -1)))


def head_stack(params: NetworkParams, k: int) -> Stack:
    """``f_k`` as a stack on ``R^{n_K}``; empty for ``k = K``."""
    K = params.depth
    if not 0 <= k <= K:
        raise IndexError(f"k={k} outside [0, {K}]")
    return Stack(tuple((params.weight(l), params.bias(l), l > 0) for l in range(K - 1, k - 1, -1)))


def layer_stack(params: NetworkParams, k: int) -> Stack:
    """The single layer ``h_k``."""
    return Stack(((params.weight(k), params.bias(k), k > 0),))


# -- cells -----------------------------------------------------------------

@dataclass
class Cell:
    """A full-dimensional cell of a stack.

    ``A y <= u`` collects the sign constraints (normal rows only, constant
    rows already resolved); ``clip`` rows are appended when the search was
    restricted to a box.  ``point`` is a certified interior point.
    """

    pattern: tuple
    normals: np.ndarray
    offsets: np.ndarray
    senses: np.ndarray
    V: np.ndarray
    c: np.ndarray
    point: np.ndarray
    slack: float
    clip: Polytope | None = None

    @property
    def A(self) -> np.ndarray:
        # active (+1): Z y + zeta >= 0  ->  -Z y <= zeta
        return -self.senses[:, None] * self.normals

    @property
    def u(self) -> np.ndarray:
        return self.senses * self.offsets

    def polytope(self, clipped: bool = True) -> Polytope:
        P = Polytope(self.A.reshape(-1, self.V.shape[1]), self.u)
        if clipped and self.clip is not None:
            P = P.intersect(self.clip.A, self.clip.u)
        return P

    def affine(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float) @ self.V.T + self.c

    def contains(self, y, tol: float = 1e-9) -> bool:
        return self.polytope(clipped=False).contains(y, tol)

    @property
    def flat_pattern(self) -> tuple[int, ...]:
        return tuple(itertools.chain.from_iterable(self.pattern))


def _resolve_constant_rows(Z, zeta, senses, tol=ZERO_ROW):
    """Drop rows with vanishing normal if the sign convention holds, else report infeasible."""
    norms = np.linalg.norm(Z, axis=1)
    zero = norms <= tol
    for i in np.flatnonzero(zero):
        if senses[i] > 0 and zeta[i] < 0:
            return None
        if senses[i] < 0 and zeta[i] >= 0:
            return None
    keep = ~zero
    return Z[keep], zeta[keep], senses[keep]


def build_cell(stack: Stack, pattern, clip: Polytope | None = None,
               slack: float = INTERIOR_SLACK) -> Cell | None:
    """Cell for ``pattern`` if it has an interior (inside ``clip`` when given), else None."""
    Z, zeta, senses, V, c = stack.affine_system(pattern)
    resolved = _resolve_constant_rows(Z, zeta, senses)
    if resolved is None:
        return None
    Z, zeta, senses = resolved
    A = -senses[:, None] * Z
    u = senses * zeta
    if clip is not None:
        A = np.vstack([A, clip.A])
        u = np.concatenate([u, clip.u])
    x, t = max_slack_point(A.reshape(-1, stack.dim_in), u)
    if x is None or t < slack:
        return None
    return Cell(tuple(tuple(p) for p in pattern), Z, zeta, senses, V, c, x, t, clip)


def _facet_groups(A: np.ndarray, u: np.ndarray, tol: float = 1e-12):
    """Group identical normalized constraints; returns a list of index arrays."""
    norms = np.linalg.norm(A, axis=1)
    An, un = A / norms[:, None], u / norms
    groups, used = [], np.zeros(len(A), dtype=bool)
    for i in range(len(A)):
        if used[i]:
            continue
        same = (np.max(np.abs(An - An[i]), axis=1) <= tol) & (np.abs(un - un[i]) <= tol * (1 + abs(un[i])))
        same &= ~used
        used |= same
        groups.append(np.flatnonzero(same))
    return groups, An, un


def _neighbour_points(cell: Cell):
    """Points just across each facet of ``cell`` (facets of the clip box excluded)."""
    A, u = cell.A, cell.u
    if len(A) == 0:
        return []
    groups, An, un = _facet_groups(A, u)
    clipA = cell.clip.A if cell.clip is not None else np.zeros((0, A.shape[1]))
    clipu = cell.clip.u if cell.clip is not None else np.zeros(0)
    out = []
    for g in groups:
        rest = np.setdiff1d(np.arange(len(A)), g)
        Aub = np.vstack([An[rest], clipA])
        uub = np.concatenate([un[rest], clipu])
        x, t = max_slack_point(Aub, uub, An[g[:1]], un[g[:1]])
        if x is None or t < INTERIOR_SLACK:
            continue
        for delta in (0.5 * t, 1e-3 * t, 1e-6 * t):
            out.append(x + delta * An[g[0]])
    return out


def enumerate_cells(stack: Stack, clip: Polytope | None = None, seeds=None,
                    max_units: int | None = MAX_UNITS, rng=None) -> list[Cell]:
    """All full-dimensional cells of ``stack`` (meeting the interior of ``clip``)."""
    if max_units is not None and stack.n_units > max_units:
        raise RegionLimitError(f"{stack.n_units} hidden units exceed the limit {max_units}")
    n = stack.dim_in
    if stack.n_units == 0:
        cell = build_cell(stack, (), clip)
        return [cell] if cell is not None else []
    rng = np.random.default_rng(0) if rng is None else rng
    pts = [] if seeds is None else [np.asarray(s, dtype=float) for s in np.atleast_2d(seeds)]
    if clip is not None:
        x0, _ = clip.center()
        if x0 is not None:
            pts.append(x0)
            lo, hi = clip.bounds()
            if np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)):
                pts.extend(rng.uniform(lo, hi, size=(16, n)))
    else:
        pts.append(np.zeros(n))
        pts.extend(rng.standard_normal((16, n)))
    seen, cells = set(), []
    queue = deque()

    def visit(y):
        if clip is not None and not clip.contains(y, tol=0.0):
            return
        pat = stack.pattern(y)
        if pat in seen:
            return
        seen.add(pat)
        cell = build_cell(stack, pat, clip)
        if cell is not None:
            cells.append(cell)
            queue.append(cell)

    for y in pts:
        visit(y)
    while queue:
        cell = queue.popleft()
        for y in _neighbour_points(cell):
            visit(y)
    cells.sort(key=lambda c: c.flat_pattern, reverse=True)
    return cells


def brute_force_cells(stack: Stack, clip: Polytope | None = None,
                      max_units: int = 16) -> list[Cell]:
    """Reference enumeration over all ``2^m`` patterns."""
    if stack.n_units > max_units:
        raise RegionLimitError(f"{stack.n_units} hidden units exceed the brute-force limit")
    widths = stack.relu_widths
    cells = []
    for flat in itertools.product((1, 0), repeat=sum(widths)):
        pat, pos = [], 0
        for w in widths:
            pat.append(flat[pos:pos + w])
            pos += w
        cell = build_cell(stack, tuple(pat), clip)
        if cell is not None:
            cells.append(cell)
    return cells


# -- regions of g_k ---------------------------------------------------------

@dataclass
class Region:
    """A linear region ``D`` of ``g_k`` with its affine piece ``g_k(y) = V y + c``."""

    k: int
    cell: Cell

    @property
    def pattern(self):
        return self.cell.pattern

    @property
    def V(self) -> np.ndarray:
        return self.cell.V

    @property
    def c(self) -> np.ndarray:
        return self.cell.c

    @property
    def point(self) -> np.ndarray:
        return self.cell.point

    def contains(self, y, tol: float = 1e-9) -> bool:
        return self.cell.contains(y, tol)

    def polytope(self, clipped: bool = False) -> Polytope:
        return self.cell.polytope(clipped)

    def halfspaces(self) -> list[dict]:
        return [{"a": a.tolist(), "c": float(c), "sense": "≥" if s > 0 else "≤"}
                for a, c, s in zip(self.cell.normals, self.cell.offsets, self.cell.senses)]

    def to_document(self) -> dict:
        return {"pattern": [list(p) for p in self.pattern], "V": self.V.tolist(),
                "c": self.c.tolist(), "halfspaces": self.halfspaces()}


def expanded_bbox(lo, hi, margin: float = BOX_MARGIN) -> Polytope:
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    pad = margin * (1.0 + 0.01 * np.maximum(hi - lo, 0))
    return Polytope.box(lo - pad, hi + pad)


def enumerate_regions(params: NetworkParams, k: int, domain: DomainSpec | None = None,
                      max_units: int = MAX_UNITS, margin: float = BOX_MARGIN) -> list[Region]:
    """Linear regions of ``g_k`` with certified interiors.

    Without ``domain`` every region of ``R^{n_k}`` is returned.  With a domain
    the search is limited to regions meeting the bounding box of ``Omega_k``
    widened by ``margin``.
    """
    if not 1 <= k <= params.depth - 1:
        raise IndexError(f"k={k} outside [1, {params.depth - 1}]")
    stack = tail_stack(params, k)
    clip = None
    if domain is not None:
        push = pushforward_domain(params, domain, k)
        clip = expanded_bbox(push.lo, push.hi, margin)
    return [Region(k, c) for c in enumerate_cells(stack, clip, max_units=max_units)]


def region_of(params: NetworkParams, k: int, y) -> Region:
    """The region whose closure holds ``y``; tied units are flipped until the cell has interior."""
    stack = tail_stack(params, k)
    y = np.asarray(y, dtype=float).reshape(-1)
    pat = tail_pattern(params, k, y)
    cell = build_cell(stack, pat)
    if cell is not None:
        return Region(k, cell)
    Z, zeta, _, _, _ = stack.affine_system(pat)
    ties = np.flatnonzero(np.abs(Z @ y + zeta) <= 1e-12 * (1 + np.abs(zeta)))
    widths = stack.relu_widths
    flat = np.array(list(itertools.chain.from_iterable(pat)))
    for r in range(1, len(ties) + 1):
        for flip in itertools.combinations(ties, r):
            f = flat.copy()
            f[list(flip)] ^= 1
            cand, pos = [], 0
            for w in widths:
                cand.append(tuple(int(v) for v in f[pos:pos + w]))
                pos += w
            cell = build_cell(stack, tuple(cand))
            if cell is not None:
                return Region(k, cell)
    raise RuntimeError("no full-dimensional region contains the point")


# -- hyperplanes -----------------------------------------------------------

@dataclass(frozen=True)
class BoundaryHyperplane:
    """``{x : a.x + c = 0}`` with ``|a| = 1``; ``oriented`` means ``a.x + c > 0`` is the active side."""

    a: np.ndarray
    c: float
    oriented: bool = True

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        nrm = np.linalg.norm(a)
        if nrm == 0:
            raise ValueError("zero normal")
        if abs(nrm - 1) > 1e-12:
            object.__setattr__(self, "c", float(self.c) / nrm)
            a = a / nrm
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", float(self.c))

    def value(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.a + self.c

    def flipped(self) -> "BoundaryHyperplane":
        return BoundaryHyperplane(-self.a, -self.c, self.oriented)

    def same_as(self, other: "BoundaryHyperplane", cos_tol=1e-8, off_tol=1e-7) -> bool:
        dot = float(self.a @ other.a)
        return abs(dot) >= 1 - cos_tol and abs(self.c - np.sign(dot) * other.c) <= off_tol


def first_layer_hyperplanes(params: NetworkParams) -> list[BoundaryHyperplane]:
    K = params.depth
    M, b = params.weight(K - 1), params.bias(K - 1)
    norms = np.linalg.norm(M, axis=1)
    if np.any(norms == 0):
        raise ValueError("first layer has a zero row")
    return [BoundaryHyperplane(M[i] / norms[i], b[i] / norms[i]) for i in range(M.shape[0])]


# -- pushforward -----------------------------------------------------------

@dataclass
class PushedCell:
    """A cell ``P`` of ``f_k`` inside the box, mapped by ``y = A x + d``."""

    cell: Cell
    A: np.ndarray
    d: np.ndarray

    @property
    def full_rank(self) -> bool:
        A = self.A
        if A.shape[0] > A.shape[1]:
            return False
        s = np.linalg.svd(A, compute_uv=False)
        return bool(s.size and s.min() > 1e-10 * max(s.max(), 1e-300) * max(A.shape))

    def image_vertices(self) -> np.ndarray:
        return self.cell.polytope().vertices() @ self.A.T + self.d


@dataclass
class PushforwardDomain:
    """``Omega_k = f_k(Omega)`` as mapped cells (exact) or as a sample cloud (fallback)."""

    k: int
    domain: DomainSpec
    mode: str
    cells: list = field(default_factory=list)
    samples: np.ndarray | None = None
    inputs: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    @property
    def exact(self) -> bool:
        return self.mode == "exact"

    def full_cells(self) -> list[PushedCell]:
        return [c for c in self.cells if c.full_rank]


def pushforward_domain(params: NetworkParams, domain: DomainSpec, k: int,
                       exact_cap: int = EXACT_INPUT_CAP, n_samples: int = 4096,
                       seed: int = 0, max_units: int = MAX_UNITS) -> PushforwardDomain:
    """Image of the box under ``f_k``."""
    K = params.depth
    if not 1 <= k <= K:
        raise IndexError(f"k={k} outside [1, {K}]")
    if domain.dim != params.arch.n_in:
        raise ShapeError("domain dimension differs from the network input")
    box = domain.polytope()
    if k == K:
        x0, t = box.center()
        cell = Cell((), np.zeros((0, domain.dim)), np.zeros(0), np.zeros(0),
                    np.eye(domain.dim), np.zeros(domain.dim), x0, t, box)
        return PushforwardDomain(k, domain, "exact", [PushedCell(cell, cell.V, cell.c)],
                                 lo=domain.lo.copy(), hi=domain.hi.copy())
    stack = head_stack(params, k)
    if domain.dim <= exact_cap and stack.n_units <= max_units:
        cells = enumerate_cells(stack, box, max_units=max_units)
        pushed = [PushedCell(c, c.V, c.c) for c in cells]
        lo, hi = _image_bbox(pushed)
        return PushforwardDomain(k, domain, "exact", pushed, lo=lo, hi=hi)
    warnings.warn(f"pushforward to layer {k} uses a sample cloud (input dim {domain.dim})")
    xs = domain.sample(n_samples, seed)
    ys = stack(xs)
    return PushforwardDomain(k, domain, "sampled", samples=ys, inputs=xs,
                             lo=ys.min(axis=0), hi=ys.max(axis=0))


def _image_bbox(pushed: list[PushedCell]):
    from .polytope import solve_lp

    n = pushed[0].A.shape[0]
    lo, hi = np.full(n, np.inf), np.full(n, -np.inf)
    for pc in pushed:
        P = pc.cell.polytope()
        for i in range(n):
            row = pc.A[i]
            if np.all(row == 0):
                lo[i] = min(lo[i], pc.d[i])
                hi[i] = max(hi[i], pc.d[i])
                continue
            for sign in (1.0, -1.0):
                res = solve_lp(sign * row, P.A, P.u)
                if res.status == 0:
                    v = float(row @ res.x + pc.d[i])
                    lo[i] = min(lo[i], v)
                    hi[i] = max(hi[i], v)
    return lo, hi

"""Small-dimensional H-polytopes ``{x : A x <= u}`` and the LPs run on them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

INTERIOR_SLACK = 1e-9


def _unit_rows(A: np.ndarray, u: np.ndarray):
    norms = np.linalg.norm(A, axis=1)
    keep = norms > 0
    return A[keep] / norms[keep, None], u[keep] / norms[keep], keep


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    """Thin wrapper over HiGHS; returns the scipy result object."""
    n = len(c)
    if bounds is None:
        bounds = [(None, None)] * n
    if A_ub is not None and len(A_ub) == 0:
        A_ub = b_ub = None
    if A_eq is not None and len(A_eq) == 0:
        A_eq = b_eq = None
    return linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                   method="highs")


def max_slack_point(A, u, E=None, e=None, cap: float = 1.0):
    """Point maximizing the smallest normalized slack of ``A x <= u`` subject to ``E x = e``.

    Returns ``(x, t)`` with ``t`` recomputed from ``x`` (not taken from the
    solver), or ``(None, -inf)`` if the system is infeasible.  Rows of ``A``
    that vanish are checked directly against their right-hand side.
    """
    A = np.asarray(A, dtype=float).reshape(-1, _dim(A, E))
    u = np.asarray(u, dtype=float).reshape(-1)
    n = A.shape[1]
    An, un, keep = _unit_rows(A, u)
    if np.any(u[~keep] < 0):
        return None, -np.inf
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = np.hstack([An, np.ones((An.shape[0], 1))])
    A_eq = None
    b_eq = None
    if E is not None and len(E):
        E = np.asarray(E, dtype=float).reshape(-1, n)
        A_eq = np.hstack([E, np.zeros((E.shape[0], 1))])
        b_eq = np.asarray(e, dtype=float).reshape(-1)
    bounds = [(None, None)] * n + [(None, cap)]
    res = solve_lp(c, A_ub, un, A_eq, b_eq, bounds)
    if res.status != 0:
        return None, -np.inf
    x = res.x[:n]
    if An.shape[0]:
        t = float(np.min(un - An @ x))
        t = min(t, cap)
    else:
        t = cap
    if A_eq is not None:
        resid = np.abs(E @ x - b_eq)
        scale = 1.0 + np.abs(b_eq) + np.linalg.norm(E, axis=1) * np.linalg.norm(x)
        if np.any(resid > 1e-9 * scale):
            return None, -np.inf
    return x, t


def _dim(A, E):
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        return A.shape[1]
    return np.asarray(E, dtype=float).shape[1]


def null_space(E: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis (columns) of the null space of ``E``."""
    E = np.atleast_2d(E)
    n = E.shape[1]
    if E.size == 0:
        return np.eye(n)
    _, s, vt = np.linalg.svd(E)
    rank = int(np.sum(s > rtol * max(s.max(), 1e-300)))
    return vt[rank:].T


@dataclass
class Polytope:
    """``{x : A x <= u}``, optionally restricted to the affine slice ``E x = e``."""

    A: np.ndarray
    u: np.ndarray
    E: np.ndarray | None = None
    e: np.ndarray | None = None
    _center: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        if self.A.ndim == 1:
            self.A = self.A.reshape(len(self.u), -1)
        if self.E is not None:
            self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
            self.e = np.asarray(self.e, dtype=float).reshape(-1)
            if self.E.size == 0:
                self.E = self.e = None

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        n = lo.size
        return cls(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo]))

    def intersect(self, A, u) -> "Polytope":
        A = np.asarray(A, dtype=float).reshape(-1, self.dim)
        return Polytope(np.vstack([self.A, A]), np.concatenate([self.u, np.reshape(u, -1)]),
                        self.E, self.e)

    def slice(self, E, e) -> "Polytope":
        E = np.atleast_2d(np.asarray(E, dtype=float))
        e = np.asarray(e, dtype=float).reshape(-1)
        if self.E is not None:
            E = np.vstack([self.E, E])
            e = np.concatenate([self.e, e])
        return Polytope(self.A, self.u, E, e)

    def center(self):
        """``(x, t)``: the point of largest normalized slack (capped at 1)."""
        if self._center is None:
            self._center = max_slack_point(self.A, self.u, self.E, self.e)
        return self._center

    def has_interior(self, slack: float = INTERIOR_SLACK) -> bool:
        """Relative interior within the slice, certified by a point with slack >= ``slack``."""
        x, t = self.center()
        return x is not None and t >= slack

    def is_feasible(self) -> bool:
        x, t = max_slack_point(self.A, self.u, self.E, self.e)
        return x is not None and t >= -1e-9

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        An, un, keep = _unit_rows(self.A, self.u)
        ok = np.all(An @ x <= un + tol) and np.all(self.u[~keep] >= -tol)
        if ok and self.E is not None:
            ok = np.all(np.abs(self.E @ x - self.e) <= tol * (1 + np.abs(self.e)))
        return bool(ok)

    def slack(self, x) -> float:
        An, un, _ = _unit_rows(self.A, self.u)
        return float(np.min(un - An @ np.asarray(x, dtype=float))) if len(An) else np.inf

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate-wise bounding box (``inf`` where unbounded)."""
        n = self.dim
        lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
        for i in range(n):
            for sign, out in ((1.0, lo), (-1.0, hi)):
                c = np.zeros(n)
                c[i] = sign
                res = solve_lp(c, self.A, self.u, self.E, self.e)
                if res.status == 0:
                    out[i] = res.x[i]
        return lo, hi

    def chord(self, x, d) -> tuple[float, float]:
        """Parameter range ``[t0, t1]`` with ``x + t d`` inside (``d`` must lie in the slice)."""
        Ad = self.A @ d
        r = self.u - self.A @ x
        t0, t1 = -np.inf, np.inf
        pos, neg = Ad > 1e-300, Ad < -1e-300
        if np.any(pos):
            t1 = float(np.min(r[pos] / Ad[pos]))
        if np.any(neg):
            t0 = float(np.max(r[neg] / Ad[neg]))
        return t0, t1

    def sample(self, n: int, rng: np.random.Generator, burn: int = 50, thin: int = 5,
               x0=None) -> np.ndarray:
        """Approximately uniform points by hit-and-run; the polytope must be bounded."""
        if x0 is None:
            x0, t = self.center()
            if x0 is None:
                raise ValueError("empty polytope")
        basis = null_space(self.E) if self.E is not None else np.eye(self.dim)
        if basis.shape[1] == 0:
            return np.repeat(np.asarray(x0)[None, :], n, axis=0)
        x = np.array(x0, dtype=float)
        out = np.empty((n, self.dim))
        steps = burn + n * thin
        for s in range(steps):
            d = basis @ rng.standard_normal(basis.shape[1])
            d /= np.linalg.norm(d)
            t0, t1 = self.chord(x, d)
            if not (np.isfinite(t0) and np.isfinite(t1)):
                raise ValueError("hit-and-run needs a bounded polytope")
            if t1 > t0:
                x = x + rng.uniform(t0, t1) * d
            if s >= burn and (s - burn) % thin == thin - 1:
                out[(s - burn) // thin] = x
        return out

    def vertices(self) -> np.ndarray:
        """Vertex list of a bounded, full-dimensional polytope (no slice)."""
        from scipy.spatial import HalfspaceIntersection

        x, t = self.center()
        if x is None or t <= 0:
            raise ValueError("vertices need a full-dimensional polytope")
        if self.dim == 1:
            lo, hi = self.bounds()
            return np.array([[lo[0]], [hi[0]]])
        An, un, _ = _unit_rows(self.A, self.u)
        hs = HalfspaceIntersection(np.hstack([An, -un[:, None]]), x)
        pts = hs.intersections
        keep = []
        for p in pts:
            if not any(np.allclose(p, q, atol=1e-9) for q in keep):
                keep.append(p)
        return np.array(keep)

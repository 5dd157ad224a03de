"""Recover ReLU network parameters from black-box queries by peeling layers.

The first hidden layer shows up as fold hyperplanes of the function that cut
straight across the whole domain; folds of deeper units bend where they meet
earlier folds.  Each layer is therefore found by locating kinks along random
chords, fitting hyperplanes to them, and keeping the ones that persist across
the domain.  Orientation comes from writing the local Jacobian in the basis of
the recovered rows: the coefficient of a unit vanishes on its inactive side.
The layer is then inverted on the all-active cone and the procedure repeats on
the residual map.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .domain import DomainError
from .network import Architecture, NetworkParams
from .oracle import BudgetExhausted, QueryOracle
from .polytope import Polytope, max_slack_point
from .regions import BoundaryHyperplane

log = logging.getLogger(__name__)


class RecoveryError(RuntimeError):
    """Recovery of a layer failed; ``layer`` is the index being recovered."""

    def __init__(self, message: str, layer: int | None = None, suspect: str = ""):
        super().__init__(message)
        self.layer = layer
        self.suspect = suspect


class IdentifiabilityEvidenceMissing(RecoveryError):
    """The number of full fold hyperplanes differs from the layer width."""


class OrientationUnresolved(RecoveryError):
    """No probe point told the active side of a fold apart from the inactive one."""


class NotAffine(RecoveryError):
    """The residual map is not affine where it should be."""


@dataclass
class RecoveryConfig:
    seed: int = 0
    budget: int = 1_000_000
    grid: int = 33
    chords_per_round: int = 8
    max_rounds: int = 200
    full_probes: int = 64
    jump_tol: float = 1e-6
    query_margin: float = 1e-7
    cos_merge: float = 1e-8
    offset_merge: float = 1e-7
    rank_tol: float = 1e-10
    affine_tol: float = 1e-6

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")


# -- query spaces ----------------------------------------------------------

class _Budgeted:
    """View on an oracle that stops after ``limit`` further queries."""

    def __init__(self, oracle: QueryOracle, limit: int):
        self.oracle = oracle
        self.start = oracle.count
        self.limit = limit
        self.poly = oracle.domain.polytope()
        self.dim = oracle.domain.dim
        self.scale = oracle.domain.scale

    @property
    def used(self) -> int:
        return self.oracle.count - self.start

    def __call__(self, X):
        X = np.atleast_2d(X)
        if self.used + X.shape[0] > self.limit:
            raise BudgetExhausted(f"recovery budget of {self.limit} queries exhausted")
        return self.oracle(X)


def _space(oracle):
    if isinstance(oracle, (QueryOracle,)):
        return _Budgeted(oracle, np.iinfo(np.int64).max)
    return oracle


class ResidualOracle:
    """The map ``y -> f(lift(y))`` on the all-active part of a layer's image.

    The domain is ``{M x + b : x in D', M x + b >= margin}`` where ``D'`` is
    the parent domain shrunk slightly.  For a square ``M`` the lift is the
    inverse map.  Otherwise the domain is the convex hull of the projected
    vertices and ``lift`` interpolates the vertex preimages over a Delaunay
    triangulation, so ``M lift(y) + b = y`` holds on the whole domain.
    """

    def __init__(self, parent, M: np.ndarray, b: np.ndarray, margin: float):
        self.parent = parent
        self.M = np.asarray(M, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.dim = self.M.shape[0]
        self.margin = margin
        Pa, Pu = parent.poly.A, parent.poly.u
        shrink = 1e-7 * parent.scale * np.linalg.norm(Pa, axis=1)
        self._tri = None
        if self.M.shape[0] == self.M.shape[1]:
            self._inv = np.linalg.inv(self.M)
            A = np.vstack([Pa @ self._inv, -np.eye(self.dim)])
            u = np.concatenate([Pu - shrink + Pa @ self._inv @ self.b,
                                -np.full(self.dim, margin)])
            self.poly = Polytope(A, u)
        else:
            self._inv = None
            src = Polytope(np.vstack([Pa, -self.M]),
                           np.concatenate([Pu - shrink, self.b - margin]))
            x, t = src.center()
            if x is None or t <= 0:
                raise RecoveryError("the all-active part of the layer image is empty")
            X = src.vertices()
            Y = X @ self.M.T + self.b
            self._X = X
            self._Y = Y
            if self.dim == 1:
                order = np.argsort(Y[:, 0])
                self._X, self._Y = X[order], Y[order]
                self.poly = Polytope(np.array([[-1.0], [1.0]]),
                                     np.array([-Y[order[0], 0], Y[order[-1], 0]]))
            else:
                from scipy.spatial import ConvexHull, Delaunay
                hull = ConvexHull(Y)
                self.poly = Polytope(hull.equations[:, :-1], -hull.equations[:, -1])
                self._tri = Delaunay(Y)
        lo, hi = self.poly.bounds()
        self.scale = float(np.max(hi - lo)) if np.all(np.isfinite(hi - lo)) else parent.scale

    def lift(self, Y) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if self._inv is not None:
            return (Y - self.b) @ self._inv.T
        if self.dim == 1:
            return np.column_stack([np.interp(Y[:, 0], self._Y[:, 0], self._X[:, j])
                                    for j in range(self._X.shape[1])])
        tri = self._tri
        simp = tri.find_simplex(Y, tol=1e-10)
        if np.any(simp < 0):
            miss = simp < 0
            simp[miss] = tri.find_simplex(Y[miss], bruteforce=True, tol=1e-8)
            if np.any(simp < 0):
                raise DomainError("residual query outside the all-active domain")
        T = tri.transform[simp]
        lam = np.einsum("nij,nj->ni", T[:, :-1], Y - T[:, -1])
        lam = np.column_stack([lam, 1 - lam.sum(axis=1)])
        return np.einsum("ni,nij->nj", lam, self._X[tri.simplices[simp]])

    def contains(self, Y, tol: float = 1e-9) -> np.ndarray:
        Y = np.atleast_2d(Y)
        nrm = np.linalg.norm(self.poly.A, axis=1)
        return np.all((Y @ self.poly.A.T - self.poly.u) / nrm <= tol * (1 + self.scale), axis=1)

    @property
    def used(self) -> int:
        return self.parent.used

    def __call__(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if not np.all(self.contains(Y)):
            raise DomainError("residual query outside the all-active domain")
        return self.parent(self.lift(Y))


# -- fold observations -----------------------------------------------------

@dataclass
class FoldObservation:
    x: np.ndarray
    u: np.ndarray
    d_left: np.ndarray
    d_right: np.ndarray
    jump: np.ndarray
    normal: np.ndarray | None = None


def _eval(space, X) -> np.ndarray:
    return np.atleast_2d(space(np.atleast_2d(X)))


def probe_jump(oracle, x, u, h: float | None = None, jump_tol: float = 1e-6):
    """One-sided directional derivatives of ``f`` along ``u`` at ``x`` and their difference.

    Each one-sided derivative is taken at steps ``h`` and ``h/2`` and combined
    by one Richardson step.  Returns None if the jump is below ``jump_tol``
    relative to the derivative scale.
    """
    space = _space(oracle)
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    u = u / np.linalg.norm(u)
    if h is None:
        h = 1e-5 * (1 + np.linalg.norm(x))
    pts = np.array([x, x + h * u, x + 0.5 * h * u, x - h * u, x - 0.5 * h * u])
    if not space.poly.contains(pts[1], 0.0) or not space.poly.contains(pts[3], 0.0):
        raise DomainError("probe leaves the domain")
    f0, fp, fph, fm, fmh = _eval(space, pts)
    right = 2 * (fph - f0) / (0.5 * h) - (fp - f0) / h
    left = 2 * (f0 - fmh) / (0.5 * h) - (f0 - fm) / h
    jump = right - left
    scale = 1.0 + max(np.linalg.norm(right), np.linalg.norm(left))
    if np.linalg.norm(jump) < jump_tol * scale:
        return None
    return FoldObservation(x, u, left, right, jump)


class _Line:
    """Kink search along ``t -> f(x0 + t d)``.

    Slopes are one-sided difference quotients taken at two step sizes; a
    sample point whose two quotients disagree has a kink within one step and
    is shifted before use, so every slope the search relies on is exact up to
    rounding.
    """

    def __init__(self, space, x0, d, t0, t1, max_queries: int = 4000):
        self.space, self.x0, self.d = space, x0, d
        self.t0, self.t1 = t0, t1
        self.L = t1 - t0
        self.eps = 1e-6 * self.L
        self.fscale = 1.0
        self.max_queries = max_queries
        self.queries = 0

    def f(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        self.queries += len(ts)
        if self.queries > self.max_queries:
            raise _LineOverrun()
        return _eval(self.space, self.x0 + ts[:, None] * self.d)

    def stol(self, *slopes):
        return 1e-7 * (1 + max(np.linalg.norm(s) for s in slopes))

    def vtol(self, span, *slopes):
        return 1e-9 * (1 + max(np.linalg.norm(s) for s in slopes)) * span + 1e-11 * self.fscale

    def _clean(self, ts):
        """Values and verified one-sided slopes at ``ts`` (points may be shifted)."""
        e, e2 = self.eps, self.eps / 7
        ts = np.array(ts, dtype=float)
        out = [None] * len(ts)
        todo = list(range(len(ts)))
        for attempt in range(6):
            if not todo:
                break
            t = ts[todo]
            lo_ok = t - e >= self.t0
            hi_ok = t + e <= self.t1
            pts = np.concatenate([t, np.where(hi_ok, t + e, t), np.where(hi_ok, t + e2, t),
                                  np.where(lo_ok, t - e, t), np.where(lo_ok, t - e2, t)])
            F = self.f(pts).reshape(5, len(t), -1)
            f0, fp, fp2, fm, fm2 = F
            r1, r2 = (fp - f0) / e, (fp2 - f0) / e2
            l1, l2 = (f0 - fm) / e, (f0 - fm2) / e2
            again = []
            for j, idx in enumerate(todo):
                okr = (not hi_ok[j]) or np.linalg.norm(r1[j] - r2[j]) <= self.stol(r1[j], r2[j])
                okl = (not lo_ok[j]) or np.linalg.norm(l1[j] - l2[j]) <= self.stol(l1[j], l2[j])
                if okr and okl:
                    out[idx] = (ts[idx], f0[j], l1[j] if lo_ok[j] else None,
                                r1[j] if hi_ok[j] else None)
                else:
                    shift = 2.5 * e * (1 if okl else -1)
                    ts[idx] = min(max(ts[idx] + shift, self.t0), self.t1)
                    again.append(idx)
            todo = again
        return out

    def kinks(self, n_grid: int):
        """Kinks ``(t, f(t), left slope, right slope)`` along the segment, sorted by ``t``."""
        T = np.linspace(self.t0, self.t1, n_grid)
        try:
            pts = [p for p in self._clean(T) if p is not None]
            if not pts:
                return []
            self.fscale = 1.0 + max(float(np.max(np.abs(p[1]))) for p in pts)
            out = []
            for p in pts:
                if p[2] is not None and p[3] is not None and \
                        np.linalg.norm(p[3] - p[2]) > self.stol(p[2], p[3]):
                    out.append(p)
            for p, q in zip(pts[:-1], pts[1:]):
                out.extend(self._solve(p, q, 0))
        except _LineOverrun:
            return []
        out.sort(key=lambda k: k[0])
        return out

    def _solve(self, P, Q, depth):
        a, fa, _, ra = P
        b, fb, lb, _ = Q
        span = b - a
        if span <= 0 or ra is None or lb is None:
            return []
        if np.linalg.norm(ra - lb) <= self.stol(ra, lb) and \
                np.linalg.norm(fb - fa - ra * span) <= self.vtol(span, ra):
            return []
        if depth > 50 or span < 1e-9 * self.L:
            return []
        ds = ra - lb
        nd = float(ds @ ds)
        if nd > 0:
            tstar = float(ds @ (fb - fa + ra * a - lb * b)) / nd
            if a < tstar < b:
                got = self._confirm(a, b, fa, fb, ra, lb, tstar)
                if got is not None:
                    return [got]
        (M,) = self._clean([0.5 * (a + b)])
        if M is None or not (a < M[0] < b) or M[2] is None or M[3] is None:
            return []
        out = []
        if np.linalg.norm(M[3] - M[2]) > self.stol(M[2], M[3]):
            out.append(M)
        out += self._solve(P, M, depth + 1)
        out += self._solve(M, Q, depth + 1)
        return out

    def _confirm(self, a, b, fa, fb, ra, lb, tstar):
        """Check a single kink at ``tstar``; sharpen it with long-baseline slopes."""
        (fs,) = self.f([tstar])
        if np.linalg.norm(fs - fa - ra * (tstar - a)) > self.vtol(tstar - a, ra) + 1e-7 * np.linalg.norm(ra - lb) * (b - a):
            return None
        if np.linalg.norm(fs - fb - lb * (tstar - b)) > self.vtol(b - tstar, lb) + 1e-7 * np.linalg.norm(ra - lb) * (b - a):
            return None
        rho = 1e-3 * min(tstar - a, b - tstar)
        if rho <= 0:
            return (tstar, fs, ra, lb)
        fl, fr = self.f([tstar - rho, tstar + rho])
        if np.linalg.norm(fl - fa - ra * (tstar - rho - a)) > self.vtol(tstar - a, ra):
            return None
        if np.linalg.norm(fr - fb - lb * (tstar + rho - b)) > self.vtol(b - tstar, lb):
            return None
        sl = (fl - fa) / (tstar - rho - a)
        sr = (fb - fr) / (b - tstar - rho)
        ds = sl - sr
        nd = float(ds @ ds)
        if np.sqrt(nd) <= self.stol(sl, sr):
            return None
        t2 = float(ds @ (fb - fa + sl * a - sr * b)) / nd
        if not (tstar - rho < t2 < tstar + rho):
            t2 = tstar
        return (t2, fa + sl * (t2 - a), sl, sr)


class _LineOverrun(RuntimeError):
    pass


def _random_chord(space, rng, x_start=None):
    poly = space.poly
    if x_start is None:
        x_start = _interior_point(space, rng)
    d = rng.standard_normal(space.dim)
    d /= np.linalg.norm(d)
    t0, t1 = poly.chord(x_start, d)
    pad = 1e-7 * (t1 - t0)
    return x_start, d, t0 + pad, t1 - pad


def _facet_chord(space, rng, depth: tuple = (1e-5, 1e-2)):
    """Random chord parallel to a random facet, just inside it.

    The depth below the facet is log-uniform in ``depth`` (relative to the
    domain scale), deep enough for difference quotients around kinks.

    Every fold plane that meets the interior also crosses some facet, so these
    chords reach folds confined to thin slivers near the boundary.
    """
    poly = space.poly
    nrm = np.linalg.norm(poly.A, axis=1)
    dep = np.exp(rng.uniform(np.log(depth[0]), np.log(depth[1]))) * space.scale
    for j in rng.permutation(len(poly.u)):
        a = poly.A[j] / nrm[j]
        sl = poly.slice(a[None, :], [poly.u[j] / nrm[j] - dep])
        x, t = max_slack_point(sl.A, sl.u, sl.E, sl.e)
        if x is None or t <= 0:
            continue
        x = sl.sample(1, rng, burn=4, thin=1, x0=x)[0]
        d = rng.standard_normal(space.dim)
        d -= (d @ a) * a
        d /= np.linalg.norm(d)
        t0, t1 = poly.chord(x, d)
        pad = 1e-7 * (t1 - t0)
        return x, d, t0 + pad, t1 - pad
    return _random_chord(space, rng)


def _interior_point(space, rng, steps: int = 6):
    poly = space.poly
    x, t = poly.center()
    if x is None:
        raise RecoveryError("the query domain is empty")
    for _ in range(steps):
        d = rng.standard_normal(space.dim)
        d /= np.linalg.norm(d)
        t0, t1 = poly.chord(x, d)
        x = x + rng.uniform(t0 + 0.01 * (t1 - t0), t1 - 0.01 * (t1 - t0)) * d
    return x


def locate_folds(oracle, n_chords: int = 8, rng=None, grid: int = 33,
                 jump_tol: float = 1e-6) -> tuple[list[FoldObservation], bool]:
    """Kinks along random chords of the domain.

    Returns ``(observations, complete)``; ``complete`` is False when the query
    budget ran out before all chords were scanned.
    """
    space = _space(oracle)
    rng = np.random.default_rng(0) if rng is None else rng
    obs = []
    try:
        for j in range(n_chords):
            if space.dim > 1 and j % 2 == 1:
                x0, d, t0, t1 = _facet_chord(space, rng)
            else:
                x0, d, t0, t1 = _random_chord(space, rng)
            line = _Line(space, x0, d, t0, t1)
            for t, ft, sl, sr in line.kinks(grid):
                jump = sr - sl
                if np.linalg.norm(jump) < jump_tol * (1 + max(np.linalg.norm(sl), np.linalg.norm(sr))):
                    continue
                obs.append(FoldObservation(x0 + t * d, d, sl, sr, jump))
    except BudgetExhausted:
        return obs, False
    return obs, True


# -- local geometry --------------------------------------------------------

def jacobian(space, x, h: float):
    """Forward-difference Jacobian, validated against a second step size."""
    n = x.size
    X = np.vstack([x, x + h * np.eye(n), x + (h / 3) * np.eye(n)])
    F = _eval(space, X)
    J1 = (F[1:n + 1] - F[0]).T / h
    J2 = (F[n + 1:] - F[0]).T / (h / 3)
    # rounding in a difference quotient is about 1e-16 * abs(f) / h
    scale = 1 + 1e-9 * np.abs(F[0]).max() / h + np.linalg.norm(J1)
    if np.linalg.norm(J1 - J2) > 1e-7 * scale:
        return None
    return J1


def _local_normal(space, ob: FoldObservation, eta: float):
    """Unit normal of the fold at ``ob.x`` from the Jacobian jump across it."""
    h = 0.1 * eta
    xp, xm = ob.x + eta * ob.u, ob.x - eta * ob.u
    poly = space.poly
    for p in (xp, xm):
        if poly.slack(p) <= 2 * h * np.sqrt(space.dim):
            return None
    Jp, Jm = jacobian(space, xp, h), jacobian(space, xm, h)
    if Jp is None or Jm is None:
        return None
    D = Jp - Jm
    _, s, vt = np.linalg.svd(D)
    if s[0] <= 0 or (len(s) > 1 and s[1] > 1e-5 * s[0]):
        return None
    a = vt[0]
    if abs(a @ ob.u) < 0.05:
        return None
    return a


def _canon(a, c):
    j = int(np.argmax(np.abs(a)))
    if a[j] < 0:
        return -a, -c
    return a, c


@dataclass
class FittedFold:
    hyperplane: BoundaryHyperplane
    full: bool
    points: np.ndarray
    residual: float
    probes: int = 0
    source: FoldObservation | None = None


def _probe_along_normal(space, p, a, w, pos_tol: float):
    """Look for a kink at ``p`` on the line ``p + t a``, ``|t| <= w``.

    Slopes come from the outer thirds of the window, so they are exact up to
    rounding when those thirds are free of other folds.  Returns
    ``("found", point)``, ``("absent", None)`` or ``("inconclusive", None)``.
    """
    ts = np.array([-w, -w / 3, w / 3, w])
    F = _eval(space, p + ts[:, None] * a)
    sl = (F[1] - F[0]) / (ts[1] - ts[0])
    sr = (F[3] - F[2]) / (ts[3] - ts[2])
    fscale = 1.0 + float(np.abs(F).max())
    tol = 1e-10 * fscale
    ds = sl - sr
    nd = float(ds @ ds)
    if np.sqrt(nd) <= 1e-9 * (1 + np.linalg.norm(sl)):
        if np.linalg.norm(F[2] - F[1] - sl * (ts[2] - ts[1])) <= tol:
            return "absent", None
        return "inconclusive", None
    t = float(ds @ (F[2] - F[1] + sl * ts[1] - sr * ts[2])) / nd
    if not (ts[1] < t < ts[2]):
        return "inconclusive", None
    ft = _eval(space, p + t * a)[0]
    if np.linalg.norm(ft - F[1] - sl * (t - ts[1])) > tol or \
            np.linalg.norm(ft - F[2] - sr * (t - ts[2])) > tol:
        return "inconclusive", None
    if abs(t) > pos_tol:
        return "inconclusive", None
    rho = w / 30
    fl, fr = _eval(space, p + np.array([[t - rho], [t + rho]]) * a)
    if np.linalg.norm(fl - F[1] - sl * (t - rho - ts[1])) > tol or \
            np.linalg.norm(fr - F[2] - sr * (t + rho - ts[2])) > tol:
        return "inconclusive", None
    return "found", p + t * a


def _tls(points: np.ndarray):
    c = points.mean(axis=0)
    if points.shape[1] == 1:
        return np.array([1.0]), -float(c[0]), 0.0
    _, s, vt = np.linalg.svd(points - c)
    a = vt[-1]
    resid = float(s[-1] / np.sqrt(len(points))) if len(s) >= points.shape[1] else np.inf
    return a, -float(a @ c), resid


def is_full_hyperplane(space, a, c, rng, n_probes: int = 64, w: float | None = None,
                       pos_tol: float | None = None):
    """Probe points of the hyperplane spread over the domain; full iff every probe finds a fold.

    Probes whose window is spoiled by another fold are replaced by fresh
    points.  Returns ``(full, refined_points)``.
    """
    poly = space.poly
    if w is None:
        w = 1e-3 * space.scale
        # folds crossing only a thin sliver of the domain need a shorter window
        full_sl = poly.slice(a[None, :], [-c])
        _, room = max_slack_point(full_sl.A, full_sl.u, full_sl.E, full_sl.e)
        if not np.isfinite(room) or room <= 0:
            return False, np.empty((0, space.dim))
        w = min(w, room / 4)
    if pos_tol is None:
        pos_tol = 1e-3 * w
    nrm = np.linalg.norm(poly.A, axis=1)
    shrunk = Polytope(poly.A, poly.u - 2 * w * nrm)
    sl = shrunk.slice(a[None, :], [-c])
    x0, t = max_slack_point(sl.A, sl.u, sl.E, sl.e)
    if x0 is None or t <= 0:
        return False, np.empty((0, space.dim))
    found = []
    spare = n_probes
    batch = x0[None, :] if space.dim == 1 else sl.sample(n_probes, rng, burn=20, thin=3, x0=x0)
    pts = list(batch)
    while pts and len(found) < (1 if space.dim == 1 else n_probes):
        p = pts.pop()
        state, q = _probe_along_normal(space, p, a, w, pos_tol)
        if state == "absent":
            return False, np.array(found).reshape(-1, space.dim)
        if state == "found":
            found.append(q)
            continue
        if spare <= 0 or space.dim == 1:
            return False, np.array(found).reshape(-1, space.dim)
        spare -= 1
        pts.extend(sl.sample(1, rng, burn=3, thin=1, x0=p))
    return len(found) > 0, np.array(found)


def fit_fold_hyperplanes(observations: list[FoldObservation], oracle, rng=None,
                         n_probes: int = 64, known: list[FittedFold] | None = None,
                         cos_tol: float = 1e-6, off_tol: float = 1e-5) -> list[FittedFold]:
    """Cluster observations by local fold plane and classify each plane as full or partial.

    ``known`` holds planes tested earlier; observations matching one of them
    are not tested again.
    """
    space = _space(oracle)
    rng = np.random.default_rng(0) if rng is None else rng
    fitted = list(known or [])
    eta = 1e-5 * space.scale
    for ob in observations:
        a = _local_normal(space, ob, eta) if ob.normal is None else ob.normal
        if a is None:
            continue
        ob.normal = a
        a, c = _canon(a, -float(a @ ob.x))
        tol_c = off_tol * (1 + space.scale)
        if any(abs(a @ f.hyperplane.a) >= 1 - cos_tol
               and abs(c - np.sign(a @ f.hyperplane.a) * f.hyperplane.c) <= tol_c
               for f in fitted):
            continue
        full, pts = is_full_hyperplane(space, a, c, rng, n_probes)
        if full and len(pts) >= 1:
            a2, c2, res = _tls(pts) if space.dim > 1 else (a, -float(pts[0] @ a), 0.0)
            a2, c2 = _canon(a2, c2)
            # second pass with the sharpened plane
            full2, pts2 = is_full_hyperplane(space, a2, c2, rng, n_probes)
            if full2:
                a3, c3, res = _tls(pts2) if space.dim > 1 else (a2, -float(pts2[0] @ a2), 0.0)
                a3, c3 = _canon(a3, c3)
                fitted.append(FittedFold(BoundaryHyperplane(a3, c3, oriented=False), True,
                                         pts2, res, len(pts) + len(pts2), ob))
                continue
        fitted.append(FittedFold(BoundaryHyperplane(a, c, oriented=False), False,
                                 pts, np.nan, len(pts), ob))
    return fitted


def merge_full(folds: list[FittedFold], cos_tol: float = 1e-8, off_tol: float = 1e-7):
    out: list[FittedFold] = []
    for f in folds:
        if not f.full:
            continue
        if any(f.hyperplane.same_as(g.hyperplane, cos_tol, off_tol) for g in out):
            continue
        out.append(f)
    return out


def resolve_orientation(oracle, folds: list[FittedFold], i: int, rng=None,
                        max_points: int = 12) -> tuple[np.ndarray, float]:
    """Oriented ``(row, bias)`` for fold ``i`` among the layer's full folds.

    The Jacobian on either side of the fold is written in the basis of all
    recovered normals; the coefficient of fold ``i`` vanishes on the side
    where the unit is inactive.
    """
    space = _space(oracle)
    rng = np.random.default_rng(0) if rng is None else rng
    B = np.array([f.hyperplane.a for f in folds])
    Bp = np.linalg.pinv(B)
    H = folds[i].hyperplane
    eta = 1e-4 * space.scale
    h = 0.05 * eta
    pts = folds[i].points
    order = rng.permutation(len(pts))[:max_points]
    for j in order:
        p = pts[j]
        p = p - (H.a @ p + H.c) * H.a
        side = {}
        for sgn in (1.0, -1.0):
            x = p + sgn * eta * H.a
            if space.poly.slack(x) <= 2 * h * np.sqrt(space.dim):
                break
            J = jacobian(space, x, h)
            if J is None:
                break
            C = J @ Bp
            if np.linalg.norm(J - C @ B) > 1e-6 * (1 + np.linalg.norm(J)):
                break
            side[sgn] = float(np.linalg.norm(C[:, i]))
        if len(side) < 2:
            continue
        big = max(side.values())
        small = min(side.values())
        if big <= 1e-9 or small > 1e-6 * big:
            continue
        eps = 1.0 if side[1.0] > side[-1.0] else -1.0
        return eps * H.a, eps * H.c
    raise OrientationUnresolved(f"could not orient fold {i}")


# -- layers ----------------------------------------------------------------

@dataclass
class RecoveredLayer:
    M: np.ndarray
    b: np.ndarray
    residuals: np.ndarray
    oriented: bool = True
    stats: dict = field(default_factory=dict)


def recover_first_layer(oracle, expected_width: int, config: RecoveryConfig | None = None,
                        rng=None, layer: int | None = None) -> RecoveredLayer:
    """Rows and biases of the first hidden layer of the function behind ``oracle``."""
    cfg = config or RecoveryConfig()
    space = _space(oracle)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    folds: list[FittedFold] = []
    n_obs = 0
    full: list[FittedFold] = []
    rounds = 0
    try:
        for rounds in range(1, cfg.max_rounds + 1):
            obs, complete = locate_folds(space, cfg.chords_per_round, rng, cfg.grid,
                                         cfg.jump_tol)
            if not complete:
                raise BudgetExhausted("query budget exhausted while locating folds")
            n_obs += len(obs)
            folds = fit_fold_hyperplanes(obs, space, rng, cfg.full_probes, known=folds)
            full = merge_full(folds, cfg.cos_merge, cfg.offset_merge)
            if len(full) >= expected_width and rounds >= 2:
                break
    except BudgetExhausted:
        raise
    stats = {"observations": n_obs, "rounds": rounds, "planes_tested": len(folds),
             "full": len(full)}
    if len(full) != expected_width:
        raise IdentifiabilityEvidenceMissing(
            f"found {len(full)} full fold hyperplanes, expected {expected_width}",
            layer=layer)
    M = np.empty((expected_width, space.dim))
    b = np.empty(expected_width)
    for i in range(expected_width):
        M[i], b[i] = resolve_orientation(space, full, i, rng)
    s = np.linalg.svd(M, compute_uv=False)
    if s.min() < cfg.rank_tol * s.max() * max(M.shape):
        raise IdentifiabilityEvidenceMissing("recovered rows are not linearly independent",
                                             layer=layer)
    return RecoveredLayer(M, b, np.array([f.residual for f in full]), True, stats)


def peel_layer(oracle, recovered: RecoveredLayer, margin: float | None = None,
               rank_tol: float = 1e-10) -> ResidualOracle:
    """Residual oracle ``y -> g(y)`` on the all-active image of the recovered layer."""
    space = _space(oracle)
    s = np.linalg.svd(recovered.M, compute_uv=False)
    if s.min() < rank_tol * s.max() * max(recovered.M.shape):
        raise RecoveryError("recovered layer is not full row rank")
    res = ResidualOracle(space, recovered.M, recovered.b, 0.0)
    if margin is None:
        margin = 1e-3 * res.scale
    res = ResidualOracle(space, recovered.M, recovered.b, margin)
    if not res.poly.has_interior():
        raise RecoveryError("the all-active part of the layer image is empty")
    return res


def recover_last_affine(oracle, n_samples: int | None = None, rng=None,
                        tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray, float]:
    """Least-squares affine fit ``g(y) = M y + b``; raises NotAffine if the residual is large."""
    space = _space(oracle)
    rng = np.random.default_rng(0) if rng is None else rng
    n = space.dim
    n_samples = n_samples or max(4 * (n + 1), 20)
    x, _ = space.poly.center()
    Y = [x]
    for _ in range(n_samples - 1):
        Y.append(_interior_point(space, rng, steps=3))
    Y = np.array(Y)
    G = _eval(space, Y)
    X = np.hstack([Y, np.ones((len(Y), 1))])
    coef, *_ = np.linalg.lstsq(X, G, rcond=None)
    resid = float(np.max(np.abs(X @ coef - G)))
    scale = 1.0 + float(np.max(np.abs(G)))
    if resid > tol * scale:
        raise NotAffine(f"affine fit residual {resid:.3g} exceeds {tol:g}")
    return coef[:-1].T, coef[-1], resid


@dataclass
class RecoveryResult:
    params: NetworkParams | None
    queries: int
    layers: list = field(default_factory=list)
    error: str = ""
    failed_layer: int | None = None
    suspect: str = ""
    budget_exhausted: bool = False

    @property
    def success(self) -> bool:
        return self.params is not None

    def to_document(self) -> dict:
        from .network import to_document
        return {"success": self.success, "queries": self.queries, "layers": self.layers,
                "error": self.error, "failed_layer": self.failed_layer, "suspect": self.suspect,
                "budget_exhausted": self.budget_exhausted,
                "network": to_document(self.params) if self.params is not None else None}


def _suspect(k: int, K: int) -> str:
    if k == K - 1:
        return f"P.a/P.b at k={k}"
    return f"P.b at k={k} or P.c/P.d at k={k + 1}"


def recover_network(oracle: QueryOracle, arch: Architecture | str,
                    config: RecoveryConfig | None = None) -> RecoveryResult:
    """Recover a normalized representative of the network behind ``oracle``.

    Failures are reported in the result rather than raised, with the layer
    being recovered and the condition most likely responsible.
    """
    cfg = config or RecoveryConfig()
    if isinstance(arch, str):
        arch = Architecture.parse(arch)
    if arch.n_in != oracle.domain.dim:
        raise ValueError("architecture input width differs from the oracle domain")
    K = arch.depth
    space = _Budgeted(oracle, cfg.budget)
    rng = np.random.default_rng(cfg.seed)
    layers = {}
    stats = []
    current = space
    k = K - 1
    try:
        for k in range(K - 1, 0, -1):
            rec = recover_first_layer(current, arch.width(k), cfg, rng, layer=k)
            layers[k] = (rec.M, rec.b)
            stats.append({"k": k, **rec.stats, "max_fit_residual": float(np.max(rec.residuals))})
            current = peel_layer(current, rec, cfg.query_margin * current.scale, cfg.rank_tol)
        k = 0
        M0, b0, resid = recover_last_affine(current, rng=rng, tol=cfg.affine_tol)
        layers[0] = (M0, b0)
        stats.append({"k": 0, "affine_residual": resid})
    except BudgetExhausted as exc:
        return RecoveryResult(None, space.used, stats, str(exc), k, "", True)
    except NotAffine as exc:
        return RecoveryResult(None, space.used, stats, f"layer 0: {exc}", 0,
                              "P.c/P.d at k=1 (extra folds in the last residual)")
    except RecoveryError as exc:
        suspect = exc.suspect or _suspect(k, K)
        return RecoveryResult(None, space.used, stats, f"layer {k}: {exc}", k, suspect)
    params = NetworkParams.from_layers(layers)
    return RecoveryResult(params, space.used, stats)

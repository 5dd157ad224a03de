"""Numeric checks of the identifiability conditions P.a to P.d.

Each check returns :class:`Verdict` objects.  A failing verdict carries a
witness that can be re-checked on its own: singular values for P.a, the range
of the offending pre-activation for P.b, a point of ``E_i ∩ D ∩ Omega_k`` for
P.c, and the covering hyperplane with its samples for P.d.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import DomainSpec
from .network import NetworkParams, eval_f_k
from .polytope import INTERIOR_SLACK, max_slack_point, solve_lp
from .regions import (MAX_UNITS, PushforwardDomain, Region, Stack, enumerate_cells,
                      enumerate_regions, expanded_bbox, layer_stack, pushforward_domain)

PASS, FAIL, UNDETERMINED = "pass", "fail", "undetermined"


@dataclass
class Tolerances:
    rank_tol: float = 1e-10
    col_tol: float = 1e-10
    membership: float = 1e-8
    interior: float = INTERIOR_SLACK

    def __post_init__(self):
        for name, v in vars(self).items():
            if not v > 0:
                raise ValueError(f"tolerance {name} must be > 0")


@dataclass
class Verdict:
    condition: str
    k: int
    status: str
    mode: str = "exact"
    witness: dict = field(default_factory=dict)
    detail: str = ""

    @property
    def label(self) -> str:
        return f"{self.condition}@{self.k}"

    def line(self) -> str:
        s = f"{self.condition} {self.status} k={self.k}"
        if self.mode != "exact":
            s += f" ({self.mode})"
        if self.detail:
            s += f": {self.detail}"
        return s

    def to_document(self) -> dict:
        return {"condition": self.condition, "k": self.k, "status": self.status,
                "mode": self.mode, "detail": self.detail, "witness": _jsonable(self.witness)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _combine(condition: str, k: int, parts: list[Verdict]) -> Verdict:
    """Fold per-unit verdicts into one per layer: any fail wins, then undetermined."""
    fails = [p for p in parts if p.status == FAIL]
    unds = [p for p in parts if p.status == UNDETERMINED]
    mode = "sampled" if any(p.mode == "sampled" for p in parts) else "exact"
    if fails:
        return Verdict(condition, k, FAIL, mode, {"items": [p.witness for p in fails]},
                       "; ".join(p.detail for p in fails))
    if unds:
        return Verdict(condition, k, UNDETERMINED, mode, {"items": [p.witness for p in unds]},
                       "; ".join(p.detail for p in unds))
    return Verdict(condition, k, PASS, mode, {"items": [p.witness for p in parts]})


# -- P.a -------------------------------------------------------------------

def check_P_a(params: NetworkParams, rank_tol: float = 1e-10) -> dict[int, Verdict]:
    """Full row rank of every hidden weight matrix ``M^k``, ``1 <= k <= K-1``."""
    out = {}
    for k in range(1, params.depth):
        M = params.weight(k)
        s = np.linalg.svd(M, compute_uv=False)
        smax = float(s.max()) if s.size else 0.0
        # a wide-enough matrix has n_k singular values; a tall one cannot be full row rank
        smin = float(s.min()) if M.shape[0] <= M.shape[1] else 0.0
        ok = M.shape[0] <= M.shape[1] and smax > 0 and smin >= rank_tol * smax * max(M.shape)
        out[k] = Verdict("P.a", k, PASS if ok else FAIL,
                         witness={"sigma_min": smin, "sigma_max": smax, "shape": list(M.shape)},
                         detail="" if ok else f"M^{k} of shape {M.shape} is not full row rank "
                                              f"(sigma_min={smin:.3g})")
    return out


# -- P.b -------------------------------------------------------------------

def hyperplane_hits_interior(push: PushforwardDomain, w: np.ndarray, beta: float,
                             slack: float = INTERIOR_SLACK):
    """Find ``y`` in the interior of ``Omega`` with ``w.y + beta = 0`` (exact pushforward).

    Returns ``(y, x, cell_index)`` or None.
    """
    for idx, pc in enumerate(push.cells):
        if not pc.full_rank:
            continue
        row = w @ pc.A
        if np.linalg.norm(row) <= 1e-14 * max(1.0, np.linalg.norm(w)):
            continue
        P = pc.cell.polytope()
        x, t = max_slack_point(P.A, P.u, row[None, :], np.array([-(w @ pc.d + beta)]))
        if x is not None and t >= slack:
            return pc.A @ x + pc.d, x, idx
    return None


def preactivation_range(push: PushforwardDomain, w: np.ndarray, beta: float):
    """``(min, max)`` of ``w.y + beta`` over ``Omega``."""
    if not push.exact:
        vals = push.samples @ w + beta
        return float(vals.min()), float(vals.max())
    lo, hi = np.inf, -np.inf
    for pc in push.cells:
        P = pc.cell.polytope()
        row = w @ pc.A
        off = float(w @ pc.d + beta)
        if np.all(row == 0):
            lo, hi = min(lo, off), max(hi, off)
            continue
        for sign in (1.0, -1.0):
            res = solve_lp(sign * row, P.A, P.u)
            if res.status == 0:
                v = float(row @ res.x + off)
                lo, hi = min(lo, v), max(hi, v)
    return lo, hi


def _sampled_crossing(params, k, i, push: PushforwardDomain, rng, n_pairs=2000):
    """Bisect input segments whose endpoints give opposite pre-activation signs."""
    w, beta = params.weight(k)[i], params.bias(k)[i]
    xs, ys = push.inputs, push.samples
    vals = ys @ w + beta
    pos, neg = np.flatnonzero(vals > 0), np.flatnonzero(vals < 0)
    if not len(pos) or not len(neg):
        return None
    stack_full = None
    for _ in range(n_pairs):
        a, b = xs[rng.choice(pos)], xs[rng.choice(neg)]
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            v = eval_f_k(params, k + 1, a + mid * (b - a)) @ w + beta
            lo, hi = (mid, hi) if v > 0 else (lo, mid)
        x = a + 0.5 * (lo + hi) * (b - a)
        if not push.domain.contains(x) or np.any(np.isclose(x, push.domain.lo)) \
                or np.any(np.isclose(x, push.domain.hi)):
            continue
        from .regions import head_stack
        stack_full = stack_full or head_stack(params, k + 1)
        _, _, _, A, d = stack_full.affine_system(stack_full.pattern(x))
        if A.shape[0] <= A.shape[1] and np.linalg.matrix_rank(A) == A.shape[0]:
            return A @ x + d, x
    return None


def check_P_b(params: NetworkParams, domain: DomainSpec, k: int,
              push: PushforwardDomain | None = None, tol: Tolerances | None = None,
              seed: int = 0) -> Verdict:
    """Every hyperplane ``M^k_i y + b^k_i = 0`` meets the interior of ``Omega_{k+1}``."""
    tol = tol or Tolerances()
    push = push or pushforward_domain(params, domain, k + 1, seed=seed)
    M, b = params.weight(k), params.bias(k)
    parts = []
    rng = np.random.default_rng(seed)
    for i in range(M.shape[0]):
        if push.exact:
            hit = hyperplane_hits_interior(push, M[i], b[i], tol.interior)
            if hit is not None:
                parts.append(Verdict("P.b", k, PASS, witness={"i": i, "y": hit[0], "x": hit[1]}))
                continue
            lo, hi = preactivation_range(push, M[i], b[i])
            parts.append(Verdict("P.b", k, FAIL, witness={"i": i, "range": [lo, hi]},
                                 detail=f"unit {i} pre-activation stays in [{lo:.6g}, {hi:.6g}]"))
        else:
            hit = _sampled_crossing(params, k, i, push, rng)
            if hit is not None:
                parts.append(Verdict("P.b", k, PASS, "sampled", {"i": i, "y": hit[0], "x": hit[1]}))
            else:
                lo, hi = preactivation_range(push, M[i], b[i])
                parts.append(Verdict("P.b", k, UNDETERMINED, "sampled",
                                     {"i": i, "range": [lo, hi]},
                                     f"no interior crossing found for unit {i}"))
    return _combine("P.b", k, parts)


# -- P.c -------------------------------------------------------------------

def meets_coordinate_plane(push: PushforwardDomain, region: Region, i: int, tol: float = 1e-9):
    """A point of ``{y_i = 0} ∩ D ∩ Omega`` as ``(y, x)``, or None (closed sets, exact mode)."""
    RA, Ru = region.cell.A, region.cell.u
    for pc in push.cells:
        P = pc.cell.polytope()
        A_ub = np.vstack([P.A, RA @ pc.A]) if len(RA) else P.A
        u_ub = np.concatenate([P.u, Ru - RA @ pc.d]) if len(RA) else P.u
        E = pc.A[i][None, :]
        e = np.array([-pc.d[i]])
        if np.all(E == 0):
            if abs(pc.d[i]) > tol:
                continue
            E = e = None
        x, t = max_slack_point(A_ub, u_ub, E, e)
        if x is not None and t >= -tol:
            return pc.A @ x + pc.d, x
    return None


def check_P_c(params: NetworkParams, domain: DomainSpec, k: int,
              regions: list[Region] | None = None, push: PushforwardDomain | None = None,
              tol: Tolerances | None = None, seed: int = 0) -> Verdict:
    """Where ``E_i ∩ D ∩ Omega_k`` is nonempty the column ``V_{.,i}(D)`` is nonzero."""
    tol = tol or Tolerances()
    push = push or pushforward_domain(params, domain, k, seed=seed)
    regions = regions if regions is not None else enumerate_regions(params, k, domain)
    parts = []
    mode = "exact" if push.exact else "sampled"
    for r in regions:
        norms = np.linalg.norm(r.V, axis=0)
        for i in np.flatnonzero(norms < tol.col_tol):
            if push.exact:
                hit = meets_coordinate_plane(push, r, int(i))
            else:
                ys = push.samples
                cand = ys[np.abs(ys[:, i]) <= 1e-12]
                hit = next(((y, None) for y in cand if r.contains(y, 1e-9)), None)
            if hit is not None:
                parts.append(Verdict("P.c", k, FAIL, mode,
                                     {"pattern": r.pattern, "i": int(i), "y": hit[0], "x": hit[1],
                                      "column_norm": float(norms[i])},
                                     f"region {_fmt_pattern(r.pattern)} has V[:, {i}] = 0 "
                                     f"and meets E_{i} inside Omega_{k}"))
            elif not push.exact:
                parts.append(Verdict("P.c", k, UNDETERMINED, mode,
                                     {"pattern": r.pattern, "i": int(i)},
                                     f"zero column {i} in region {_fmt_pattern(r.pattern)} "
                                     "not decided by samples"))
    if not parts:
        return Verdict("P.c", k, PASS, mode, {"regions": len(regions)})
    return _combine("P.c", k, parts)


def _fmt_pattern(pattern) -> str:
    return "|".join("".join(str(b) for b in layer) for layer in pattern) or "-"


# -- P.d -------------------------------------------------------------------

@dataclass
class Candidate:
    normal: np.ndarray
    offset: float
    source: str


def _canonical(n: np.ndarray, c: float):
    nrm = np.linalg.norm(n)
    n, c = n / nrm, c / nrm
    j = int(np.flatnonzero(np.abs(n) > 1e-12)[0])
    if n[j] < 0:
        n, c = -n, -c
    return n, c


def pd_candidates(params: NetworkParams, k: int, regions: list[Region],
                  layer_cells) -> list[Candidate]:
    """Hyperplanes of ``R^{n_{k+1}}`` that can carry the preimage boundaries under ``h_k``."""
    M, b = params.weight(k), params.bias(k)
    raw = []
    for i in range(M.shape[0]):
        if np.linalg.norm(M[i]) > 0:
            raw.append((M[i], b[i], f"unit {i} of layer {k}"))
    for r in regions:
        for a, c in zip(r.cell.normals, r.cell.offsets):
            for cell in layer_cells:
                s = np.asarray(cell.pattern[0], dtype=float)
                n = M.T @ (s * a)
                if np.linalg.norm(n) <= 1e-12 * max(1.0, np.linalg.norm(a)):
                    continue
                raw.append((n, float(a @ (s * b) + c),
                            f"facet of {_fmt_pattern(r.pattern)} through cell "
                            f"{_fmt_pattern(cell.pattern)}"))
    out: list[Candidate] = []
    for n, c, src in raw:
        n, c = _canonical(np.asarray(n, dtype=float), float(c))
        if any(np.max(np.abs(n - q.normal)) <= 1e-9 and abs(c - q.offset) <= 1e-9 * (1 + abs(c))
               for q in out):
            continue
        out.append(Candidate(n, c, src))
    return out


class _RegionTable:
    """All region constraints stacked, for vectorized membership tests in ``R^{n_k}``."""

    def __init__(self, regions: list[Region]):
        rows, rhs, starts = [], [], []
        pos = 0
        for r in regions:
            A, u = r.cell.A, r.cell.u
            starts.append(pos)
            if len(A):
                nrm = np.linalg.norm(A, axis=1)
                rows.append(A / nrm[:, None])
                rhs.append(u / nrm)
                pos += len(A)
            else:
                # a region without constraints is the whole space
                rows.append(np.zeros((1, regions[0].V.shape[1])))
                rhs.append(np.ones(1))
                pos += 1
        self.A = np.vstack(rows)
        self.u = np.concatenate(rhs)
        self.starts = np.array(starts)

    def violation(self, Z: np.ndarray) -> np.ndarray:
        """Largest normalized constraint violation, shape ``(len(Z), n_regions)``."""
        V = Z @ self.A.T - self.u
        return np.maximum.reduceat(V, self.starts, axis=1)


def boundary_membership(layer: Stack, table: _RegionTable, ys: np.ndarray, normal: np.ndarray,
                        tol: float = 1e-8, rng=None, n_dirs: int = 4) -> np.ndarray:
    """Classify points as on (1), off (0) or ambiguous (-1) w.r.t. the preimage boundaries.

    A point ``y`` is on the union when some region containing ``h_k(y)`` is
    left by ``h_k`` under an arbitrarily small perturbation of ``y``.  The
    probe uses the candidate normal and a few random directions at two step
    sizes; the two sizes must agree for a definite answer.
    """
    ys = np.atleast_2d(ys)
    Z = layer(ys)
    zn = 1 + np.linalg.norm(Z, axis=1, keepdims=True)
    inside = table.violation(Z) <= tol * zn
    dirs = [normal]
    if rng is not None and n_dirs:
        extra = rng.standard_normal((n_dirs, ys.shape[1]))
        dirs.extend(extra / np.linalg.norm(extra, axis=1, keepdims=True))
    base = 1e-5 * (1.0 + np.linalg.norm(ys, axis=1, keepdims=True))
    verdicts = []
    for scale in (1.0, 1e-2):
        delta = scale * base
        left = np.zeros(len(ys), dtype=bool)
        for d in dirs:
            for sgn in (1.0, -1.0):
                viol = table.violation(layer(ys + sgn * delta * d))
                left |= np.any(inside & (viol > 1e-6 * delta), axis=1)
        verdicts.append(left)
    out = np.full(len(ys), -1)
    out[verdicts[0] & verdicts[1]] = 1
    out[~verdicts[0] & ~verdicts[1]] = 0
    out[~np.any(inside, axis=1)] = -1
    return out


def _candidate_slices(push: PushforwardDomain, cand: Candidate, slack: float = INTERIOR_SLACK):
    """Slices ``cand ∩ P`` of the full-rank cells whose image meets the candidate inside."""
    hits = []
    for pc in push.cells:
        if not pc.full_rank:
            continue
        row = cand.normal @ pc.A
        if np.linalg.norm(row) <= 1e-14:
            continue
        P = pc.cell.polytope().slice(row[None, :], [-(cand.normal @ pc.d + cand.offset)])
        x, t = max_slack_point(P.A, P.u, P.E, P.e)
        if x is not None and t >= slack:
            hits.append([pc, P, x])
    return hits


def _sample_slices(hits, n: int, rng) -> np.ndarray:
    """``n`` points spread evenly over the slices, continuing each chain where it stopped."""
    per = int(np.ceil(n / len(hits)))
    pts = []
    for h in hits:
        pc, P, x0 = h
        xs = P.sample(per, rng, burn=10, thin=3, x0=x0)
        h[2] = xs[-1]
        pts.append(xs @ pc.A.T + pc.d)
    return np.vstack(pts)[:n]


def check_P_d(params: NetworkParams, domain: DomainSpec, k: int,
              regions: list[Region] | None = None, push: PushforwardDomain | None = None,
              tol: Tolerances | None = None, seed: int = 0, n_samples: int = 512) -> Verdict:
    """No hyperplane section of ``interior(Omega_{k+1})`` lies inside the preimage boundaries.

    Only finitely many hyperplanes can carry those boundaries; each one that
    meets the interior is sampled and every sample is tested for membership.
    """
    tol = tol or Tolerances()
    regions = regions if regions is not None else enumerate_regions(params, k, domain)
    if len(regions) <= 1:
        return Verdict("P.d", k, PASS, "exact", {"candidates": 0},
                       "g_k is affine on the relevant range")
    push = push or pushforward_domain(params, domain, k + 1, seed=seed)
    if not push.exact:
        return Verdict("P.d", k, UNDETERMINED, "sampled", {},
                       "P.d needs the exact pushforward of the domain")
    rng = np.random.default_rng(seed)
    clip = expanded_bbox(push.lo, push.hi)
    layer = layer_stack(params, k)
    cells = enumerate_cells(layer, clip, max_units=MAX_UNITS)
    cands = pd_candidates(params, k, regions, cells)
    table = _RegionTable(regions)
    parts = []
    n_met = 0
    batch = 64
    for cand in cands:
        hits = _candidate_slices(push, cand, tol.interior)
        if not hits:
            continue
        n_met += 1
        n_on = n_off = n_seen = 0
        example = None
        while n_seen < n_samples:
            ys = _sample_slices(hits, min(batch, n_samples - n_seen), rng)
            lab = boundary_membership(layer, table, ys, cand.normal, tol.membership, rng)
            example = ys[0] if example is None else example
            n_seen += len(ys)
            n_on += int(np.sum(lab == 1))
            n_off += int(np.sum(lab == 0))
            if n_off:
                break
        if n_off:
            continue
        wit = {"normal": cand.normal, "offset": cand.offset, "source": cand.source,
               "samples": n_seen, "on": n_on, "off": n_off, "example": example}
        if n_on == n_seen:
            parts.append(Verdict("P.d", k, FAIL, "sampled", wit,
                                 f"hyperplane {np.round(cand.normal, 6).tolist()}.y + "
                                 f"{cand.offset:.6g} = 0 lies in the preimage boundaries "
                                 f"({n_on} of {n_seen} samples)"))
        else:
            parts.append(Verdict("P.d", k, UNDETERMINED, "sampled", wit,
                                 f"mixed evidence on candidate from {cand.source}"))
    if not parts:
        return Verdict("P.d", k, PASS, "sampled", {"candidates": len(cands), "meeting": n_met})
    return _combine("P.d", k, parts)


# -- all conditions ----------------------------------------------------------

@dataclass
class ConditionReport:
    verdicts: list[Verdict]
    seed: int
    tolerances: Tolerances
    domain: DomainSpec

    @property
    def status(self) -> str:
        st = [v.status for v in self.verdicts]
        if FAIL in st:
            return FAIL
        if UNDETERMINED in st:
            return UNDETERMINED
        return PASS

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def failures(self) -> list[str]:
        return [v.label for v in self.verdicts if v.status == FAIL]

    def get(self, condition: str, k: int) -> Verdict:
        for v in self.verdicts:
            if v.condition == condition and v.k == k:
                return v
        raise KeyError((condition, k))

    def exit_code(self) -> int:
        return {PASS: 0, FAIL: 1, UNDETERMINED: 2}[self.status]

    def lines(self) -> list[str]:
        return [v.line() for v in self.verdicts]

    def to_document(self) -> dict:
        return {"status": self.status, "seed": self.seed,
                "tolerances": vars(self.tolerances), "omega": self.domain.to_document(),
                "verdicts": [v.to_document() for v in self.verdicts]}


def check_P(params: NetworkParams, domain: DomainSpec, tol: Tolerances | None = None,
            seed: int = 0, n_samples: int = 512, stop_early: bool = False) -> ConditionReport:
    """All four conditions at every hidden layer.

    With ``stop_early`` the checks stop at the first failure, which is enough
    for screening; the report then holds only the verdicts computed so far.
    """
    tol = tol or Tolerances()
    K = params.depth
    verdicts = list(check_P_a(params, tol.rank_tol).values())
    order = {"P.a": 0, "P.b": 1, "P.c": 2, "P.d": 3}

    def report():
        verdicts.sort(key=lambda v: (v.k, order[v.condition]))
        return ConditionReport(verdicts, seed, tol, domain)

    if stop_early and any(v.status == FAIL for v in verdicts):
        return report()
    pushes = {}

    def push(j):
        if j not in pushes:
            pushes[j] = pushforward_domain(params, domain, j, seed=seed)
        return pushes[j]

    for k in range(1, K):
        steps = [
            lambda: check_P_b(params, domain, k, push(k + 1), tol, seed),
            lambda: check_P_c(params, domain, k, regions, push(k), tol, seed),
            lambda: check_P_d(params, domain, k, regions, push(k + 1), tol, seed, n_samples),
        ]
        regions = enumerate_regions(params, k, domain)
        for step in steps:
            verdicts.append(step())
            if stop_early and verdicts[-1].status == FAIL:
                return report()
    return report()

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .polytope import Polytope

BIG_BOX_RADIUS = 1e6


class DomainError(ValueError):
    """A point lies outside the query domain, or the domain itself is invalid."""


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned box ``[lo, hi]`` used as the query domain."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise DomainError("lo and hi must be nonempty vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DomainError("box bounds must be finite")
        if np.any(lo >= hi):
            raise DomainError("need lo < hi in every coordinate")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, dim: int, lo: float, hi: float) -> "DomainSpec":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @classmethod
    def big_box(cls, dim: int, radius: float = BIG_BOX_RADIUS) -> "DomainSpec":
        """Stand-in for the whole input space."""
        return cls.cube(dim, -radius, radius)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def scale(self) -> float:
        return float(np.max(self.hi - self.lo))

    def polytope(self) -> Polytope:
        return Polytope.box(self.lo, self.hi)

    def contains(self, x, tol: float = 0.0) -> np.ndarray | bool:
        x = np.asarray(x, dtype=float)
        inside = np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)
        return bool(inside) if np.ndim(inside) == 0 else inside

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        """Scrambled Sobol points, deterministic per seed."""
        if n <= 0:
            return np.empty((0, self.dim))
        sampler = qmc.Sobol(self.dim, scramble=True, seed=seed)
        m = int(np.ceil(np.log2(max(n, 2))))
        pts = sampler.random_base2(m)[:n]
        return qmc.scale(pts, self.lo, self.hi)

    def uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.dim))

    def to_document(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_document(cls, doc: dict) -> "DomainSpec":
        return cls(doc["lo"], doc["hi"])

"""Black-box access, teacher networks, the example catalog and risk estimates."""
from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from importlib import resources
from typing import Callable

import numpy as np

from .domain import BIG_BOX_RADIUS, DomainError, DomainSpec
from .equivalence import normalize
from .network import Architecture, NetworkParams, forward, from_document, to_document


class BudgetExhausted(RuntimeError):
    """The oracle refused a query because the budget is spent."""


class QueryOracle:
    """Counted, domain-checked access to a function ``R^{n_in} -> R^{n_out}``.

    Every evaluated point costs one query, whether it arrives alone or in a
    batch.  Batches are all-or-nothing against the budget.
    """

    def __init__(self, fn: Callable, domain: DomainSpec, budget: int | None = None,
                 params: NetworkParams | None = None, tol: float = 0.0):
        self._fn = fn
        self.domain = domain
        self.budget = budget
        self.params = params
        self.tol = tol
        self._count = 0
        self._lock = threading.Lock()

    @classmethod
    def from_params(cls, params: NetworkParams, domain: DomainSpec, budget: int | None = None):
        return cls(lambda x: forward(params, x), domain, budget, params)

    @property
    def count(self) -> int:
        return self._count

    @property
    def remaining(self) -> float:
        return np.inf if self.budget is None else self.budget - self._count

    def _charge(self, n: int):
        with self._lock:
            if self.budget is not None and self._count + n > self.budget:
                raise BudgetExhausted(f"query budget {self.budget} exhausted")
            self._count += n

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.domain.dim:
            raise DomainError(f"query of dimension {X.shape[1]}, domain has {self.domain.dim}")
        if not np.all(self.domain.contains(X, self.tol)):
            raise DomainError("query outside the domain")
        self._charge(X.shape[0])
        out = np.atleast_2d(np.asarray(self._fn(X), dtype=float))
        if out.shape[0] != X.shape[0]:
            out = out.reshape(X.shape[0], -1)
        return out[0] if single else out


# -- teachers --------------------------------------------------------------

def make_teacher(arch: Architecture | str, seed: int, mode: str = "gaussian") -> NetworkParams:
    """I.i.d. standard normal weights and biases; ``normalized-gaussian`` rescales hidden rows."""
    if isinstance(arch, str):
        arch = Architecture.parse(arch)
    if mode not in ("gaussian", "normalized-gaussian", "normalized"):
        raise ValueError(f"unknown teacher mode {mode!r}")
    rng = np.random.default_rng(seed)
    K = arch.depth
    layers = {}
    for k in range(K - 1, -1, -1):
        layers[k] = (rng.standard_normal((arch.width(k), arch.width(k + 1))),
                     rng.standard_normal(arch.width(k)))
    params = NetworkParams.from_layers(layers)
    if mode != "gaussian":
        params, _ = normalize(params)
    return params


# -- catalog ---------------------------------------------------------------

def _net(layers: dict) -> NetworkParams:
    return NetworkParams.from_layers({k: (np.array(m, dtype=float), np.array(b, dtype=float))
                                      for k, (m, b) in layers.items()})


def example1() -> tuple[NetworkParams, NetworkParams]:
    M1 = np.array([[0.0, 2.0], [1.0, -1.0], [-1.0, -1.0]])
    p = _net({1: (M1, [0, 0, 0]), 0: ([[1, 1, 1]], [0])})
    q = _net({1: (-M1, [0, 0, 0]), 0: ([[1, 1, 1]], [0])})
    return p, q


def example2(a: float) -> NetworkParams:
    return _net({1: ([[1]], [a]), 0: ([[1]], [-a])})


def example3(a: float) -> NetworkParams:
    return _net({2: ([[1]], [a]), 1: ([[1]], [-1 - a]), 0: ([[1]], [0])})


def example4() -> tuple[NetworkParams, NetworkParams]:
    p = _net({2: ([[1]], [0]), 1: ([[-1]], [1]), 0: ([[-1]], [0])})
    q = _net({2: ([[-1]], [1]), 1: ([[-1]], [1]), 0: ([[1]], [-1])})
    return p, q


def comparative() -> NetworkParams:
    return _net({2: (np.eye(2), [0, 0]),
                 1: ([[1, -1], [-1, 2]], [-1, 2]),
                 0: ([[1, 1]], [0])})


# closed forms of the catalog functions
def example2_f(x, a):
    return np.maximum(x + a, 0) - a


def example3_f(x):
    return np.maximum(x - 1, 0)


def example4_f(x):
    x = np.asarray(x, dtype=float)
    return np.where(x <= 1, np.maximum(x, 0) - 1, 0.0)


CONDITIONS = ("P.a", "P.b", "P.c", "P.d")


@dataclass
class Scenario:
    id: str
    params: list
    domain: DomainSpec
    expect: dict
    note: str = ""
    closed_form: Callable | None = None
    designated: str | None = None

    def to_document(self, index: int = 0) -> dict:
        doc = to_document(self.params[index])
        doc["omega"] = self.domain.to_document()
        doc["expect"] = dict(self.expect)
        return doc


SCENARIO_IDS = ("ex1", "ex2", "ex3", "ex4", "comparative")


def parse_scenario_id(text: str) -> tuple[str, list]:
    """``"ex2(1.5)"`` -> ``("ex2", [1.5])``; ``"ex3"`` -> ``("ex3", [])``."""
    m = re.fullmatch(r"\s*([a-z0-9]+)\s*(?:\(([^)]*)\))?\s*", text)
    if not m:
        raise KeyError(f"unknown scenario {text!r}")
    args = [float(v) for v in m.group(2).split(",")] if m.group(2) else []
    return m.group(1), args


def catalog(id: str, a=None, radius: float = BIG_BOX_RADIUS) -> Scenario:
    """Scenario for a catalog example.

    For ``ex2`` and ``ex3`` the parameter ``a`` may be a number or a pair; the
    pair ``(1, 2)`` is used by default and one network is built per value.
    """
    name, args = parse_scenario_id(id)
    if a is None:
        a = args if args else (1.0, 2.0)
    avals = [float(v) for v in np.atleast_1d(a)]
    ok = {c: "pass" for c in CONDITIONS}
    if name == "ex1":
        p, q = example1()
        return Scenario("ex1", [p, q], DomainSpec.big_box(2, radius),
                        {**ok, "P.a": "fail@k=1"}, "rank-deficient first layer",
                        designated="P.a@1")
    if name == "ex2":
        nets = [example2(v) for v in avals]
        return Scenario("ex2", nets, DomainSpec.cube(1, 1.0, 5.0),
                        {**ok, "P.b": "fail@k=1"}, "fold outside the domain",
                        closed_form=example2_f, designated="P.b@1")
    if name == "ex3":
        nets = [example3(v) for v in avals]
        # the designated failure is P.c; P.d fails at the same layer too
        return Scenario("ex3", nets, DomainSpec.big_box(1, radius),
                        {**ok, "P.c": "fail@k=2", "P.d": "fail@k=2"},
                        "dead downstream unit", closed_form=lambda x: example3_f(x),
                        designated="P.c@2")
    if name == "ex4":
        p, q = example4()
        return Scenario("ex4", [p, q], DomainSpec.big_box(1, radius),
                        {**ok, "P.d": "fail@k=2"}, "deeper fold is a full hyperplane",
                        closed_form=example4_f, designated="P.d@2")
    if name == "comparative":
        return Scenario("comparative", [comparative()], DomainSpec.cube(2, -10.0, 10.0), ok,
                        "two-layer example satisfying every condition")
    raise KeyError(f"unknown scenario {id!r}; choose from {', '.join(SCENARIO_IDS)}")


CATALOG_FILES = {
    "ex1.json": ("ex1", 0), "ex1_variant.json": ("ex1", 1),
    "ex2.json": ("ex2", 0), "ex2_a2.json": ("ex2", 1),
    "ex3.json": ("ex3", 0), "ex3_a2.json": ("ex3", 1),
    "ex4.json": ("ex4", 0), "ex4_variant.json": ("ex4", 1),
    "comparative.json": ("comparative", 0),
}


def catalog_documents() -> dict[str, dict]:
    return {fname: catalog(sid).to_document(i) for fname, (sid, i) in CATALOG_FILES.items()}


def load_catalog_file(name: str) -> dict:
    text = resources.files("reluid").joinpath("catalog", name).read_text()
    return json.loads(text)


def load_scenario_document(doc: dict) -> tuple[NetworkParams, DomainSpec | None, dict]:
    params = from_document(doc)
    omega = DomainSpec.from_document(doc["omega"]) if "omega" in doc else None
    return params, omega, doc.get("expect", {})


# -- function comparison ---------------------------------------------------

def _as_fn(f):
    if isinstance(f, NetworkParams):
        return lambda x: forward(f, x)
    return f


def functional_distance(f1, f2, domain: DomainSpec, n: int = 1000, seed: int = 0):
    """``(sup, mean)`` of ``|f1 - f2|`` over ``n`` scrambled Sobol points of the box."""
    if isinstance(f1, NetworkParams) and isinstance(f2, NetworkParams):
        if f1.arch.n_in != f2.arch.n_in or f1.arch.n_out != f2.arch.n_out:
            raise ValueError("input/output dimensions differ")
    xs = domain.sample(n, seed)
    gap = np.abs(np.atleast_2d(_as_fn(f1)(xs)) - np.atleast_2d(_as_fn(f2)(xs)))
    return float(gap.max()), float(gap.mean())


def squared_loss(y, yp):
    return np.sum((np.asarray(y) - np.asarray(yp)) ** 2, axis=-1)


@dataclass
class RiskEstimate:
    mean: float
    stderr: float
    n: int

    def significant(self, z: float = 5.0) -> bool:
        return self.mean > z * self.stderr


def estimate_risk(teacher, student, domain: DomainSpec, loss=squared_loss, n: int = 100_000,
                  seed: int = 0, sampler: Callable | None = None) -> RiskEstimate:
    """Monte-Carlo risk of ``student`` when labels come from ``teacher``."""
    rng = np.random.default_rng(seed)
    xs = sampler(n, rng) if sampler is not None else domain.uniform(n, rng)
    y = np.atleast_2d(_as_fn(teacher)(xs))
    losses = np.asarray(loss(y, np.atleast_2d(_as_fn(student)(xs))), dtype=float).reshape(-1)
    return RiskEstimate(float(losses.mean()), float(losses.std(ddof=1) / np.sqrt(len(losses))), n)

"""Command-line interface: ``reluid <subcommand> ...``.

Exit codes are shared by all subcommands: 0 success or pass, 1 definite
failure (including bad input), 2 undetermined or budget exhausted.
"""
from __future__ import annotations

import argparse
import json
import logging
import shlex
import subprocess
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .conditions import Tolerances, check_P
from .domain import DomainError, DomainSpec
from .equivalence import check_equivalent, normalize
from .network import (Architecture, NetworkFormatError, ShapeError, forward, to_document)
from .oracle import (BudgetExhausted, QueryOracle, catalog, estimate_risk,
                     functional_distance, load_scenario_document)
from .recovery import RecoveryConfig, recover_network
from .regions import enumerate_regions, first_layer_hyperplanes

log = logging.getLogger("reluid")

EXIT_OK, EXIT_FAIL, EXIT_UNDETERMINED = 0, 1, 2
DEFAULT_SEED = 0


class CommandError(Exception):
    """Bad arguments or input files; reported with exit code 1."""


@dataclass
class CommandConfig:
    command: str
    inputs: list = field(default_factory=list)
    out: str | None = None
    seed: int = DEFAULT_SEED
    budget: int | None = None
    box: list | None = None
    tolerances: dict = field(default_factory=dict)
    verbosity: int = 0

    def __post_init__(self):
        for name, v in self.tolerances.items():
            if v is not None and not v > 0:
                raise CommandError(f"tolerance {name} must be > 0, got {v}")
        if self.budget is not None and self.budget < 1:
            raise CommandError(f"budget must be >= 1, got {self.budget}")


# -- io helpers ------------------------------------------------------------

def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path}: invalid JSON ({exc})") from exc


def _load_net(path):
    """``(params, omega or None)`` from a network or scenario file."""
    doc = _read_json(path)
    try:
        params, omega, _ = load_scenario_document(doc)
    except (NetworkFormatError, ShapeError, KeyError, TypeError, ValueError) as exc:
        raise CommandError(f"{path}: {exc}") from exc
    return params, omega


def _read_points(path) -> np.ndarray:
    """Points as rows; JSON lists or whitespace-separated text."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc.strerror}") from exc
    if not text.strip():
        return np.empty((0, 0))
    try:
        if text.lstrip().startswith("["):
            X = np.array(json.loads(text), dtype=float)
        else:
            X = np.array([[float(v) for v in ln.split()] for ln in text.splitlines() if ln.strip()])
    except (ValueError, json.JSONDecodeError) as exc:
        raise CommandError(f"{path}: cannot parse points ({exc})") from exc
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise CommandError(f"{path}: points must form a 2-d array")
    return X


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _domain(args, omega, dim: int) -> DomainSpec:
    if args.box:
        lo = [b[0] for b in args.box]
        hi = [b[1] for b in args.box]
        if len(lo) == 1 and dim > 1:
            lo, hi = lo * dim, hi * dim
        if len(lo) != dim:
            raise CommandError(f"--box given for {len(lo)} dimensions, the input has {dim}")
        try:
            return DomainSpec(lo, hi)
        except DomainError as exc:
            raise CommandError(str(exc)) from exc
    if omega is not None:
        return omega
    raise CommandError("no domain: pass --box LO HI or use a scenario file with 'omega'")


def _tolerances(args) -> Tolerances:
    vals = {k: getattr(args, f"tol_{k}") for k in ("rank", "col", "membership", "interior")}
    return Tolerances(**{f"{k}_tol" if k in ("rank", "col") else k: v
                         for k, v in vals.items() if v is not None})


# -- subprocess oracle -----------------------------------------------------

class SubprocessFunction:
    """Line protocol: one input vector per line out, one output vector per line back."""

    def __init__(self, command: str, n_workers: int = 1):
        argv = shlex.split(command)
        self.procs = [subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                       text=True, bufsize=1) for _ in range(max(1, n_workers))]
        self.locks = [threading.Lock() for _ in self.procs]

    def _ask(self, i: int, X: np.ndarray) -> np.ndarray:
        proc = self.procs[i]
        out = []
        with self.locks[i]:
            for x in X:
                proc.stdin.write(" ".join(repr(float(v)) for v in x) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
                if not line:
                    raise RuntimeError("oracle process closed its output")
                out.append([float(v) for v in line.split()])
        return np.array(out)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        if len(self.procs) == 1 or len(X) < 2 * len(self.procs):
            return self._ask(0, X)
        chunks = np.array_split(X, len(self.procs))
        with ThreadPoolExecutor(len(self.procs)) as pool:
            parts = list(pool.map(self._ask, range(len(chunks)), chunks))
        return np.vstack(parts)

    def close(self):
        for p in self.procs:
            if p.stdin:
                p.stdin.close()
            p.wait(timeout=5)


# -- subcommands -----------------------------------------------------------

def cmd_eval(args) -> int:
    params, _ = _load_net(args.net)
    X = _read_points(args.points)
    if X.size == 0:
        _emit("", args.out)
        return EXIT_OK
    if X.shape[1] != params.arch.n_in:
        raise CommandError(f"points have dimension {X.shape[1]}, the network expects "
                           f"{params.arch.n_in}")
    Y = np.atleast_2d(forward(params, X))
    _emit("\n".join(" ".join(repr(float(v)) for v in row) for row in Y), args.out)
    return EXIT_OK


def cmd_check(args) -> int:
    params, omega = _load_net(args.net)
    domain = _domain(args, omega, params.arch.n_in)
    report = check_P(params, domain, _tolerances(args), seed=args.seed, n_samples=args.samples)
    if args.json or args.out:
        doc = report.to_document()
        doc["config"] = {"seed": args.seed, "samples": args.samples}
        _emit(json.dumps(doc, indent=2), args.out)
    if not args.json:
        print("\n".join(report.lines()))
        print(f"overall: {report.status}")
    return report.exit_code()


def cmd_equiv(args) -> int:
    p1, _ = _load_net(args.net_a)
    p2, _ = _load_net(args.net_b)
    w = check_equivalent(p1, p2, args.tol)
    if w is None:
        print("not equivalent")
        return EXIT_FAIL
    text = w.dumps()
    if args.out:
        _emit(text, args.out)
        print(f"equivalent; witness written to {args.out}")
    else:
        print("equivalent")
        print(text)
    return EXIT_OK


def cmd_normalize(args) -> int:
    params, _ = _load_net(args.net)
    normed, w = normalize(params)
    _emit(json.dumps(to_document(normed)), args.out)
    if args.witness_out:
        Path(args.witness_out).write_text(w.dumps())
    return EXIT_OK


def cmd_recover(args) -> int:
    teacher = None
    omega = None
    if args.teacher:
        teacher, omega = _load_net(args.teacher)
        arch = teacher.arch
        if args.arch and Architecture.parse(args.arch) != arch:
            raise CommandError("--arch does not match the teacher file")
    elif args.oracle_cmd:
        if not args.arch:
            raise CommandError("--arch is required with --oracle-cmd")
        arch = Architecture.parse(args.arch)
    else:
        raise CommandError("give a teacher file or --oracle-cmd")
    domain = _domain(args, omega, arch.n_in)
    cfg = RecoveryConfig(seed=args.seed, budget=args.budget or RecoveryConfig.budget)
    print(f"seed: {args.seed}", file=sys.stderr)
    fn = None
    if teacher is not None:
        oracle = QueryOracle.from_params(teacher, domain)
    else:
        fn = SubprocessFunction(args.oracle_cmd, args.parallel)
        oracle = QueryOracle(fn, domain)
    t0 = time.perf_counter()
    try:
        result = recover_network(oracle, arch, cfg)
    finally:
        if fn is not None:
            fn.close()
    doc = result.to_document()
    doc["seconds"] = time.perf_counter() - t0
    doc["config"] = {k: (v if np.isfinite(v) else None) if isinstance(v, float) else v
                     for k, v in asdict(cfg).items()}
    code = EXIT_OK
    if result.success and teacher is not None:
        w = check_equivalent(result.params, teacher, args.tol)
        doc["equivalent_to_teacher"] = w is not None
        if w is None:
            code = EXIT_FAIL
    if args.out:
        _emit(json.dumps(doc, indent=2), args.out)
    if result.budget_exhausted:
        print(f"budget exhausted after {result.queries} queries", file=sys.stderr)
        return EXIT_UNDETERMINED
    if not result.success:
        print(f"recovery failed: {result.error}", file=sys.stderr)
        print(f"suspected condition: {result.suspect}", file=sys.stderr)
        return EXIT_FAIL
    if not args.out:
        print(json.dumps(to_document(result.params)))
    print(f"queries: {result.queries}", file=sys.stderr)
    if "equivalent_to_teacher" in doc:
        print("equivalent to teacher" if doc["equivalent_to_teacher"]
              else "not equivalent to teacher", file=sys.stderr)
    return code


def cmd_risk(args) -> int:
    teacher, omega = _load_net(args.teacher)
    student, _ = _load_net(args.student)
    domain = _domain(args, omega, teacher.arch.n_in)
    est = estimate_risk(teacher, student, domain, n=args.n, seed=args.seed)
    print(f"risk: {est.mean:.6g} +- {est.stderr:.3g} (n={est.n}, seed={args.seed})")
    return EXIT_OK


# -- demos -----------------------------------------------------------------

def _fmt(v) -> str:
    v = float(v)
    return str(int(v)) if v == int(v) else f"{v:.6g}"


def _demo_pair(sc, xs):
    p, q = sc.params[:2]
    fp, fq = np.ravel(forward(p, xs)), np.ravel(forward(q, xs))
    print(f"{'x':>10} {'f':>12} {'f~':>12}")
    for x, a, b in zip(np.ravel(xs), fp, fq):
        print(f"{x:10.4g} {a:12.6g} {b:12.6g}")
    sup, mean = functional_distance(p, q, sc.domain, 1000, seed=0)
    print(f"sup |f - f~| on 1000 points of the domain: {sup:.3g}")
    print("equivalent" if check_equivalent(p, q) is not None else "not equivalent")


def _demo_verdicts(params, domain):
    report = check_P(params, domain)
    for line in report.lines():
        print("  " + line)


def demo(id: str, a=None) -> int:
    try:
        sc = catalog(id, a)
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return EXIT_FAIL
    print(f"== {sc.id}: {sc.note}")
    print(f"domain: lo={sc.domain.lo.tolist()} hi={sc.domain.hi.tolist()}")
    if sc.id == "comparative":
        p = sc.params[0]
        regions = enumerate_regions(p, 2, sc.domain)
        print("affine pieces of g_2:")
        print(f"{'pattern':>10} {'V':>14} {'c':>6}")
        for r in regions:
            V = "(" + ", ".join(_fmt(v) for v in r.V.ravel()) + ")"
            print(f"{''.join(map(str, r.pattern[0])):>10} {V:>14} {_fmt(r.c[0]):>6}")
        print("first-layer folds (a.x + c = 0):")
        for h in first_layer_hyperplanes(p):
            print(f"  a={[_fmt(v) for v in h.a]} c={_fmt(h.c)}")
        print("fold points (x1 x2) on the box edges:")
        for h in first_layer_hyperplanes(p):
            for x1 in (-10.0, 10.0):
                if abs(h.a[1]) > 1e-12:
                    x2 = -(h.a[0] * x1 + h.c) / h.a[1] + 0.0
                    if -10 <= x2 <= 10:
                        print(f"  {x1:g} {x2:.6g}")
        print("conditions:")
        _demo_verdicts(p, sc.domain)
        return EXIT_OK
    if sc.id in ("ex2", "ex3"):
        if len(sc.params) < 2:
            print("need two values of a to compare; showing one network")
            sc.params = sc.params * 2
        print("a values: " + ", ".join(_fmt(v) for v in (a if a is not None else (1, 2))))
        xs = np.linspace(sc.domain.lo[0], min(sc.domain.hi[0], 5.0), 9)[:, None] \
            if sc.id == "ex2" else np.linspace(-10, 10, 9)[:, None]
        if sc.id == "ex3":
            sc.domain = DomainSpec.cube(1, -10, 10)
        _demo_pair(sc, xs)
    elif sc.id == "ex1":
        xs = DomainSpec.cube(2, -10, 10).sample(6, seed=0)
        p, q = sc.params
        print(f"{'x1':>9} {'x2':>9} {'f':>11} {'f~':>11}")
        for x, u, v in zip(xs, np.ravel(forward(p, xs)), np.ravel(forward(q, xs))):
            print(f"{x[0]:9.4g} {x[1]:9.4g} {u:11.6g} {v:11.6g}")
        sup, _ = functional_distance(p, q, DomainSpec.cube(2, -10, 10), 1000, seed=0)
        print(f"sup |f - f~| on 1000 points of [-10,10]^2: {sup:.3g}")
        print("equivalent" if check_equivalent(p, q) is not None else "not equivalent")
    elif sc.id == "ex4":
        sc.domain = DomainSpec.cube(1, -10, 10)
        _demo_pair(sc, np.array([[-2.0], [0.0], [0.5], [1.0], [1.5], [3.0]]))
    print("conditions for the first network:")
    _demo_verdicts(sc.params[0], catalog(id, a).domain)
    return EXIT_OK


def cmd_demo(args) -> int:
    return demo(args.id, args.a)


# -- parser ----------------------------------------------------------------

def _add_common(p, box=True, seed=True, out=True):
    if box:
        p.add_argument("--box", nargs=2, type=float, action="append", metavar=("LO", "HI"),
                       help="domain bounds; repeat once per input dimension")
    if seed:
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    if out:
        p.add_argument("--out", help="write the result to this file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reluid",
                                     description="ReLU network identifiability toolkit")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="evaluate a network on points")
    p.add_argument("net")
    p.add_argument("points")
    _add_common(p, box=False, seed=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="check the identifiability conditions")
    p.add_argument("net")
    _add_common(p)
    p.add_argument("--tol-rank", type=float)
    p.add_argument("--tol-col", type=float)
    p.add_argument("--tol-membership", type=float)
    p.add_argument("--tol-interior", type=float)
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("equiv", help="decide equivalence of two networks")
    p.add_argument("net_a")
    p.add_argument("net_b")
    p.add_argument("--tol", type=float, default=1e-6)
    _add_common(p, box=False, seed=False)
    p.set_defaults(func=cmd_equiv)

    p = sub.add_parser("normalize", help="rescale hidden rows to unit norm")
    p.add_argument("net")
    p.add_argument("--witness-out")
    _add_common(p, box=False, seed=False)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("recover", help="recover parameters from function values")
    p.add_argument("teacher", nargs="?")
    p.add_argument("--oracle-cmd", help="external oracle speaking the line protocol")
    p.add_argument("--arch", help="widths from input to output, e.g. 3-3-2-1")
    p.add_argument("--budget", type=int)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-5,
                   help="tolerance for the equivalence check against the teacher")
    _add_common(p)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("demo", help="reproduce a catalog example")
    p.add_argument("id")
    p.add_argument("--a", type=float, action="append")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("risk", help="Monte-Carlo risk of a student against a teacher")
    p.add_argument("teacher")
    p.add_argument("student")
    p.add_argument("--n", type=int, default=100_000)
    _add_common(p, out=False)
    p.set_defaults(func=cmd_risk)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        tols = {k: getattr(args, k) for k in ("tol", "tol_rank", "tol_col", "tol_membership",
                                              "tol_interior") if hasattr(args, k)}
        CommandConfig(args.command, seed=getattr(args, "seed", DEFAULT_SEED),
                      budget=getattr(args, "budget", None), box=getattr(args, "box", None),
                      tolerances=tols, verbosity=args.verbose)
        if getattr(args, "parallel", 1) < 1:
            raise CommandError("--parallel must be >= 1")
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (DomainError, BudgetExhausted, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

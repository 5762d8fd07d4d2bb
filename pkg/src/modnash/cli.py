"""Command-line front end.

Problem files are JSON documents::

    {
      "version": 1,
      "name": "quad2",
      "players": [{"dim": 1, "phi": {"name": "quadratic", "weight": 1, "center": [1]}}, ...],
      "coupling": {"kind": "quadratic", "kappas": [[1], [1]], "weights": [[[0, 0.5]], [[0.5, 0]]]},
      "couplings": [{"g": {"name": "l1", "weight": 1}, "L": [[1, 1]]}],
      "solver": {"stop_tolerance": 1e-8, "schedule": "full", "delay": "none"}
    }

``coupling.kind`` is one of ``quadratic`` (``kappas``, ``weights``),
``minimax`` (``minimizing``, ``maximizing``, ``hessian``, optional
``linear``), ``custom_affine`` (``matrix``, optional ``offset``) or
``none``; each may carry an explicit ``chi`` list. A coupling term gives
its operator either as dense ``L`` rows over the whole profile or as
``L_blocks``, one matrix per player. Bounds may be written ``Infinity``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import oracle
from .engine import BlockPolicy, DelayPolicy, SolverConfig, solve, validate_config
from .errors import (
    ConfigurationError,
    ModelValidityError,
    NashError,
    OracleError,
    StructuralError,
)
from .model import (
    build_affine_game,
    build_minimax_game,
    build_multivariate_minimization,
    build_quadratic_game,
)
from .prox import REGISTRY, from_spec
from .spaces import BlockLayout, LinearCoupling

__all__ = ["ProblemFile", "ProblemFileError", "parse_problem_file", "load_problem", "main"]

FORMAT_VERSION = 1
RESIDUAL_THRESHOLD = 1e-6
GAP_THRESHOLD = 1e-5

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2
EXIT_DIVERGED = 3
EXIT_CERTIFICATE = 4

_STATUS_EXIT = {"converged": EXIT_OK, "max_iter": EXIT_MAX_ITER, "diverged": EXIT_DIVERGED}

_SOLVER_KEYS = {
    "epsilon",
    "alpha",
    "max_delay",
    "relaxation",
    "gamma",
    "mu",
    "schedule",
    "delay",
    "max_iterations",
    "stop_tolerance",
    "check_every",
    "seed",
    "x0",
    "v0",
}


class ProblemFileError(NashError):
    """Machine-readable parse failure: ``code`` plus optional position."""

    def __init__(self, code: str, message: str, line: int | None = None, column: int | None = None, witness=None):
        self.code = code
        self.line = line
        self.column = column
        self.witness = witness
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{code}: {message}{where}")


def _schema(cond, message):
    if not cond:
        raise ProblemFileError("PARSE_SCHEMA", message)


@dataclass
class ProblemFile:
    """The parsed document, before any model is built."""

    players: list
    coupling: dict
    couplings: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    name: str = "problem"
    version: int = FORMAT_VERSION

    @classmethod
    def loads(cls, text: str) -> ProblemFile:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProblemFileError("PARSE_SYNTAX", exc.msg, exc.lineno, exc.colno) from None
        _schema(isinstance(doc, dict), "top level must be an object")
        version = doc.get("version", FORMAT_VERSION)
        _schema(version == FORMAT_VERSION, f"unsupported version {version!r}")
        unknown = set(doc) - {"version", "name", "players", "coupling", "couplings", "solver"}
        _schema(not unknown, f"unknown top-level keys {sorted(unknown)}")
        players = doc.get("players")
        _schema(isinstance(players, list) and players, "players must be a nonempty list")
        for i, pl in enumerate(players):
            _schema(isinstance(pl, dict) and "dim" in pl, f"player {i} needs a dim")
            _schema(isinstance(pl["dim"], int) and pl["dim"] >= 1, f"player {i}: dim must be a positive integer")
            phi = pl.get("phi", {"name": "zero"})
            _schema(isinstance(phi, dict) and "name" in phi, f"player {i}: phi needs a name")
        coupling = doc.get("coupling", {"kind": "none"})
        _schema(isinstance(coupling, dict) and "kind" in coupling, "coupling needs a kind")
        couplings = doc.get("couplings", [])
        _schema(isinstance(couplings, list), "couplings must be a list")
        for k, c in enumerate(couplings):
            _schema(isinstance(c, dict) and "g" in c, f"coupling term {k} needs g")
            _schema(("L" in c) != ("L_blocks" in c), f"coupling term {k} needs exactly one of L, L_blocks")
        solver = doc.get("solver", {})
        _schema(isinstance(solver, dict), "solver must be an object")
        unknown = set(solver) - _SOLVER_KEYS
        _schema(not unknown, f"unknown solver keys {sorted(unknown)}")
        return cls(
            players=[{"dim": p["dim"], "phi": p.get("phi", {"name": "zero"})} for p in players],
            coupling=coupling,
            couplings=couplings,
            solver=solver,
            name=str(doc.get("name", "problem")),
            version=version,
        )

    def to_dict(self) -> dict:
        out = {"version": self.version, "name": self.name, "players": self.players, "coupling": self.coupling}
        if self.couplings:
            out["couplings"] = self.couplings
        if self.solver:
            out["solver"] = self.solver
        return out

    def dumps(self) -> str:
        # json writes floats with repr, the shortest round-trip form
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def build(self):
        """``(problem, config)``; every model check runs here."""
        try:
            problem, config = self._build_problem(), self._build_config()
            validate_config(config, problem)
            return problem, config
        except ProblemFileError:
            raise
        except ModelValidityError as exc:
            code = "MODEL_MONOTONICITY" if exc.witness is not None else "MODEL_INVALID"
            raise ProblemFileError(code, str(exc), witness=exc.witness) from None
        except StructuralError as exc:
            raise ProblemFileError("MODEL_DIMENSION", str(exc)) from None
        except ConfigurationError as exc:
            raise ProblemFileError("CONFIG_INVALID", str(exc)) from None
        except (KeyError, TypeError, ValueError) as exc:
            raise ProblemFileError("PARSE_SCHEMA", f"bad or missing field: {exc}") from None

    def _function(self, spec, dim, where):
        if spec.get("name") not in REGISTRY:
            raise ProblemFileError("UNKNOWN_REGISTRY_NAME", f"{where}: unknown function {spec.get('name')!r}")
        return from_spec(spec, dim)

    def _build_problem(self):
        individual = [self._function(p["phi"], p["dim"], f"player {i}") for i, p in enumerate(self.players)]
        c = self.coupling
        kind = c["kind"]
        chi = c.get("chi")
        name = self.name
        pairs = self._coupling_terms(individual)
        if kind == "quadratic":
            problem = build_quadratic_game(c["kappas"], c["weights"], individual, chi=chi, name=name)
        elif kind == "minimax":
            problem = build_minimax_game(
                None,
                c["minimizing"],
                c["maximizing"],
                individual,
                chi=chi,
                hessian=c["hessian"],
                linear=c.get("linear"),
                name=name,
            )
        elif kind == "custom_affine":
            return build_affine_game(c["matrix"], c.get("offset"), individual, couplings=pairs, chi=chi, name=name)
        elif kind == "none":
            return build_multivariate_minimization(None, chi if chi is not None else 0.0, pairs, individual, name=name)
        else:
            raise ProblemFileError("UNKNOWN_REGISTRY_NAME", f"unknown coupling kind {kind!r}")
        if pairs:
            problem = replace(problem, nonsmooth_couplings=tuple(pairs))
        return problem

    def _coupling_terms(self, individual):
        layout = BlockLayout(tuple(phi.dim for phi in individual))
        pairs = []
        for k, term in enumerate(self.couplings):
            if "L" in term:
                L = np.array(term["L"], dtype=float, ndmin=2)
                Lk = LinearCoupling(layout, L.shape[0], matrix=L)
            else:
                Lk = LinearCoupling.from_blocks(term["L_blocks"], layout)
            pairs.append((self._function(term["g"], Lk.target_dim, f"coupling term {k}"), Lk))
        return pairs

    def _build_config(self) -> SolverConfig:
        s = dict(self.solver)
        kw = {}
        for key in ("epsilon", "alpha", "relaxation", "stop_tolerance"):
            if key in s:
                kw[key] = float(s[key])
        for key in ("max_delay", "max_iterations", "check_every", "seed"):
            if key in s:
                kw[key] = int(s[key])
        for key in ("gamma", "mu"):
            if key in s:
                kw[key] = tuple(float(v) for v in s[key]) if isinstance(s[key], list) else float(s[key])
        if "schedule" in s:
            kw["blocks"] = BlockPolicy.parse(s["schedule"])
        if "delay" in s:
            kw["delay"] = DelayPolicy.parse(s["delay"])
        for key in ("x0", "v0"):
            if key in s:
                kw[key] = np.asarray(s[key], dtype=float)
        return SolverConfig(**kw)


def parse_problem_file(text: str):
    """Parse and build: returns ``(problem, config)`` or raises :class:`ProblemFileError`."""
    return ProblemFile.loads(text).build()


def load_problem(path):
    """Parse a problem file. A missing path whose stem names a bundled game
    (``examples/quad2.game``, ``quad2``) falls back to that game."""
    if not os.path.exists(path):
        from . import bundled_games, bundled_game

        stem = os.path.splitext(os.path.basename(path))[0]
        if stem in bundled_games():
            path = bundled_game(stem)
    with open(path, encoding="utf-8") as fh:
        return parse_problem_file(fh.read())


# --------------------------------------------------------------------------
# output


def _num(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def write_trace(trace, fh, record_time: bool = False):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["n", "pi", "alpha", "residual", "wall_time_ns"])
    for rec in trace:
        w.writerow([rec.n, _num(rec.pi), _num(rec.alpha), _num(rec.residual), rec.wall_time_ns if record_time else ""])


def _jsonable(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def config_echo(cfg: SolverConfig) -> dict:
    def policy(v):
        if callable(v):
            return "callable"
        if isinstance(v, (tuple, list)):
            return [float(x) for x in v]
        return None if v is None else float(v)

    return {
        "epsilon": cfg.epsilon,
        "alpha": cfg.alpha,
        "max_delay": cfg.max_delay,
        "relaxation": policy(cfg.relaxation),
        "gamma": policy(cfg.gamma),
        "mu": policy(cfg.mu),
        "schedule": str(cfg.blocks),
        "delay": str(cfg.delay),
        "max_iterations": cfg.max_iterations,
        "stop_tolerance": cfg.stop_tolerance,
        "check_every": cfg.check_every,
        "seed": cfg.seed,
    }


def _gap_or_none(problem, x):
    try:
        return oracle.nash_gap(problem, x)
    except (OracleError, NashError) as exc:
        print(f"warning: nash gap unavailable: {exc}", file=sys.stderr)
        return None


# --------------------------------------------------------------------------
# commands


def run_solve_command(args) -> int:
    try:
        problem, config = load_problem(args.file)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ProblemFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    overrides = {}
    seed = os.environ.get("NASH_SEED")
    if seed is not None:
        try:
            overrides["seed"] = int(seed)
        except ValueError:
            print(f"error: NASH_SEED must be an integer, got {seed!r}", file=sys.stderr)
            return EXIT_ERROR
    elif args.seed is not None:
        overrides["seed"] = args.seed
    if args.max_iter is not None:
        overrides["max_iterations"] = args.max_iter
    if args.tol is not None:
        overrides["stop_tolerance"] = args.tol
    try:
        if args.schedule is not None:
            overrides["blocks"] = BlockPolicy.parse(args.schedule)
        if args.delay is not None:
            overrides["delay"] = DelayPolicy.parse(args.delay)
            if config.max_delay is not None and overrides["delay"].bound > config.max_delay:
                overrides["max_delay"] = overrides["delay"].bound
        config = replace(config, **overrides)
        sol = solve(problem, config)
    except ConfigurationError as exc:
        print(f"error: CONFIG_INVALID: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except NashError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.trace:
        with open(args.trace, "w", encoding="utf-8", newline="") as fh:
            write_trace(sol.trace, fh, args.record_time)
    gap = None
    if args.solution:
        gap = _gap_or_none(problem, sol.x)
        doc = {
            "x": sol.x.tolist(),
            "v_star": sol.v_star.tolist(),
            "residual": _jsonable(float(sol.residual)),
            "gap": _jsonable(gap),
            "status": sol.status,
            "iterations": sol.iterations,
            "config": config_echo(sol.config),
        }
        with open(args.solution, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    print(f"status: {sol.status}")
    print(f"iterations: {sol.iterations}")
    print(f"residual: {sol.residual:.3e}")
    print("x: " + " ".join(repr(float(v)) for v in sol.x))
    if problem.num_couplings:
        print("v_star: " + " ".join(repr(float(v)) for v in sol.v_star))
    return _STATUS_EXIT[sol.status]


def run_check_command(args) -> int:
    try:
        problem, _ = load_problem(args.file)
        with open(args.solution, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ProblemFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except json.JSONDecodeError as exc:
        print(f"error: PARSE_SYNTAX: solution file: {exc.msg} (line {exc.lineno}, column {exc.colno})", file=sys.stderr)
        return EXIT_ERROR
    try:
        x = np.asarray(doc["x"], dtype=float).reshape(-1)
        v = np.asarray(doc.get("v_star", []), dtype=float).reshape(-1)
    except (KeyError, TypeError, ValueError) as exc:
        print(f"error: malformed solution file: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if x.shape[0] != problem.primal_dim or v.shape[0] != problem.dual_dim:
        print(
            f"error: solution has dimensions ({x.shape[0]}, {v.shape[0]}), "
            f"problem needs ({problem.primal_dim}, {problem.dual_dim})",
            file=sys.stderr,
        )
        return EXIT_ERROR
    try:
        cert = oracle.certify(problem, x, v)
    except NashError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"kkt_residual: {cert.kkt_residual:.3e}")
    print(f"nash_gap: {cert.nash_gap:.3e}")
    print("per_player_gaps: " + " ".join(f"{g:.3e}" for g in cert.per_player_gaps))
    print(f"feasible: {str(cert.feasible).lower()}")
    ok = cert.passes(RESIDUAL_THRESHOLD, GAP_THRESHOLD)
    print("certificate: " + ("pass" if ok else "fail"))
    return EXIT_OK if ok else EXIT_CERTIFICATE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="modnash", description="Nash equilibria of modular games by block-iterative splitting.")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve a problem file")
    s.add_argument("file")
    s.add_argument("--trace", help="write the per-iteration trace as CSV")
    s.add_argument("--solution", help="write x, v_star and the certificate as JSON")
    s.add_argument("--seed", type=int)
    s.add_argument("--max-iter", type=int, dest="max_iter")
    s.add_argument("--tol", type=float)
    s.add_argument("--schedule", help="full | rr:m | rand:m")
    s.add_argument("--delay", help="none | fixed:d | rand:D")
    s.add_argument("--record-time", action="store_true", help="fill the wall_time_ns column (breaks byte-identical traces)")
    s.set_defaults(func=run_solve_command)
    c = sub.add_parser("check", help="certify a claimed solution")
    c.add_argument("file")
    c.add_argument("solution")
    c.set_defaults(func=run_check_command)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Asynchronous block-iterative primal-dual splitting.

The core loop solves the structured inclusion ``0 in P_i x_i + Q_i x`` over
blocks ``i``: at iteration ``n`` every active block takes a forward step on
``Q`` evaluated at a possibly outdated iterate ``x_{d_i(n)}`` followed by the
resolvent of ``P_i``; inactive blocks keep their previous pair
``(p_i, p_i*)``. The pairs define a half-space containing every solution and
the iterate is moved by a relaxed projection onto it whenever the test value
``pi_n`` is negative.

A Nash problem is solved by stacking primal and dual variables,
``Q(x, v*) = (Gx + L*v*, -Lx)``, with ``P_i = d(phi_i)`` on player blocks and
``P_k = d(g_k*)`` on dual blocks; the conjugate resolvent is evaluated from
the prox of ``g_k`` by Moreau decomposition. Asynchrony is simulated with a
ring buffer of the last ``D + 1`` iterates.
"""

from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import oracle
from .errors import ConfigurationError, NumericalDivergenceError, SchedulingError, StructuralError
from .model import ModularNashProblem
from .prox import prox_conjugate
from .spaces import BlockLayout

__all__ = [
    "BlockPolicy",
    "DelayPolicy",
    "SolverConfig",
    "ScheduleRecord",
    "Schedule",
    "SolverState",
    "InclusionSystem",
    "TraceRecord",
    "Solution",
    "validate_config",
    "make_schedule",
    "initial_state",
    "iterate_once",
    "solve",
    "reduce_to_inclusion",
    "solve_generic_inclusion",
]

log = logging.getLogger(__name__)

# below this squared norm the half-space is degenerate and the point is fixed
FIXED_POINT_NORM2 = 1e-30


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class BlockPolicy:
    """Which blocks are activated: ``full``, ``round_robin`` or ``random_coverage``.

    ``m`` is the coverage window: every ``m + 1`` consecutive iterations
    activate every block.
    """

    kind: str = "full"
    m: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("full", "round_robin", "random_coverage"):
            raise ConfigurationError(f"unknown block policy {self.kind!r}")
        if int(self.m) < 0:
            raise ConfigurationError("block window m must be >= 0")

    @classmethod
    def parse(cls, text: str) -> BlockPolicy:
        """``full``, ``rr:m`` or ``rand:m``."""
        text = text.strip()
        if text == "full":
            return cls()
        head, _, arg = text.partition(":")
        try:
            m = int(arg)
        except ValueError:
            raise ConfigurationError(f"cannot parse block policy {text!r}") from None
        if head in ("rr", "round_robin"):
            return cls("round_robin", m)
        if head in ("rand", "random", "random_coverage"):
            return cls("random_coverage", m)
        raise ConfigurationError(f"cannot parse block policy {text!r}")

    def __str__(self):
        return {"full": "full", "round_robin": f"rr:{self.m}", "random_coverage": f"rand:{self.m}"}[self.kind]


@dataclass(frozen=True)
class DelayPolicy:
    """Delays ``c_i(n), d_k(n)``: ``none``, ``fixed`` (``n - bound``) or ``random_bounded``."""

    kind: str = "none"
    bound: int = 0
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("none", "fixed", "random_bounded"):
            raise ConfigurationError(f"unknown delay policy {self.kind!r}")
        if int(self.bound) < 0:
            raise ConfigurationError("delay bound must be >= 0")

    @classmethod
    def parse(cls, text: str) -> DelayPolicy:
        """``none``, ``fixed:d`` or ``rand:D``."""
        text = text.strip()
        if text == "none":
            return cls()
        head, _, arg = text.partition(":")
        try:
            d = int(arg)
        except ValueError:
            raise ConfigurationError(f"cannot parse delay policy {text!r}") from None
        if head == "fixed":
            return cls("fixed", d)
        if head in ("rand", "random", "random_bounded"):
            return cls("random_bounded", d)
        raise ConfigurationError(f"cannot parse delay policy {text!r}")

    def __str__(self):
        return {"none": "none", "fixed": f"fixed:{self.bound}", "random_bounded": f"rand:{self.bound}"}[self.kind]


Policy = float | Callable[[int, int], float] | None


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the iteration.

    ``gamma(i, n)``, ``mu(k, n)`` and ``relaxation(n)`` may be constants or
    callables. ``None`` entries are filled by :func:`validate_config`:
    ``epsilon = min(0.1, 0.45 / (alpha + max chi))``, ``gamma_i = 1/(chi_i + alpha)``,
    ``mu_k = max(1, alpha)`` and ``max_delay`` = the delay policy bound.
    """

    epsilon: float | None = None
    alpha: float = 1.0
    max_delay: int | None = None
    relaxation: float | Callable[[int], float] = 1.8
    gamma: Policy = None
    mu: Policy = None
    blocks: BlockPolicy = field(default_factory=BlockPolicy)
    delay: DelayPolicy = field(default_factory=DelayPolicy)
    max_iterations: int = 100_000
    stop_tolerance: float = 1e-8
    check_every: int = 10
    seed: int = 0
    x0: np.ndarray | None = None
    v0: np.ndarray | None = None

    def __post_init__(self):
        if isinstance(self.blocks, str):
            object.__setattr__(self, "blocks", BlockPolicy.parse(self.blocks))
        if isinstance(self.delay, str):
            object.__setattr__(self, "delay", DelayPolicy.parse(self.delay))


def _as_policy(value, arity):
    if callable(value):
        return value
    if isinstance(value, (tuple, list)):
        vals = tuple(float(v) for v in value)
        return lambda i, n: vals[i]
    c = float(value)
    return (lambda n: c) if arity == 1 else (lambda i, n: c)


def _validate_common(config: SolverConfig, chi: np.ndarray) -> SolverConfig:
    alpha = float(config.alpha)
    if not alpha > 0:
        raise ConfigurationError(f"alpha must be > 0, got {alpha}")
    max_chi = float(np.max(chi)) if chi.size else 0.0
    eps = config.epsilon
    if eps is None:
        eps = min(0.1, 0.45 / (alpha + max_chi))
    eps = float(eps)
    if not 0 < eps < 1:
        raise ConfigurationError(f"epsilon must lie in (0, 1), got {eps}")
    if not 1.0 / eps > alpha + max_chi:
        raise ConfigurationError(
            f"1/epsilon > alpha + max chi violated: 1/{eps} = {1 / eps:g} <= {alpha + max_chi:g}"
        )
    D = config.max_delay
    if D is None:
        D = config.delay.bound if config.delay.kind != "none" else 0
    D = int(D)
    if D < 0:
        raise ConfigurationError("max_delay must be >= 0")
    if config.delay.kind != "none" and config.delay.bound > D:
        raise ConfigurationError(f"delay bound {config.delay.bound} exceeds max_delay D={D}")
    if int(config.max_iterations) < 0:
        raise ConfigurationError("max_iterations must be >= 0")
    if not float(config.stop_tolerance) >= 0:
        raise ConfigurationError("stop_tolerance must be >= 0")
    if int(config.check_every) < 1:
        raise ConfigurationError("check_every must be >= 1")
    relax = _as_policy(config.relaxation, 1)
    for n in range(_PROBE):
        lam = float(relax(n))
        if not eps <= lam <= 2 - eps:
            raise ConfigurationError(f"relaxation lambda_{n} = {lam} not in [epsilon, 2 - epsilon] = [{eps}, {2 - eps}]")
    return replace(config, epsilon=eps, alpha=alpha, max_delay=D)


# callables are probed on this many iterations up front and checked again as they are used
_PROBE = 100


def _check_gamma(value, i, n, eps, upper):
    if not eps <= value <= upper:
        raise ConfigurationError(
            f"gamma_{{{i},{n}}} = {value} not in [epsilon, 1/(chi_i + alpha)] = [{eps}, {upper}]"
        )


def _check_mu(value, k, n, eps, alpha):
    if not alpha <= value <= 1.0 / eps:
        raise ConfigurationError(f"mu_{{{k},{n}}} = {value} not in [alpha, 1/epsilon] = [{alpha}, {1 / eps}]")


def validate_config(config: SolverConfig, problem: ModularNashProblem) -> SolverConfig:
    """Check every interval condition and fill defaults.

    Raises :class:`ConfigurationError` naming the violated constraint.
    """
    chi = problem.chi
    cfg = _validate_common(config, chi)
    eps, alpha = cfg.epsilon, cfg.alpha
    gamma = cfg.gamma
    if gamma is None:
        gamma = tuple(1.0 / (c + alpha) for c in chi)
    mu = cfg.mu if cfg.mu is not None else max(1.0, alpha)
    for key, value, count in (("gamma", gamma, problem.num_players), ("mu", mu, problem.num_couplings)):
        if isinstance(value, (tuple, list)) and len(value) != count:
            raise ConfigurationError(f"{key} lists {len(value)} values for {count} indices")
    cfg = replace(cfg, gamma=gamma, mu=mu)
    gfun = _gamma_policy(cfg.gamma)
    mfun = _as_policy(cfg.mu, 2)
    for n in range(_PROBE):
        for i in range(problem.num_players):
            _check_gamma(float(gfun(i, n)), i, n, eps, 1.0 / (chi[i] + alpha))
        for k in range(problem.num_couplings):
            _check_mu(float(mfun(k, n)), k, n, eps, alpha)
    _check_start(cfg, problem.primal_dim, problem.dual_dim)
    return cfg


def _gamma_policy(gamma):
    return _as_policy(gamma, 2)


def _check_start(cfg, primal_dim, dual_dim):
    if cfg.x0 is not None and np.asarray(cfg.x0).reshape(-1).shape[0] != primal_dim:
        raise ConfigurationError(f"x0 must have length {primal_dim}")
    if cfg.v0 is not None and np.asarray(cfg.v0).reshape(-1).shape[0] != dual_dim:
        raise ConfigurationError(f"v0 must have length {dual_dim}")


# --------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class ScheduleRecord:
    """Active sets and delays for one iteration; delays align with the index tuples."""

    n: int
    players: tuple[int, ...]
    couplings: tuple[int, ...]
    player_delays: tuple[int, ...]
    coupling_delays: tuple[int, ...]

    def stacked(self, num_players: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """Active indices and delays over the joint index set ``I u K``."""
        return (
            self.players + tuple(num_players + k for k in self.couplings),
            self.player_delays + self.coupling_delays,
        )


class Schedule:
    """Deterministic sequence of :class:`ScheduleRecord`, generated on demand.

    Generated schedules satisfy ``I_0 = I``, ``K_0 = K``, the ``m + 1``
    window coverage condition and ``n - D <= c_i(n) <= n``.
    """

    def __init__(self, num_players, num_couplings, window, max_delay, blocks=None, delay=None, seed=0, records=None):
        self.num_players = int(num_players)
        self.num_couplings = int(num_couplings)
        self.window = int(window)
        self.max_delay = int(max_delay)
        self._blocks = blocks or BlockPolicy()
        self._delay = delay or DelayPolicy()
        self._explicit = records is not None
        self._records: list[ScheduleRecord] = []
        bseed = self._blocks.seed if self._blocks.seed is not None else seed
        dseed = self._delay.seed if self._delay.seed is not None else seed
        self._block_rng = np.random.default_rng([int(bseed), 1])
        self._delay_rng = np.random.default_rng([int(dseed), 2])
        self._last = {
            "players": np.zeros(self.num_players, dtype=int),
            "couplings": np.zeros(self.num_couplings, dtype=int),
        }
        if records is not None:
            for rec in records:
                self._records.append(self._clamp(rec))
            self.validate()

    @classmethod
    def explicit(cls, records: Sequence[ScheduleRecord], num_players, num_couplings, window, max_delay) -> Schedule:
        """Wrap user-supplied records; rejects records violating the schedule conditions."""
        return cls(num_players, num_couplings, window, max_delay, records=list(records))

    def _clamp(self, rec: ScheduleRecord) -> ScheduleRecord:
        return replace(
            rec,
            player_delays=tuple(max(0, int(c)) for c in rec.player_delays),
            coupling_delays=tuple(max(0, int(d)) for d in rec.coupling_delays),
        )

    def validate(self):
        recs = self._records
        if not recs:
            return
        full_i = tuple(range(self.num_players))
        full_k = tuple(range(self.num_couplings))
        if tuple(sorted(recs[0].players)) != full_i or tuple(sorted(recs[0].couplings)) != full_k:
            raise SchedulingError("the first iteration must activate every player and every coupling")
        D = self.max_delay
        for pos, rec in enumerate(recs):
            if rec.n != pos:
                raise SchedulingError(f"record {pos} is labelled n={rec.n}")
            if len(rec.players) != len(rec.player_delays) or len(rec.couplings) != len(rec.coupling_delays):
                raise SchedulingError(f"record {pos}: delays do not align with active indices")
            if not rec.players or (self.num_couplings and not rec.couplings):
                raise SchedulingError(f"record {pos}: active sets must be nonempty")
            if list(rec.players) != sorted(set(rec.players)) or list(rec.couplings) != sorted(set(rec.couplings)):
                raise SchedulingError(f"record {pos}: active indices must be sorted and distinct")
            for c in rec.player_delays + rec.coupling_delays:
                if not rec.n - D <= c <= rec.n:
                    raise SchedulingError(f"record {pos}: delay index {c} outside [n - D, n] with D={D}")
        m = self.window
        for start in range(max(1, len(recs) - m)):
            win = recs[start : start + m + 1]
            if {i for r in win for i in r.players} != set(full_i) or {
                k for r in win for k in r.couplings
            } != set(full_k):
                raise SchedulingError(f"coverage fails on the window starting at n={start} (m={m})")

    def _active(self, n, count, key):
        if count == 0:
            return ()
        if n == 0:
            return tuple(range(count))
        pol = self._blocks
        if pol.kind == "full" or pol.m == 0:
            return tuple(range(count))
        if pol.kind == "round_robin":
            groups = min(pol.m + 1, count)
            g = (n - 1) % groups
            return tuple(i for i in range(count) if i % groups == g)
        # random_coverage: forced once the window would otherwise close
        last = self._last[key]
        forced = (n - last) >= pol.m + 1
        pick = self._block_rng.random(count) < 1.0 / (pol.m + 1)
        chosen = forced | pick
        if not chosen.any():
            chosen[self._block_rng.integers(count)] = True
        return tuple(int(i) for i in np.flatnonzero(chosen))

    def _delays(self, n, active):
        pol = self._delay
        if pol.kind == "none":
            return tuple(n for _ in active)
        if pol.kind == "fixed":
            return tuple(max(0, n - pol.bound) for _ in active)
        hi = min(pol.bound, n)
        return tuple(int(n - self._delay_rng.integers(0, hi + 1)) for _ in active)

    def _generate(self, n):
        players = self._active(n, self.num_players, "players")
        couplings = self._active(n, self.num_couplings, "couplings")
        self._last["players"][list(players)] = n
        if couplings:
            self._last["couplings"][list(couplings)] = n
        return ScheduleRecord(n, players, couplings, self._delays(n, players), self._delays(n, couplings))

    def __getitem__(self, n: int) -> ScheduleRecord:
        while len(self._records) <= n:
            if self._explicit:
                raise SchedulingError(f"explicit schedule has no record for iteration {n}")
            self._records.append(self._generate(len(self._records)))
        return self._records[n]

    def records(self, horizon: int) -> list[ScheduleRecord]:
        self[horizon - 1]
        return self._records[:horizon]

    def __len__(self):
        return len(self._records)


def make_schedule(config: SolverConfig, num_players: int, num_couplings: int, horizon: int = 1) -> Schedule:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    window = config.blocks.m if config.blocks.kind != "full" else 0
    D = config.max_delay
    if D is None:
        D = config.delay.bound if config.delay.kind != "none" else 0
    sched = Schedule(num_players, num_couplings, window, D, config.blocks, config.delay, config.seed)
    sched.records(horizon)
    return sched


# --------------------------------------------------------------------------
# generic inclusion engine


@dataclass(frozen=True)
class InclusionSystem:
    """``0 in P_i x_i + Q_i x`` on the blocks of ``layout``.

    ``resolvents[i](gamma, x)`` returns ``J_{gamma P_i} x``; ``coupling`` is
    the monotone Lipschitz ``Q`` on flat vectors with constants ``chi``.
    ``residual`` optionally overrides the default fixed-point residual.
    """

    layout: BlockLayout
    resolvents: tuple[Callable[[float, np.ndarray], np.ndarray], ...]
    coupling: Callable[[np.ndarray], np.ndarray]
    chi: np.ndarray
    residual: Callable[[np.ndarray], float] | None = None
    primal_dim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "resolvents", tuple(self.resolvents))
        object.__setattr__(self, "chi", np.asarray(self.chi, dtype=float).reshape(-1))
        if len(self.resolvents) != self.layout.num_blocks or self.chi.shape[0] != self.layout.num_blocks:
            raise StructuralError("one resolvent and one chi per block are required")
        if self.primal_dim is None:
            object.__setattr__(self, "primal_dim", self.layout.total_dim)

    def fixed_point_residual(self, z) -> float:
        if self.residual is not None:
            return float(self.residual(z))
        z = np.asarray(z, dtype=float)
        fwd = z - self.coupling(z)
        r = np.empty_like(z)
        for i, J in enumerate(self.resolvents):
            sl = self.layout.slice(i)
            r[sl] = z[sl] - J(1.0, fwd[sl])
        return float(np.linalg.norm(r))


class SolverState:
    """Iterates of the stacked variable ``z = (x, v*)`` and the last pairs.

    ``p = (a, b*)`` and ``p_star = (a*, b)``; ``s_star = (t*, t)``.
    """

    def __init__(self, layout: BlockLayout, z0, max_delay: int, primal_dim: int | None = None):
        self.layout = layout
        self.primal_dim = layout.total_dim if primal_dim is None else primal_dim
        self.n = 0
        self.z = np.array(z0, dtype=float).reshape(-1)
        if self.z.shape[0] != layout.total_dim:
            raise StructuralError(f"initial point must have length {layout.total_dim}")
        self.max_delay = int(max_delay)
        self.history: deque = deque([(0, self.z.copy())], maxlen=self.max_delay + 1)
        size = layout.total_dim
        self.p = np.full(size, np.nan)
        self.p_star = np.full(size, np.nan)
        self.forward_point = np.full(size, np.nan)
        self.s_star = np.full(size, np.nan)
        self.steps = np.full(layout.num_blocks, np.nan)
        self.pi = np.nan
        self.alpha = np.nan
        self.relaxation = np.nan
        self.updated = False
        self.residual = np.nan

    def iterate_at(self, j: int) -> np.ndarray:
        j = max(0, int(j))
        first = self.history[0][0]
        if not first <= j <= self.n:
            raise SchedulingError(f"iterate {j} is not in the history window [{first}, {self.n}]")
        return self.history[j - first][1]

    # Nash-level views
    @property
    def x(self):
        return self.z[: self.primal_dim]

    @property
    def v_star(self):
        return self.z[self.primal_dim :]

    @property
    def a(self):
        return self.p[: self.primal_dim]

    @property
    def a_star(self):
        return self.p_star[: self.primal_dim]

    @property
    def b(self):
        return self.p_star[self.primal_dim :]

    @property
    def b_star(self):
        return self.p[self.primal_dim :]

    @property
    def t_star(self):
        return self.s_star[: self.primal_dim]

    @property
    def t(self):
        return self.s_star[self.primal_dim :]

    @property
    def x_star(self):
        return self.forward_point[: self.primal_dim]

    @property
    def y_star(self):
        """``mu_k (v*_k + L_k x / mu_k)`` for every dual block, from its last activation."""
        out = self.forward_point[self.primal_dim :].copy()
        nb_primal = self._num_primal_blocks()
        for k in range(nb_primal, self.layout.num_blocks):
            sl = self.layout.slice(k)
            out[sl.start - self.primal_dim : sl.stop - self.primal_dim] /= self.steps[k]
        return out

    def _num_primal_blocks(self):
        offs = self.layout.offsets
        return offs.index(self.primal_dim)

    def half_space_value(self, z=None) -> float:
        """``<p - z, s*>`` for the stored pairs, against ``z`` (default: current)."""
        z = self.z if z is None else np.asarray(z, dtype=float)
        return float((self.p - z) @ self.s_star)


class _Params:
    def __init__(self, step, relaxation, eps):
        self.step = step
        self.relaxation = relaxation
        self.eps = eps


def _generic_params(config: SolverConfig, chi) -> _Params:
    eps, alpha = config.epsilon, config.alpha
    gfun = _gamma_policy(config.gamma)
    rfun = _as_policy(config.relaxation, 1)

    def step(i, n):
        g = float(gfun(i, n))
        _check_gamma(g, i, n, eps, 1.0 / (chi[i] + alpha))
        return g

    def relax(n):
        lam = float(rfun(n))
        if not eps <= lam <= 2 - eps:
            raise ConfigurationError(f"relaxation lambda_{n} = {lam} not in [{eps}, {2 - eps}]")
        return lam

    return _Params(step, relax, eps)


def _nash_params(config: SolverConfig, problem: ModularNashProblem) -> _Params:
    eps, alpha = config.epsilon, config.alpha
    chi = problem.chi
    p = problem.num_players
    gfun = _gamma_policy(config.gamma)
    mfun = _as_policy(config.mu, 2)
    base = _generic_params(replace(config, gamma=0.0), np.zeros(1))

    def step(idx, n):
        if idx < p:
            g = float(gfun(idx, n))
            _check_gamma(g, idx, n, eps, 1.0 / (chi[idx] + alpha))
            return g
        mu = float(mfun(idx - p, n))
        _check_mu(mu, idx - p, n, eps, alpha)
        return 1.0 / mu

    return _Params(step, base.relaxation, eps)


def _step(system: InclusionSystem, state: SolverState, active, delays, params: _Params):
    """One pass of the iteration body; mutates ``state``."""
    n = state.n
    layout = system.layout
    lam = params.relaxation(n)
    q_cache = {}
    for idx, j in zip(active, delays):
        j = max(0, int(j))
        zj = state.iterate_at(j)
        if j not in q_cache:
            q_cache[j] = np.asarray(system.coupling(zj), dtype=float)
        g = params.step(idx, j)
        sl = layout.slice(idx)
        xs = zj[sl] - g * q_cache[j][sl]
        p = np.asarray(system.resolvents[idx](g, xs), dtype=float)
        state.forward_point[sl] = xs
        state.p[sl] = p
        state.p_star[sl] = (xs - p) / g
        state.steps[idx] = g
    if not (np.all(np.isfinite(state.p)) and np.all(np.isfinite(state.p_star))):
        raise NumericalDivergenceError(f"non-finite resolvent output at iteration {n}")
    s = state.p_star + np.asarray(system.coupling(state.p), dtype=float)
    state.s_star = s
    pi = float((state.p - state.z) @ s)
    nrm2 = float(s @ s)
    if not (np.isfinite(pi) and np.isfinite(nrm2)):
        raise NumericalDivergenceError(f"non-finite half-space data at iteration {n}")
    state.pi = pi
    state.relaxation = lam
    if nrm2 >= FIXED_POINT_NORM2 and pi < 0:
        alpha = lam * pi / nrm2
        z_new = state.z + alpha * s
        if not np.all(np.isfinite(z_new)):
            raise NumericalDivergenceError(f"non-finite iterate at iteration {n + 1}")
        state.alpha = alpha
        state.updated = True
        state.z = z_new
    else:
        state.alpha = np.nan
        state.updated = False
        state.z = state.z.copy()
    state.n = n + 1
    state.history.append((state.n, state.z))
    return state


@dataclass(frozen=True)
class TraceRecord:
    n: int
    pi: float
    alpha: float
    residual: float
    wall_time_ns: int
    updated: bool
    relaxation: float


@dataclass
class Solution:
    x: np.ndarray
    v_star: np.ndarray
    trace: list[TraceRecord]
    status: str
    iterations: int
    residual: float
    config: SolverConfig | None = None

    @property
    def z(self):
        return np.concatenate([self.x, self.v_star])


def _run(system, params, schedule, state, config, callback=None, residual=None):
    residual = residual or system.fixed_point_residual
    tol = float(config.stop_tolerance)
    every = int(config.check_every)
    trace: list[TraceRecord] = []
    with np.errstate(over="ignore", invalid="ignore"):
        res = residual(state.z)
    status = "converged" if res <= tol else "max_iter"
    n_players = schedule.num_players
    for n in range(int(config.max_iterations)):
        if status == "converged":
            break
        rec = schedule[n]
        active, delays = rec.stacked(n_players)
        t0 = time.perf_counter_ns()
        try:
            # overflow surfaces as non-finite values, which are checked explicitly
            with np.errstate(over="ignore", invalid="ignore"):
                _step(system, state, active, delays, params)
        except NumericalDivergenceError as exc:
            log.warning("iteration diverged: %s", exc)
            status = "diverged"
            break
        last = n + 1 == int(config.max_iterations)
        if (n + 1) % every == 0 or last:
            with np.errstate(over="ignore", invalid="ignore"):
                res = residual(state.z)
            if not np.isfinite(res):
                status = "diverged"
        else:
            res = np.nan
        state.residual = res
        trace.append(
            TraceRecord(n, state.pi, state.alpha, res, time.perf_counter_ns() - t0, state.updated, state.relaxation)
        )
        if callback is not None:
            callback(state)
        if status == "diverged":
            break
        if res <= tol:
            status = "converged"
    if status != "diverged":
        with np.errstate(over="ignore", invalid="ignore"):
            res = residual(state.z)
        if status == "max_iter" and res <= tol:
            status = "converged"
    return state, trace, status, res


def reduce_to_inclusion(problem: ModularNashProblem) -> InclusionSystem:
    """Stacked primal-dual inclusion whose zeros are the KKT points of ``problem``."""
    P = problem.primal_dim
    layout = problem.primal_layout
    if problem.num_couplings:
        layout = layout.concat(problem.dual_layout)

    def coupling(z):
        x, v = z[:P], z[P:]
        return np.concatenate([problem.gradient(x) + problem.L_adjoint(v), -problem.L(x)])

    resolvents = [phi.prox for phi in problem.individual]
    for g, _ in problem.nonsmooth_couplings:
        resolvents.append(lambda gam, z, g=g: prox_conjugate(g, 1.0 / gam, z)[0])
    chi = np.concatenate([problem.chi, np.zeros(problem.num_couplings)])

    def residual(z):
        return oracle.kkt_residual(problem, z[:P], z[P:])

    return InclusionSystem(layout, tuple(resolvents), coupling, chi, residual=residual, primal_dim=P)


def _start_point(config, primal_dim, dual_dim):
    x0 = np.zeros(primal_dim) if config.x0 is None else np.asarray(config.x0, dtype=float).reshape(-1)
    v0 = np.zeros(dual_dim) if config.v0 is None else np.asarray(config.v0, dtype=float).reshape(-1)
    return np.concatenate([x0, v0])


def initial_state(problem: ModularNashProblem, config: SolverConfig) -> SolverState:
    cfg = config if config.epsilon is not None and config.gamma is not None else validate_config(config, problem)
    layout = reduce_to_inclusion(problem).layout
    return SolverState(layout, _start_point(cfg, problem.primal_dim, problem.dual_dim), cfg.max_delay, problem.primal_dim)


def iterate_once(problem: ModularNashProblem, state: SolverState, record: ScheduleRecord, config: SolverConfig) -> SolverState:
    """Advance ``state`` by one iteration following ``record``."""
    if record.n != state.n:
        raise SchedulingError(f"record is for iteration {record.n}, state is at {state.n}")
    cfg = validate_config(config, problem)
    system = reduce_to_inclusion(problem)
    active, delays = record.stacked(problem.num_players)
    return _step(system, state, active, delays, _nash_params(cfg, problem))


def solve(
    problem: ModularNashProblem,
    config: SolverConfig | None = None,
    schedule: Schedule | None = None,
    callback: Callable[[SolverState], None] | None = None,
) -> Solution:
    """Run the iteration until the KKT residual drops below ``stop_tolerance``.

    The residual is evaluated every ``check_every`` iterations and at the
    last one. ``status`` is ``converged``, ``max_iter`` or ``diverged``.
    """
    cfg = validate_config(config or SolverConfig(), problem)
    system = reduce_to_inclusion(problem)
    if schedule is None:
        schedule = make_schedule(cfg, problem.num_players, problem.num_couplings)
    elif schedule.num_players != problem.num_players or schedule.num_couplings != problem.num_couplings:
        raise SchedulingError("schedule index sets do not match the problem")
    elif schedule.max_delay > cfg.max_delay:
        raise SchedulingError(f"schedule delay bound {schedule.max_delay} exceeds max_delay {cfg.max_delay}")
    state = SolverState(system.layout, _start_point(cfg, problem.primal_dim, problem.dual_dim), cfg.max_delay, problem.primal_dim)
    state, trace, status, res = _run(system, _nash_params(cfg, problem), schedule, state, cfg, callback)
    return Solution(
        x=state.x.copy(),
        v_star=state.v_star.copy(),
        trace=trace,
        status=status,
        iterations=state.n,
        residual=res,
        config=cfg,
    )


def stacked_config(problem: ModularNashProblem, config: SolverConfig) -> SolverConfig:
    """Configuration over ``I u K`` with ``gamma_k = 1/mu_k`` on dual blocks."""
    cfg = validate_config(config, problem)
    p = problem.num_players
    gfun = _gamma_policy(cfg.gamma)
    mfun = _as_policy(cfg.mu, 2)

    def gamma(idx, n):
        return float(gfun(idx, n)) if idx < p else 1.0 / float(mfun(idx - p, n))

    return replace(cfg, gamma=gamma, mu=None)


def solve_generic_inclusion(
    system: InclusionSystem,
    config: SolverConfig | None = None,
    schedule: Schedule | None = None,
    callback: Callable[[SolverState], None] | None = None,
) -> Solution:
    """Solve ``0 in P_i x_i + Q_i x`` with the same scheduling machinery.

    The schedule may be a player/coupling schedule of a reduced Nash
    problem; its joint index set must match the blocks of ``system``.
    """
    cfg = _validate_common(config or SolverConfig(), system.chi)
    if cfg.gamma is None:
        cfg = replace(cfg, gamma=tuple(1.0 / (c + cfg.alpha) for c in system.chi))
    nb = system.layout.num_blocks
    if schedule is None:
        schedule = make_schedule(cfg, nb, 0)
    elif schedule.num_players + schedule.num_couplings != nb:
        raise SchedulingError("schedule index set does not match the system blocks")
    z0 = np.zeros(system.layout.total_dim) if cfg.x0 is None else np.asarray(cfg.x0, dtype=float).reshape(-1)
    if cfg.v0 is not None:
        z0 = np.concatenate([z0, np.asarray(cfg.v0, dtype=float).reshape(-1)])
    state = SolverState(system.layout, z0, cfg.max_delay, system.primal_dim)
    state, trace, status, res = _run(system, _generic_params(cfg, system.chi), schedule, state, cfg, callback)
    return Solution(
        x=state.z[: system.primal_dim].copy(),
        v_star=state.z[system.primal_dim :].copy(),
        trace=trace,
        status=status,
        iterations=state.n,
        residual=res,
        config=cfg,
    )

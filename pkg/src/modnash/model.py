"""Problem container and builders for the standard game families.

A :class:`ModularNashProblem` collects, for players ``i`` and coupling
terms ``k``::

    x_i in Argmin  phi_i + f_i(. ; x_-i) + sum_k (g_k o L_k)(. ; x_-i)

The smooth part enters only through ``G x = (grad_i f_i(x))_i`` and the
constants ``chi_i`` bounding ``<x - y, Gx - Gy> <= sum_i chi_i ||x_i - y_i||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ModelValidityError, NumericalError, StructuralError
from .prox import ProxFunction
from .spaces import BlockLayout, LinearCoupling, stack_adjoint, stack_forward

__all__ = [
    "SmoothCoupling",
    "ModularNashProblem",
    "ChiEstimate",
    "MonotonicityReport",
    "WeightConditionReport",
    "build_quadratic_game",
    "build_minimax_game",
    "build_multivariate_minimization",
    "build_affine_game",
    "check_pairwise_weight_condition",
    "check_coupling_monotonicity",
    "estimate_chi",
    "quadratic_game_matrix",
]

MONOTONICITY_TOL = 1e-9
PSD_TOL = 1e-10


@dataclass(frozen=True)
class SmoothCoupling:
    """The operator ``G`` and its constants.

    ``matrix``/``offset`` are set when ``G x = matrix @ x + offset`` is known
    to be affine; ``value(i, x)`` returns ``f_i(x)`` when the losses are
    evaluable (the oracle needs one of the two).
    """

    gradient: Callable[[np.ndarray], np.ndarray]
    chi: np.ndarray
    matrix: np.ndarray | None = None
    offset: np.ndarray | None = None
    value: Callable[[int, np.ndarray], float] | None = None
    lipschitz_hint: float | None = None
    chi_heuristic: bool = False

    def __post_init__(self):
        chi = np.array(self.chi, dtype=float).reshape(-1)
        if np.any(chi < 0) or not np.all(np.isfinite(chi)):
            raise ModelValidityError(f"chi must be finite and nonnegative, got {chi}")
        chi.setflags(write=False)
        object.__setattr__(self, "chi", chi)

    @property
    def is_affine(self) -> bool:
        return self.matrix is not None

    @classmethod
    def affine(cls, matrix, offset=None, chi=None, value=None, **kw) -> SmoothCoupling:
        M = np.array(matrix, dtype=float, ndmin=2)
        M.setflags(write=False)
        q = np.zeros(M.shape[0]) if offset is None else np.array(offset, dtype=float).reshape(-1)
        q.setflags(write=False)
        if chi is None:
            raise ValueError("chi must be given; use estimate_chi to compute it")
        return cls(lambda x: M @ x + q, chi, matrix=M, offset=q, value=value, **kw)


@dataclass(frozen=True)
class ModularNashProblem:
    primal_layout: BlockLayout
    individual: tuple[ProxFunction, ...]
    coupling: SmoothCoupling
    nonsmooth_couplings: tuple[tuple[ProxFunction, LinearCoupling], ...] = ()
    name: str = "unnamed"

    def __post_init__(self):
        object.__setattr__(self, "individual", tuple(self.individual))
        object.__setattr__(self, "nonsmooth_couplings", tuple(tuple(c) for c in self.nonsmooth_couplings))
        lay = self.primal_layout
        if len(self.individual) != lay.num_blocks:
            raise StructuralError(f"{len(self.individual)} individual functions for {lay.num_blocks} players")
        for i, (phi, d) in enumerate(zip(self.individual, lay.block_dims)):
            if phi.dim != d:
                raise StructuralError(f"phi_{i} has dimension {phi.dim}, player {i} has dimension {d}")
        if self.coupling.chi.shape != (lay.num_blocks,):
            raise StructuralError(f"chi has {self.coupling.chi.shape[0]} entries for {lay.num_blocks} players")
        if self.coupling.matrix is not None and self.coupling.matrix.shape != (lay.total_dim, lay.total_dim):
            raise StructuralError("affine coupling matrix does not match the primal dimension")
        for k, (g, L) in enumerate(self.nonsmooth_couplings):
            if L.source_layout != lay:
                raise StructuralError(f"L_{k} source layout differs from the primal layout")
            if g.dim != L.target_dim:
                raise StructuralError(f"g_{k} has dimension {g.dim}, L_{k} maps into dimension {L.target_dim}")

    @property
    def num_players(self) -> int:
        return self.primal_layout.num_blocks

    @property
    def num_couplings(self) -> int:
        return len(self.nonsmooth_couplings)

    @property
    def dual_layout(self) -> BlockLayout | None:
        if not self.nonsmooth_couplings:
            return None
        return BlockLayout(tuple(L.target_dim for _, L in self.nonsmooth_couplings))

    @property
    def primal_dim(self) -> int:
        return self.primal_layout.total_dim

    @property
    def dual_dim(self) -> int:
        return sum(L.target_dim for _, L in self.nonsmooth_couplings)

    @property
    def chi(self) -> np.ndarray:
        return self.coupling.chi

    @property
    def linear_maps(self) -> list[LinearCoupling]:
        return [L for _, L in self.nonsmooth_couplings]

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.coupling.gradient(x), dtype=float).reshape(self.primal_dim)

    def L(self, x) -> np.ndarray:
        return stack_forward(self.linear_maps, np.asarray(x, dtype=float))

    def L_adjoint(self, v) -> np.ndarray:
        return stack_adjoint(self.linear_maps, np.asarray(v, dtype=float), self.dual_layout, self.primal_dim)

    def with_chi(self, chi) -> ModularNashProblem:
        from dataclasses import replace

        chi = np.broadcast_to(np.asarray(chi, dtype=float), (self.num_players,)).copy()
        return replace(self, coupling=replace(self.coupling, chi=chi, chi_heuristic=False))


# --------------------------------------------------------------------------
# checks


@dataclass
class WeightConditionReport:
    ok: bool
    row_sums: np.ndarray
    column_sums: np.ndarray
    row_violations: list[int] = field(default_factory=list)
    column_violations: list[int] = field(default_factory=list)

    def __bool__(self):
        return self.ok


@dataclass
class MonotonicityReport:
    """Outcome of the sampled monotonicity / chi-bound test.

    ``min_slack`` is the smallest of ``<d, Gx - Gy>`` and
    ``sum_i chi_i ||d_i||^2 - <d, Gx - Gy>`` over the samples (and over the
    exact spectral check for affine couplings).
    """

    ok: bool
    min_slack: float
    monotone: bool
    chi_bound: bool
    witness: tuple[np.ndarray, np.ndarray] | None = None
    exact: bool = False

    def __bool__(self):
        return self.ok


@dataclass
class ChiEstimate:
    chi: np.ndarray
    heuristic: bool
    method: str

    def __array__(self, dtype=None, copy=None):
        return self.chi if dtype is None else self.chi.astype(dtype)


def _single_lambda_weights(weights) -> np.ndarray:
    W = np.asarray(weights, dtype=float)
    if W.ndim == 3:
        if W.shape[1] != 1:
            raise StructuralError("the pairwise condition applies to a single coupling term per player")
        W = W[:, 0, :]
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise StructuralError(f"weights must be a square player-by-player array, got shape {W.shape}")
    return W


def check_pairwise_weight_condition(weights) -> WeightConditionReport:
    """Row and column sums of off-diagonal weights are each at most one."""
    W = _single_lambda_weights(weights).copy()
    np.fill_diagonal(W, 0.0)
    rows = W.sum(axis=1)
    cols = W.sum(axis=0)
    row_bad = [int(i) for i in np.flatnonzero(rows > 1.0)]
    col_bad = [int(j) for j in np.flatnonzero(cols > 1.0)]
    return WeightConditionReport(not row_bad and not col_bad, rows, cols, row_bad, col_bad)


def _block_scale(layout: BlockLayout, chi) -> np.ndarray:
    return np.repeat(np.asarray(chi, dtype=float), layout.block_dims)


def _sampled_check(gradient, layout, chi, samples, seed):
    rng = np.random.default_rng(seed)
    n = layout.total_dim
    weights = _block_scale(layout, chi)
    min_mono, min_chi = np.inf, np.inf
    witness = None
    worst = np.inf
    for _ in range(samples):
        x = rng.standard_normal(n)
        y = rng.standard_normal(n)
        d = x - y
        dG = np.asarray(gradient(x), dtype=float) - np.asarray(gradient(y), dtype=float)
        ip = float(d @ dG)
        s_mono = ip
        s_chi = float(weights @ (d * d)) - ip
        min_mono = min(min_mono, s_mono)
        min_chi = min(min_chi, s_chi)
        if min(s_mono, s_chi) < worst:
            worst = min(s_mono, s_chi)
            witness = (x, y)
    return min_mono, min_chi, witness


def _symmetric_part(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def check_coupling_monotonicity(problem, samples: int = 1000, seed: int = 0) -> MonotonicityReport:
    """Sampled test of monotonicity of ``G`` and of the chi bound.

    For affine couplings the symmetric part is also checked exactly with an
    eigenvalue decomposition.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    coupling = problem.coupling
    layout = problem.primal_layout
    min_mono, min_chi, witness = _sampled_check(coupling.gradient, layout, coupling.chi, samples, seed)
    exact = False
    if coupling.is_affine:
        exact = True
        S = _symmetric_part(coupling.matrix)
        evals, evecs = np.linalg.eigh(S)
        C = np.diag(_block_scale(layout, coupling.chi)) - S
        cvals, cvecs = np.linalg.eigh(C)
        min_mono = min(min_mono, float(evals[0]))
        min_chi = min(min_chi, float(cvals[0]))
        # the spectral witness is exact, so it wins over sampled ones
        if evals[0] < -PSD_TOL:
            witness = (evecs[:, 0].copy(), np.zeros(layout.total_dim))
        elif cvals[0] < -PSD_TOL:
            witness = (cvecs[:, 0].copy(), np.zeros(layout.total_dim))
        mono_ok = evals[0] >= -PSD_TOL and min_mono >= -MONOTONICITY_TOL
        chi_ok = cvals[0] >= -PSD_TOL and min_chi >= -MONOTONICITY_TOL
    else:
        mono_ok = min_mono >= -MONOTONICITY_TOL
        chi_ok = min_chi >= -MONOTONICITY_TOL
    ok = bool(mono_ok and chi_ok)
    return MonotonicityReport(
        ok=ok,
        min_slack=float(min(min_mono, min_chi)),
        monotone=bool(mono_ok),
        chi_bound=bool(chi_ok),
        witness=None if ok else witness,
        exact=exact,
    )


def _power_lambda_max(S: np.ndarray, seed: int = 0, rtol: float = 1e-8, max_steps: int = 10_000) -> float:
    """Largest eigenvalue of a symmetric matrix by shifted power iteration."""
    sigma = float(np.max(np.sum(np.abs(S), axis=1)))
    if sigma == 0.0:
        return 0.0
    B = S + sigma * np.eye(S.shape[0])
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(S.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(max_steps):
        w = B @ v
        rho = float(v @ w)
        # an eigenvalue lies within ||Bv - rho v|| of the Rayleigh quotient
        resid = float(np.linalg.norm(w - rho * v))
        if resid <= rtol * max(abs(rho - sigma), 1e-6 * sigma):
            return rho - sigma + resid
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return -sigma
        v = w / nrm
    raise NumericalError(f"power iteration did not converge in {max_steps} steps")


def _estimate_chi(gradient, matrix, layout: BlockLayout, samples: int, seed: int) -> ChiEstimate:
    p = layout.num_blocks
    if matrix is not None:
        lam = _power_lambda_max(_symmetric_part(matrix), seed=seed)
        lam = max(0.0, lam)
        return ChiEstimate(np.full(p, lam), heuristic=False, method="power_iteration")
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(samples):
        x = rng.standard_normal(layout.total_dim)
        y = rng.standard_normal(layout.total_dim)
        d = x - y
        ratio = float(d @ (np.asarray(gradient(x)) - np.asarray(gradient(y)))) / float(d @ d)
        best = max(best, ratio)
    return ChiEstimate(np.full(p, 1.1 * best), heuristic=True, method="sampled")


def estimate_chi(problem, samples: int = 1000, seed: int = 0) -> ChiEstimate:
    """Uniform constants satisfying the chi bound.

    Affine couplings get ``max(0, lambda_max(sym(M)))`` by power iteration;
    other oracles get a sampled Rayleigh ratio inflated by 10% and are
    flagged as heuristic.
    """
    c = problem.coupling
    return _estimate_chi(c.gradient, c.matrix, problem.primal_layout, samples, seed)


# --------------------------------------------------------------------------
# builders


def _finalize(layout, individual, coupling_kw, chi, couplings=(), name="unnamed", samples=1000, seed=0, validate=True):
    gradient = coupling_kw["gradient"]
    matrix = coupling_kw.get("matrix")
    if chi is None:
        est = _estimate_chi(gradient, matrix, layout, samples, seed)
        chi, heuristic = est.chi, est.heuristic
    else:
        chi = np.broadcast_to(np.asarray(chi, dtype=float), (layout.num_blocks,)).copy()
        heuristic = False
    coupling = SmoothCoupling(chi=chi, chi_heuristic=heuristic, **coupling_kw)
    problem = ModularNashProblem(layout, tuple(individual), coupling, tuple(couplings), name=name)
    if validate:
        report = check_coupling_monotonicity(problem, samples=samples, seed=seed)
        if not report.ok:
            what = "G is not monotone" if not report.monotone else "chi does not bound <x-y, Gx-Gy>"
            raise ModelValidityError(
                f"{name}: {what} (worst slack {report.min_slack:.3e})", witness=report.witness
            )
    return problem


def _player_layout(individual: Sequence[ProxFunction]) -> BlockLayout:
    if not individual:
        raise StructuralError("at least one player is required")
    return BlockLayout(tuple(phi.dim for phi in individual))


def _normalize_quadratic_params(kappas, weights, p):
    kap = []
    for i in range(p):
        k = np.atleast_1d(np.asarray(kappas[i], dtype=float))
        if k.size == 0 or np.any(k <= 0):
            raise ModelValidityError(f"kappa for player {i} must be a nonempty list of positive reals")
        kap.append(k)
    W = []
    for i in range(p):
        w = np.asarray(weights[i], dtype=float)
        if w.ndim == 1:
            w = w[None, :]
        if w.shape != (kap[i].size, p):
            raise StructuralError(
                f"weights for player {i} must have shape ({kap[i].size}, {p}), got {w.shape}"
            )
        if np.any(w < 0):
            raise ModelValidityError(f"weights for player {i} must be nonnegative")
        if np.any(w[:, i] != 0):
            raise StructuralError(f"player {i} cannot weight its own strategy")
        W.append(w)
    return kap, W


def quadratic_game_matrix(kappas, weights) -> np.ndarray:
    """Player-level matrix ``A`` with ``grad_i f_i(x) = sum_j A_ij x_j``."""
    p = len(kappas)
    kap, W = _normalize_quadratic_params(kappas, weights, p)
    A = np.zeros((p, p))
    for i in range(p):
        A[i] = -(kap[i] @ W[i])
        A[i, i] = kap[i].sum()
    return A


def build_quadratic_game(kappas, weights, individual, chi=None, samples: int = 1000, seed: int = 0, name="quadratic"):
    """Quadratic-coupling game.

    Player ``i`` minimizes ``phi_i + sum_l kappa_il/2 ||x_i - sum_j w_ilj x_j||^2``;
    ``kappas[i]`` lists ``kappa_il`` and ``weights[i][l][j]`` holds
    ``w_ilj``. All players share one strategy dimension.
    """
    layout = _player_layout(individual)
    d = layout.block_dims[0]
    if any(b != d for b in layout.block_dims):
        raise StructuralError("all players of a quadratic game share one strategy space")
    p = layout.num_blocks
    kap, W = _normalize_quadratic_params(kappas, weights, p)
    A = quadratic_game_matrix(kap, W)
    M = np.kron(A, np.eye(d))
    M.setflags(write=False)
    q = np.zeros(layout.total_dim)
    q.setflags(write=False)

    def gradient(x):
        return M @ x

    def value(i, x):
        X = np.asarray(x, dtype=float).reshape(p, d)
        resid = X[i][None, :] - W[i] @ X
        return 0.5 * float(kap[i] @ np.sum(resid**2, axis=1))

    return _finalize(
        layout,
        individual,
        dict(gradient=gradient, matrix=M, offset=q, value=value),
        chi,
        name=name,
        samples=samples,
        seed=seed,
    )


def _sign_pattern(minimizing_indices, maximizing_indices, p):
    mins = [int(i) for i in minimizing_indices]
    maxs = [int(j) for j in maximizing_indices]
    if set(mins) & set(maxs):
        raise StructuralError(f"players {sorted(set(mins) & set(maxs))} are both minimizing and maximizing")
    if sorted(mins + maxs) != list(range(p)):
        raise StructuralError("minimizing and maximizing indices must partition the players")
    if not maxs:
        raise StructuralError("a minimax game needs at least one maximizing player")
    return maxs


def build_minimax_game(
    grad_L,
    minimizing_indices,
    maximizing_indices,
    individual,
    chi=None,
    value_L=None,
    hessian=None,
    linear=None,
    samples: int = 1000,
    seed: int = 0,
    name="minimax",
):
    """Saddle-point problem ``min_u max_v sum phi(u) + Lag(u, v) - sum phi(v)``.

    Minimizing players see ``+grad Lag``, maximizing players ``-grad Lag``.
    A quadratic Lagrangian ``0.5 x'Hx + c'x`` may be passed as
    ``hessian``/``linear`` instead of ``grad_L``.
    """
    layout = _player_layout(individual)
    p = layout.num_blocks
    maxs = _sign_pattern(minimizing_indices, maximizing_indices, p)
    signs = np.ones(layout.total_dim)
    for j in maxs:
        signs[layout.slice(j)] = -1.0
    block_sign = np.ones(p)
    block_sign[maxs] = -1.0

    kw = {}
    if hessian is not None:
        H = np.array(hessian, dtype=float, ndmin=2)
        if H.shape != (layout.total_dim, layout.total_dim):
            raise StructuralError(f"hessian must be {layout.total_dim}x{layout.total_dim}")
        c = np.zeros(layout.total_dim) if linear is None else np.asarray(linear, dtype=float).reshape(-1)
        M = signs[:, None] * H
        q = signs * c
        M.setflags(write=False)
        q.setflags(write=False)

        def gradient(x):
            return M @ x + q

        if value_L is None:

            def value_L(x):
                x = np.asarray(x, dtype=float)
                return 0.5 * float(x @ H @ x) + float(c @ x)

        kw.update(matrix=M, offset=q)
    elif grad_L is None:
        raise StructuralError("either grad_L or hessian is required")
    else:

        def gradient(x):
            return signs * np.asarray(grad_L(x), dtype=float)

    kw["gradient"] = gradient
    if value_L is not None:
        kw["value"] = lambda i, x: float(block_sign[i]) * float(value_L(x))
    return _finalize(layout, individual, kw, chi, name=name, samples=samples, seed=seed)


def build_multivariate_minimization(
    grad_f,
    chi,
    couplings,
    individual,
    value_f=None,
    hessian=None,
    linear=None,
    samples: int = 1000,
    seed: int = 0,
    name="multivariate",
):
    """Joint minimization of ``sum phi_i(x_i) + f(x) + sum_k g_k(sum_j L_kj x_j)``.

    ``couplings`` holds pairs ``(g_k, blocks)`` where ``blocks`` is either a
    list of per-player matrices ``L_kj`` or a ready :class:`LinearCoupling`.
    ``grad_f=None`` with no ``hessian`` means ``f = 0``.
    """
    layout = _player_layout(individual)
    n = layout.total_dim
    pairs = []
    for k, (g, blocks) in enumerate(couplings):
        if isinstance(blocks, LinearCoupling):
            L = blocks
        else:
            try:
                L = LinearCoupling.from_blocks(blocks, layout)
            except StructuralError as exc:
                raise StructuralError(f"coupling {k}: {exc}") from None
        pairs.append((g, L))

    kw = {}
    if hessian is not None:
        H = np.array(hessian, dtype=float, ndmin=2)
        if H.shape != (n, n):
            raise StructuralError(f"hessian must be {n}x{n}")
        c = np.zeros(n) if linear is None else np.asarray(linear, dtype=float).reshape(-1)
        H.setflags(write=False)
        c.setflags(write=False)
        kw.update(matrix=H, offset=c)

        def gradient(x):
            return H @ x + c

        if value_f is None:

            def value_f(x):
                x = np.asarray(x, dtype=float)
                return 0.5 * float(x @ H @ x) + float(c @ x)

    elif grad_f is None:
        Z = np.zeros((n, n))
        Z.setflags(write=False)
        z = np.zeros(n)
        z.setflags(write=False)
        kw.update(matrix=Z, offset=z)

        def gradient(x):
            return np.zeros(n)

        if value_f is None:

            def value_f(x):
                return 0.0

    else:

        def gradient(x):
            return np.asarray(grad_f(x), dtype=float)

    kw["gradient"] = gradient
    if value_f is not None:
        kw["value"] = lambda i, x: float(value_f(x))
    return _finalize(layout, individual, kw, chi, couplings=pairs, name=name, samples=samples, seed=seed)


def build_affine_game(matrix, offset, individual, couplings=(), chi=None, samples: int = 1000, seed: int = 0, name="affine"):
    """Game with an explicitly given affine ``G x = matrix @ x + offset``.

    Each diagonal block of ``matrix`` must be symmetric, since it is the
    Hessian of ``f_i(. ; x_-i)``.
    """
    layout = _player_layout(individual)
    n = layout.total_dim
    M = np.array(matrix, dtype=float, ndmin=2)
    if M.shape != (n, n):
        raise StructuralError(f"coupling matrix must be {n}x{n}, got {M.shape}")
    for i in range(layout.num_blocks):
        sl = layout.slice(i)
        blk = M[sl, sl]
        if not np.allclose(blk, blk.T, rtol=0, atol=1e-12):
            raise ModelValidityError(f"diagonal block {i} of the coupling matrix is not symmetric")
    q = np.zeros(n) if offset is None else np.asarray(offset, dtype=float).reshape(-1)
    if q.shape != (n,):
        raise StructuralError(f"coupling offset must have length {n}")
    M.setflags(write=False)
    q.setflags(write=False)
    pairs = []
    for g, L in couplings:
        if not isinstance(L, LinearCoupling):
            L = LinearCoupling(layout, g.dim, matrix=L)
        pairs.append((g, L))
    return _finalize(
        layout,
        individual,
        dict(gradient=lambda x: M @ x + q, matrix=M, offset=q),
        chi,
        couplings=pairs,
        name=name,
        samples=samples,
        seed=seed,
    )

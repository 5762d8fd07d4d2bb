"""Independent certificates: KKT residual, grid best responses, Nash gap.

Nothing here touches the solver. The best-response oracle is a refined
grid search, so a small Nash gap is evidence that does not depend on the
splitting iteration being correct.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, OracleError, UnboundednessError
from .prox import Affine, Ball, Box, ProxFunction, Quadratic, Zero, prox_conjugate
from .spaces import BlockLayout, BlockVector

__all__ = [
    "Certificate",
    "BestResponse",
    "kkt_residual",
    "player_objective",
    "best_response",
    "player_gaps",
    "nash_gap",
    "certify",
    "is_feasible",
    "gradient_check",
    "quadratic_equilibrium_direct",
]

# indicator membership slack used by every oracle evaluation; a point whose
# prox residual is r lies within r of every indicator's set, so this matches
# the residual threshold of a passing certificate
FEASIBILITY_TOL = 1e-6
FINAL_RESOLUTION = 1e-6
TIE_TOL = 1e-12
MAX_GRID_DIM = 3
GRID_BUDGET = 200_000
# objectives evaluated point by point get a smaller grid per stage
SLOW_GRID_BUDGET = 2_000
MAX_RADIUS = 1e6

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _flat(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, BlockVector) else x, dtype=float).reshape(-1)


def kkt_residual(problem, x, v_star=None, gamma_probe: float = 1.0, mu_probe: float = 1.0) -> float:
    """Norm of the prox fixed-point residual of the KKT system.

    Zero exactly when ``x_i = prox_{gamma phi_i}(x_i - gamma(grad_i f_i(x) + (L*v*)_i))``
    for every player and ``L_k x in d g_k*(v*_k)`` for every coupling.
    """
    if not gamma_probe > 0 or not mu_probe > 0:
        raise ValueError("probe parameters must be positive")
    x = _flat(x)
    v = np.zeros(problem.dual_dim) if v_star is None else _flat(v_star)
    if x.shape[0] != problem.primal_dim or v.shape[0] != problem.dual_dim:
        raise ValueError("point dimensions do not match the problem")
    fwd = problem.gradient(x) + problem.L_adjoint(v)
    r2 = 0.0
    lay = problem.primal_layout
    for i, phi in enumerate(problem.individual):
        sl = lay.slice(i)
        r = x[sl] - phi.prox(gamma_probe, x[sl] - gamma_probe * fwd[sl])
        r2 += float(r @ r)
    if problem.num_couplings:
        dl = problem.dual_layout
        for k, (g, L) in enumerate(problem.nonsmooth_couplings):
            vk = v[dl.slice(k)]
            p_star, _ = prox_conjugate(g, mu_probe, vk + L.forward(x) / mu_probe)
            r = vk - p_star
            r2 += float(r @ r)
    return float(np.sqrt(r2))


# --------------------------------------------------------------------------
# player objectives


class _Objective:
    """``l_i(. ; x_-i)`` on batches of candidate strategies, up to a constant."""

    def __init__(self, problem, i, x):
        self.problem = problem
        self.i = i
        self.x = x
        lay = problem.primal_layout
        self.sl = lay.slice(i)
        self.xi = x[self.sl].copy()
        self.phi = problem.individual[i]
        c = problem.coupling
        if c.is_affine:
            self.kind = "affine"
            self.grad = problem.gradient(x)[self.sl]
            self.H = 0.5 * (c.matrix[self.sl, self.sl] + c.matrix[self.sl, self.sl].T)
        elif c.value is not None:
            self.kind = "value"
        else:
            self.kind = "integral"
        self.couplings = [(g, L.forward(x), L.column_block(i)) for g, L in problem.nonsmooth_couplings]

    def smooth(self, Y, anchor=None):
        if self.kind == "affine":
            # expanding around a nearby anchor keeps differences of values exact
            ref = self.xi if anchor is None else anchor
            g = self.grad + self.H @ (ref - self.xi)
            D = Y - ref
            return D @ g + 0.5 * np.einsum("mi,ij,mj->m", D, self.H, D)
        D = Y - self.xi
        out = np.empty(Y.shape[0])
        z = self.x.copy()
        if self.kind == "value":
            for m, y in enumerate(Y):
                z[self.sl] = y
                out[m] = self.problem.coupling.value(self.i, z)
            return out
        for m, d in enumerate(D):
            acc = 0.0
            for t, w in zip(0.5 * (_GL_NODES + 1), 0.5 * _GL_WEIGHTS):
                z[self.sl] = self.xi + t * d
                acc += w * float(self.problem.gradient(z)[self.sl] @ d)
            out[m] = acc
        return out

    def __call__(self, Y, anchor=None):
        """Values at the rows of ``Y``; with ``anchor`` the smooth part is shifted by its value there."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        vals = self.phi(Y, FEASIBILITY_TOL)
        for g, Lx, C in self.couplings:
            vals = vals + g(Lx + (Y - self.xi) @ C.T, FEASIBILITY_TOL)
        finite = np.isfinite(vals)
        if finite.any():
            vals[finite] += self.smooth(Y[finite], anchor)
        return vals


def player_objective(problem, i: int, x):
    """Callable ``Y -> l_i(Y; x_-i)`` for a batch ``Y`` (constant shifts are arbitrary)."""
    return _Objective(problem, int(i), _flat(x))


@dataclass
class BestResponse:
    point: np.ndarray
    value: float
    unique: bool
    mode: str
    radius: float = np.nan


def _search_region(phi: ProxFunction, xi: np.ndarray):
    """Affine parametrization ``y = base + B z`` and the z-box to search.

    Returns ``(base, B, lo, hi, fixed)`` where ``fixed`` marks sides of the
    z-box that are domain boundaries (no expansion needed there).
    """
    d = xi.shape[0]
    if isinstance(phi, Affine):
        base = phi.prox(1.0, xi)
        _, s, vt = np.linalg.svd(phi.A)
        rank = int(np.sum(s > 1e-12 * max(1.0, s.max() if s.size else 1.0)))
        B = vt[rank:].T
        k = B.shape[1]
        return base, B, -np.ones(k), np.ones(k), np.zeros((k, 2), dtype=bool)
    B = np.eye(d)
    r0 = max(1.0, 2.0 * float(np.max(np.abs(xi))))
    lo, hi = xi - r0, xi + r0
    fixed = np.zeros((d, 2), dtype=bool)
    if isinstance(phi, Box):
        flo, fhi = np.isfinite(phi.lo), np.isfinite(phi.hi)
        lo = np.where(flo, phi.lo, np.minimum(lo, np.where(fhi, phi.hi - r0, lo)))
        hi = np.where(fhi, phi.hi, np.maximum(hi, np.where(flo, phi.lo + r0, hi)))
        fixed[:, 0], fixed[:, 1] = flo, fhi
    elif isinstance(phi, Ball):
        lo, hi = phi.center - phi.radius, phi.center + phi.radius
        fixed[:] = True
    return np.zeros(d), B, lo, hi, fixed


def _grid(lo, hi, n):
    axes = [np.linspace(a, b, n) if b > a else np.array([a]) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1), axes


def _points_per_axis(k, budget):
    return max(3, int(budget ** (1.0 / k)))


def _pick(Z, vals, center, tie_tol=TIE_TOL):
    best = np.min(vals)
    if not np.isfinite(best):
        return None, best, 0
    ties = np.flatnonzero(vals <= best + tie_tol * max(1.0, abs(best)))
    j = ties[np.argmin(np.linalg.norm(Z[ties] - center, axis=1))]
    return Z[j], best, len(ties)


def _grid_best_response(problem, i, x) -> BestResponse:
    obj = _Objective(problem, i, x)
    phi = obj.phi
    base, B, lo, hi, fixed = _search_region(phi, obj.xi)
    k = B.shape[1]
    if k == 0:
        y = base
        return BestResponse(y, float(obj(y[None, :])[0]), True, "grid", 0.0)
    if k > MAX_GRID_DIM:
        raise OracleError(f"grid best response supports at most {MAX_GRID_DIM} free dimensions, player {i} has {k}")

    def f(Z, anchor=None):
        return obj(base + Z @ B.T, None if anchor is None else base + B @ anchor)

    center = (obj.xi - base) @ B if isinstance(phi, Affine) else obj.xi
    n = _points_per_axis(k, GRID_BUDGET if obj.kind == "affine" else SLOW_GRID_BUDGET)
    # stage 0: expand the box until the best point is interior or on a domain side
    prev_best = np.inf
    while True:
        Z, _ = _grid(lo, hi, n)
        Z = np.vstack([Z, np.clip(center, lo, hi)[None, :]])
        vals = f(Z)
        z, best, ties = _pick(Z, vals, center)
        if z is None:
            raise OracleError(f"player {i}: objective is +inf on the whole search box")
        h = (hi - lo) / (n - 1)
        on_lo = (z <= lo + 0.5 * h) & ~fixed[:, 0]
        on_hi = (z >= hi - 0.5 * h) & ~fixed[:, 1]
        if not (on_lo.any() or on_hi.any()):
            break
        width = float(np.max(hi - lo))
        if width >= MAX_RADIUS:
            if best < prev_best - 1e-9 * max(1.0, abs(best)):
                raise UnboundednessError(f"player {i}: objective keeps decreasing at radius {width:g}")
            break
        prev_best = best
        grow = np.maximum(hi - lo, 1.0) * 1.5
        lo = np.where(on_lo, lo - grow, lo)
        hi = np.where(on_hi, hi + grow, hi)
    unique = ties == 1
    radius = float(np.max(hi - lo)) / 2
    # refinement: shrink to two cells around the incumbent until the spacing is fine enough
    box_lo, box_hi = lo.copy(), hi.copy()
    stages = 1
    while stages < 3 or float(np.max(h)) > FINAL_RESOLUTION:
        lo = np.maximum(z - 2 * h, box_lo)
        hi = np.minimum(z + 2 * h, box_hi)
        Z, _ = _grid(lo, hi, n)
        Z = np.vstack([Z, z[None, :]])
        # exact ties only: only a flat objective should pull towards the incumbent
        z, _, _ = _pick(Z, f(Z, anchor=z), z, tie_tol=0.0)
        h = (hi - lo) / (n - 1)
        stages += 1
        if stages > 40:
            break
    y = base + B @ z
    return BestResponse(y, float(obj(y[None, :])[0]), bool(unique), "grid", radius)


def _quadratic_best_response(problem, i, x) -> BestResponse:
    phi = problem.individual[i]
    c = problem.coupling
    if not c.is_affine or problem.num_couplings or not isinstance(phi, (Quadratic, Zero)):
        raise OracleError("closed-form best response needs an affine G, quadratic or zero phi_i and no coupling terms")
    obj = _Objective(problem, i, x)
    d = obj.xi.shape[0]
    w = phi.weight if isinstance(phi, Quadratic) else 0.0
    ctr = phi.center if isinstance(phi, Quadratic) else np.zeros(d)
    H = obj.H + w * np.eye(d)
    rhs = w * ctr - (obj.grad - obj.H @ obj.xi)
    try:
        if np.linalg.cond(H) > 1e12:
            raise np.linalg.LinAlgError
        y = np.linalg.solve(H, rhs)
    except np.linalg.LinAlgError:
        raise DegeneracyError(f"player {i}: best-response system is singular") from None
    return BestResponse(y, float(obj(y[None, :])[0]), True, "quadratic")


def best_response(problem, player: int, x, mode: str = "auto") -> BestResponse:
    """Approximate minimizer of player ``player``'s objective with the others fixed.

    ``mode="grid"`` runs the refined grid search (at most three free
    dimensions); ``"quadratic"`` solves the first-order system exactly;
    ``"auto"`` takes the closed form when it applies.
    """
    x = _flat(x)
    if mode == "auto":
        phi = problem.individual[player]
        closed = problem.coupling.is_affine and not problem.num_couplings and isinstance(phi, (Quadratic, Zero))
        mode = "quadratic" if closed else "grid"
    if mode == "quadratic":
        return _quadratic_best_response(problem, player, x)
    if mode == "grid":
        return _grid_best_response(problem, player, x)
    raise ValueError(f"unknown best-response mode {mode!r}")


def player_gaps(problem, x, mode: str = "grid") -> list[float]:
    """``l_i(x_i; x_-i) - min l_i(. ; x_-i)`` for every player, clipped at zero."""
    x = _flat(x)
    gaps = []
    for i in range(problem.num_players):
        obj = _Objective(problem, i, x)
        here = float(obj(obj.xi[None, :])[0])
        br = best_response(problem, i, x, mode)
        gap = here - br.value if np.isfinite(here) else np.inf
        gaps.append(max(0.0, float(gap)))
    return gaps


def nash_gap(problem, x, mode: str = "grid") -> float:
    return max(player_gaps(problem, x, mode))


def gradient_check(problem, x, step: float = 1e-5) -> float:
    """Worst relative mismatch between ``grad_i f_i`` and central differences of ``f_i``.

    The mismatch for player ``i`` is ``||fd_i - g_i|| / max(1, ||g_i||)``.
    Needs evaluable losses (``coupling.value``).
    """
    value = problem.coupling.value
    if value is None:
        raise OracleError("gradient check needs evaluable player losses")
    x = _flat(x)
    grad = np.asarray(problem.coupling.gradient(x), dtype=float)
    worst = 0.0
    for i in range(problem.num_players):
        sl = problem.primal_layout.slice(i)
        fd = np.empty(sl.stop - sl.start)
        for j, c in enumerate(range(sl.start, sl.stop)):
            h = step * max(1.0, abs(x[c]))
            up, down = x.copy(), x.copy()
            up[c] += h
            down[c] -= h
            fd[j] = (value(i, up) - value(i, down)) / (2 * h)
        g = grad[sl]
        worst = max(worst, float(np.linalg.norm(fd - g)) / max(1.0, float(np.linalg.norm(g))))
    return worst


def is_feasible(problem, x) -> bool:
    """Every ``phi_i(x_i)`` and ``g_k(L_k x)`` is finite (indicators up to the oracle slack)."""
    x = _flat(x)
    lay = problem.primal_layout
    for i, phi in enumerate(problem.individual):
        if not np.isfinite(phi(x[lay.slice(i)][None, :], FEASIBILITY_TOL)[0]):
            return False
    for g, L in problem.nonsmooth_couplings:
        if not np.isfinite(g(L.forward(x)[None, :], FEASIBILITY_TOL)[0]):
            return False
    return True


@dataclass
class Certificate:
    kkt_residual: float
    nash_gap: float
    per_player_gaps: list[float]
    feasible: bool

    def passes(self, residual_tol: float = 1e-6, gap_tol: float = 1e-5) -> bool:
        return self.feasible and self.kkt_residual <= residual_tol and self.nash_gap <= gap_tol


def certify(problem, x, v_star=None, mode: str = "grid") -> Certificate:
    gaps = player_gaps(problem, x, mode)
    return Certificate(kkt_residual(problem, x, v_star), max(gaps), gaps, is_feasible(problem, x))


def quadratic_equilibrium_direct(kappas, weights, quadratic_phis) -> BlockVector:
    """Equilibrium of a quadratic-coupling game with quadratic or zero ``phi_i``.

    Solves ``w_i (x_i - c_i) + sum_l kappa_il (x_i - sum_j w_ilj x_j) = 0``
    for all players at once by a dense factorization.
    """
    p = len(quadratic_phis)
    dims = {phi.dim for phi in quadratic_phis}
    if len(dims) != 1:
        raise ValueError("all players must share one strategy dimension")
    d = dims.pop()
    K = np.zeros((p * d, p * d))
    rhs = np.zeros(p * d)
    eye = np.eye(d)
    for i, phi in enumerate(quadratic_phis):
        if isinstance(phi, Quadratic):
            w, c = phi.weight, phi.center
        elif isinstance(phi, Zero):
            w, c = 0.0, np.zeros(d)
        else:
            raise ValueError(f"phi_{i} must be quadratic or zero, got {phi.kind}")
        rows = slice(i * d, (i + 1) * d)
        kap = np.atleast_1d(np.asarray(kappas[i], dtype=float))
        W = np.asarray(weights[i], dtype=float).reshape(kap.size, p)
        K[rows, rows] += (w + kap.sum()) * eye
        for ell in range(kap.size):
            for j in range(p):
                K[rows, j * d : (j + 1) * d] -= kap[ell] * W[ell, j] * eye
        rhs[rows] = w * c
    if not np.isfinite(np.linalg.cond(K)) or np.linalg.cond(K) > 1e12:
        raise DegeneracyError("the equilibrium system is singular")
    return BlockVector(BlockLayout.uniform(p, d), np.linalg.solve(K, rhs))

"""Proper lower-semicontinuous convex functions known through their prox.

Every function supports evaluation (``+inf`` outside the domain) and the
proximity operator ``prox(gamma, x) = argmin gamma*f + 0.5*||. - x||^2``.
Conjugate resolvents are never written out: :func:`prox_conjugate` goes
through the Moreau decomposition.

Evaluation accepts a single point of shape ``(dim,)`` or a batch of shape
``(m, dim)``; the batch form is what the grid oracle uses.
"""

from __future__ import annotations

import numpy as np

from .errors import ModelValidityError, ParameterError, StructuralError
from .spaces import BlockVector

__all__ = [
    "ProxFunction",
    "Zero",
    "Box",
    "Ball",
    "Affine",
    "L1",
    "Quadratic",
    "SupportBox",
    "eval",
    "prox_eval",
    "prox_conjugate",
    "REGISTRY",
    "from_spec",
    "to_spec",
]


def _vec(value, dim, name):
    arr = np.array(value, dtype=float).reshape(-1)
    if arr.size == 1 and dim > 1:
        arr = np.full(dim, arr[0])
    if arr.shape != (dim,):
        raise StructuralError(f"{name} must have length {dim}, got {arr.shape[0]}")
    arr.setflags(write=False)
    return arr


def _check_gamma(gamma):
    gamma = float(gamma)
    if not gamma > 0 or not np.isfinite(gamma):
        raise ParameterError(f"prox parameter must be a positive real, got {gamma}")
    return gamma


class ProxFunction:
    """Base class. Subclasses set ``kind`` and implement ``_values`` and ``_prox``.

    ``offset`` is a constant added to every finite value; it leaves the prox
    unchanged.
    """

    kind = "abstract"
    separable = False

    def __init__(self, dim: int, offset: float = 0.0):
        dim = int(dim)
        if dim < 1:
            raise StructuralError(f"dimension must be >= 1, got {dim}")
        self.dim = dim
        self.offset = float(offset)

    def _point(self, x) -> np.ndarray:
        arr = x.data if isinstance(x, BlockVector) else np.asarray(x, dtype=float)
        arr = arr.reshape(-1) if arr.ndim == 0 else arr
        if arr.shape != (self.dim,):
            raise StructuralError(f"{self.kind}: expected a point of length {self.dim}, got shape {arr.shape}")
        return arr

    def __call__(self, x, tol: float = 0.0):
        """Value at ``x``; ``tol`` loosens set membership of indicators."""
        arr = np.asarray(x.data if isinstance(x, BlockVector) else x, dtype=float)
        if arr.ndim == 2:
            if arr.shape[1] != self.dim:
                raise StructuralError(f"{self.kind}: batch has width {arr.shape[1]}, expected {self.dim}")
            return self._values(arr, tol) + self.offset
        return float(self._values(self._point(arr)[None, :], tol)[0] + self.offset)

    def prox(self, gamma, x) -> np.ndarray:
        gamma = _check_gamma(gamma)
        return self._prox(gamma, self._point(x).copy())

    def _values(self, X, tol):
        raise NotImplementedError

    def _prox(self, gamma, x):
        raise NotImplementedError

    def params(self) -> dict:
        """Registry parameters; inverse of :func:`from_spec`."""
        raise NotImplementedError

    def with_offset(self, offset: float) -> ProxFunction:
        spec = to_spec(self)
        spec["offset"] = float(offset)
        return from_spec(spec, self.dim)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, {self.params()})"


class Zero(ProxFunction):
    kind = "zero"
    separable = True

    def _values(self, X, tol):
        return np.zeros(X.shape[0])

    def _prox(self, gamma, x):
        return x

    def params(self):
        return {}


class Box(ProxFunction):
    """Indicator of ``{x : lo <= x <= hi}``; bounds may be infinite."""

    kind = "box"
    separable = True

    def __init__(self, lo, hi, dim: int | None = None, offset: float = 0.0):
        if dim is None:
            dim = max(np.size(lo), np.size(hi))
        super().__init__(dim, offset)
        self.lo = _vec(lo, self.dim, "lo")
        self.hi = _vec(hi, self.dim, "hi")
        if np.any(self.lo > self.hi):
            raise ModelValidityError("box is empty: some lo > hi")

    def _values(self, X, tol):
        inside = np.all((X >= self.lo - tol) & (X <= self.hi + tol), axis=1)
        return np.where(inside, 0.0, np.inf)

    def _prox(self, gamma, x):
        return np.clip(x, self.lo, self.hi)

    def params(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


class Ball(ProxFunction):
    """Indicator of the closed Euclidean ball ``||x - center|| <= radius``."""

    kind = "ball"

    # projections land on the sphere only up to rounding
    _rtol = 1e-12

    def __init__(self, center, radius: float, dim: int | None = None, offset: float = 0.0):
        if dim is None:
            dim = np.size(center)
        super().__init__(dim, offset)
        self.center = _vec(center, self.dim, "center")
        self.radius = float(radius)
        if not self.radius >= 0:
            raise ModelValidityError(f"ball radius must be >= 0, got {radius}")

    def _values(self, X, tol):
        dist = np.linalg.norm(X - self.center, axis=1)
        bound = self.radius * (1 + self._rtol) + self._rtol + tol
        return np.where(dist <= bound, 0.0, np.inf)

    def _prox(self, gamma, x):
        d = x - self.center
        nrm = np.linalg.norm(d)
        if nrm <= self.radius:
            return x
        return self.center + (self.radius / nrm) * d

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}


class Affine(ProxFunction):
    """Indicator of ``{x : A x = b}``.

    The projection ``x - A^+ (A x - b)`` uses a pseudo-inverse computed once
    at construction.
    """

    kind = "affine"

    def __init__(self, A, b, offset: float = 0.0):
        A = np.array(A, dtype=float, ndmin=2)
        super().__init__(A.shape[1], offset)
        self.A = A
        self.A.setflags(write=False)
        self.b = _vec(b, A.shape[0], "b")
        self._pinv = np.linalg.pinv(A)
        x0 = self._pinv @ self.b
        self._scale = 1.0 + float(np.linalg.norm(self.b)) + float(np.linalg.norm(A))
        if np.linalg.norm(A @ x0 - self.b) > 1e-9 * self._scale:
            raise ModelValidityError("affine set is empty: b is not in the range of A")

    def _values(self, X, tol):
        res = np.linalg.norm(X @ self.A.T - self.b, axis=1)
        scale = self._scale * (1.0 + np.linalg.norm(X, axis=1))
        return np.where(res <= 1e-10 * scale + tol, 0.0, np.inf)

    def _prox(self, gamma, x):
        return x - self._pinv @ (self.A @ x - self.b)

    def params(self):
        return {"A": self.A.tolist(), "b": self.b.tolist()}


class L1(ProxFunction):
    """``sum_j w_j |x_j|`` with nonnegative weights."""

    kind = "l1"
    separable = True

    def __init__(self, weight=1.0, dim: int = 1, offset: float = 0.0):
        if np.size(weight) > 1:
            dim = np.size(weight)
        super().__init__(dim, offset)
        self.weight = _vec(weight, self.dim, "weight")
        if np.any(self.weight < 0):
            raise ModelValidityError("l1 weights must be nonnegative")

    def _values(self, X, tol):
        return np.abs(X) @ self.weight

    def _prox(self, gamma, x):
        t = gamma * self.weight
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)

    def params(self):
        w = self.weight
        return {"weight": float(w[0]) if np.all(w == w[0]) else w.tolist()}


class Quadratic(ProxFunction):
    """``(w/2) ||x - c||^2`` with ``w >= 0``."""

    kind = "quadratic"
    separable = True

    def __init__(self, weight: float = 1.0, center=0.0, dim: int | None = None, offset: float = 0.0):
        if dim is None:
            dim = np.size(center)
        super().__init__(dim, offset)
        self.weight = float(weight)
        if not self.weight >= 0:
            raise ModelValidityError(f"quadratic weight must be >= 0, got {weight}")
        self.center = _vec(center, self.dim, "center")

    def _values(self, X, tol):
        return 0.5 * self.weight * np.sum((X - self.center) ** 2, axis=1)

    def _prox(self, gamma, x):
        gw = gamma * self.weight
        return (x + gw * self.center) / (1.0 + gw)

    def params(self):
        return {"weight": self.weight, "center": self.center.tolist()}


class SupportBox(ProxFunction):
    """Support function of a bounded box, ``sum_j max(lo_j x_j, hi_j x_j)``."""

    kind = "support_box"
    separable = True

    def __init__(self, lo, hi, dim: int | None = None, offset: float = 0.0):
        if dim is None:
            dim = max(np.size(lo), np.size(hi))
        super().__init__(dim, offset)
        self.lo = _vec(lo, self.dim, "lo")
        self.hi = _vec(hi, self.dim, "hi")
        if np.any(self.lo > self.hi) or not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ModelValidityError("support_box needs a nonempty bounded box")

    def _values(self, X, tol):
        return np.sum(np.maximum(X * self.lo, X * self.hi), axis=1)

    def _prox(self, gamma, x):
        return x - gamma * np.clip(x / gamma, self.lo, self.hi)

    def params(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


def eval(f: ProxFunction, x) -> float:  # noqa: A001 - mirrors the operation name
    return f(x)


def prox_eval(f: ProxFunction, gamma: float, x) -> np.ndarray:
    return f.prox(gamma, x)


def prox_conjugate(f: ProxFunction, mu: float, z) -> tuple[np.ndarray, np.ndarray]:
    """Resolvent of the conjugate through the Moreau decomposition.

    Returns ``(p_star, p)`` with ``p_star = prox_{f*/mu}(z)`` and
    ``p = prox_{mu f}(mu z)``, so that ``mu z = p + mu p_star``.
    """
    mu = float(mu)
    if not mu > 0 or not np.isfinite(mu):
        raise ParameterError(f"conjugate prox parameter must be a positive real, got {mu}")
    z = f._point(z)
    p = f.prox(mu, mu * z)
    return z - p / mu, p


REGISTRY = {
    "zero": Zero,
    "box": Box,
    "ball": Ball,
    "affine": Affine,
    "l1": L1,
    "quadratic": Quadratic,
    "support_box": SupportBox,
}


def from_spec(spec: dict, dim: int) -> ProxFunction:
    """Build a function from ``{"name": ..., **params}``."""
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in REGISTRY:
        raise KeyError(name)
    offset = spec.pop("offset", 0.0)
    if name == "zero":
        f = Zero(dim, offset=offset)
    elif name == "affine":
        f = Affine(spec["A"], spec["b"], offset=offset)
    elif name == "l1":
        f = L1(spec.get("weight", 1.0), dim=dim, offset=offset)
    elif name == "quadratic":
        f = Quadratic(spec.get("weight", 1.0), spec.get("center", 0.0), dim=dim, offset=offset)
    elif name == "ball":
        f = Ball(spec.get("center", 0.0), spec["radius"], dim=dim, offset=offset)
    else:
        f = REGISTRY[name](spec["lo"], spec["hi"], dim=dim, offset=offset)
    if f.dim != dim:
        raise StructuralError(f"{name}: parameters give dimension {f.dim}, expected {dim}")
    return f


def to_spec(f: ProxFunction) -> dict:
    spec = {"name": f.kind, **f.params()}
    if f.offset:
        spec["offset"] = f.offset
    return spec

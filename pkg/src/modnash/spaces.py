"""Finite-dimensional direct sums, block vectors and linear couplings.

A strategy profile lives in ``H = H_1 + ... + H_p`` and a dual vector in
``G = G_1 + ... + G_q``; both are realized as flat float64 arrays split
into consecutive blocks described by a :class:`BlockLayout`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import StructuralError

__all__ = [
    "BlockLayout",
    "BlockVector",
    "LinearCoupling",
    "inner",
    "apply_forward",
    "apply_adjoint",
    "stack_forward",
    "stack_adjoint",
]


@dataclass(frozen=True)
class BlockLayout:
    """Ordered block dimensions of a direct sum."""

    block_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.block_dims)
        if not dims:
            raise StructuralError("a layout needs at least one block")
        if any(d < 1 for d in dims):
            raise StructuralError(f"block dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "block_dims", dims)

    @classmethod
    def uniform(cls, num_blocks: int, dim: int) -> BlockLayout:
        return cls((dim,) * num_blocks)

    @property
    def num_blocks(self) -> int:
        return len(self.block_dims)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.block_dims)]))

    @property
    def total_dim(self) -> int:
        return self.offsets[-1]

    def slice(self, i: int) -> slice:
        if not 0 <= i < self.num_blocks:
            raise StructuralError(f"block index {i} out of range for {self.num_blocks} blocks")
        return slice(self.offsets[i], self.offsets[i + 1])

    def split(self, data) -> list[np.ndarray]:
        data = np.asarray(data, dtype=float)
        if data.shape != (self.total_dim,):
            raise StructuralError(f"expected a vector of length {self.total_dim}, got shape {data.shape}")
        return [data[self.slice(i)] for i in range(self.num_blocks)]

    def join(self, blocks: Sequence) -> np.ndarray:
        if len(blocks) != self.num_blocks:
            raise StructuralError(f"expected {self.num_blocks} blocks, got {len(blocks)}")
        parts = []
        for i, (b, d) in enumerate(zip(blocks, self.block_dims)):
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if b.shape != (d,):
                raise StructuralError(f"block {i} must have shape ({d},), got {b.shape}")
            parts.append(b)
        return np.concatenate(parts)

    def concat(self, other: BlockLayout) -> BlockLayout:
        return BlockLayout(self.block_dims + other.block_dims)


class BlockVector:
    """An element of a direct sum: a flat float64 array plus its layout."""

    __slots__ = ("layout", "data")

    def __init__(self, layout: BlockLayout, data=None):
        self.layout = layout
        if data is None:
            data = np.zeros(layout.total_dim)
        data = np.array(data, dtype=float).reshape(-1)
        if data.shape[0] != layout.total_dim:
            raise StructuralError(
                f"data length {data.shape[0]} does not match layout total_dim {layout.total_dim}"
            )
        self.data = data

    @classmethod
    def from_blocks(cls, layout: BlockLayout, blocks: Sequence) -> BlockVector:
        return cls(layout, layout.join(blocks))

    @classmethod
    def embed(cls, layout: BlockLayout, i: int, value) -> BlockVector:
        """Insert ``value`` at block ``i`` with zeros elsewhere."""
        out = cls(layout)
        out.data[layout.slice(i)] = value
        return out

    def block(self, i: int) -> np.ndarray:
        return self.data[self.layout.slice(i)].copy()

    def blocks(self) -> list[np.ndarray]:
        return [self.block(i) for i in range(self.layout.num_blocks)]

    def with_block(self, i: int, value) -> BlockVector:
        """The profile ``(value; self without block i)``."""
        out = self.copy()
        out.data[self.layout.slice(i)] = value
        return out

    def copy(self) -> BlockVector:
        return BlockVector(self.layout, self.data.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __len__(self):
        return self.data.shape[0]

    def _check(self, other):
        if not isinstance(other, BlockVector) or other.layout != self.layout:
            raise StructuralError("block vectors have different layouts")

    def __add__(self, other):
        self._check(other)
        return BlockVector(self.layout, self.data + other.data)

    def __sub__(self, other):
        self._check(other)
        return BlockVector(self.layout, self.data - other.data)

    def __mul__(self, scalar):
        return BlockVector(self.layout, self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return BlockVector(self.layout, -self.data)

    def __eq__(self, other):
        return (
            isinstance(other, BlockVector)
            and other.layout == self.layout
            and np.array_equal(other.data, self.data)
        )

    __hash__ = None

    def __repr__(self):
        return f"BlockVector({list(self.layout.block_dims)}, {self.data.tolist()})"


def _as_flat(v, expected: int | None = None, what: str = "vector") -> np.ndarray:
    arr = v.data if isinstance(v, BlockVector) else np.atleast_1d(np.asarray(v, dtype=float))
    if arr.ndim != 1:
        raise StructuralError(f"{what} must be one-dimensional, got shape {arr.shape}")
    if expected is not None and arr.shape[0] != expected:
        raise StructuralError(f"{what} has length {arr.shape[0]}, expected {expected}")
    return arr


def inner(x, y) -> float:
    """Direct-sum inner product."""
    if isinstance(x, BlockVector) and isinstance(y, BlockVector) and x.layout != y.layout:
        raise StructuralError("inner product of vectors with different layouts")
    a = _as_flat(x)
    b = _as_flat(y, a.shape[0], "second argument")
    return float(a @ b)


class LinearCoupling:
    """A bounded linear map ``L: H -> G_k`` with an exact adjoint.

    Either a dense matrix or a matrix-free ``(apply, adjoint_apply)`` pair;
    matrix-free operators are never transposed automatically.
    """

    def __init__(
        self,
        source_layout: BlockLayout,
        target_dim: int,
        matrix=None,
        apply: Callable[[np.ndarray], np.ndarray] | None = None,
        adjoint_apply: Callable[[np.ndarray], np.ndarray] | None = None,
    ):
        self.source_layout = source_layout
        self.target_dim = int(target_dim)
        if self.target_dim < 1:
            raise StructuralError("target dimension must be >= 1")
        if matrix is not None:
            matrix = np.array(matrix, dtype=float, ndmin=2)
            if matrix.shape != (self.target_dim, source_layout.total_dim):
                raise StructuralError(
                    f"matrix shape {matrix.shape} does not match "
                    f"({self.target_dim}, {source_layout.total_dim})"
                )
            matrix.setflags(write=False)
        elif apply is None or adjoint_apply is None:
            raise StructuralError("matrix-free couplings need both apply and adjoint_apply")
        self.matrix = matrix
        self._apply = apply
        self._adjoint = adjoint_apply

    @classmethod
    def dense(cls, matrix, source_layout: BlockLayout | None = None) -> LinearCoupling:
        matrix = np.array(matrix, dtype=float, ndmin=2)
        if source_layout is None:
            source_layout = BlockLayout((matrix.shape[1],))
        return cls(source_layout, matrix.shape[0], matrix=matrix)

    @classmethod
    def from_blocks(cls, blocks: Sequence, source_layout: BlockLayout) -> LinearCoupling:
        """Horizontal stacking ``x -> sum_j L_j x_j`` of per-player blocks."""
        if len(blocks) != source_layout.num_blocks:
            raise StructuralError(
                f"expected {source_layout.num_blocks} blocks, got {len(blocks)}"
            )
        mats = [np.array(b, dtype=float, ndmin=2) for b in blocks]
        rows = {m.shape[0] for m in mats}
        if len(rows) != 1:
            raise StructuralError(f"blocks have inconsistent row counts {sorted(rows)}")
        for j, (m, d) in enumerate(zip(mats, source_layout.block_dims)):
            if m.shape[1] != d:
                raise StructuralError(f"block {j} has width {m.shape[1]}, player dimension is {d}")
        return cls(source_layout, rows.pop(), matrix=np.hstack(mats))

    @classmethod
    def identity(cls, layout: BlockLayout) -> LinearCoupling:
        return cls(layout, layout.total_dim, matrix=np.eye(layout.total_dim))

    @classmethod
    def zero(cls, layout: BlockLayout, target_dim: int) -> LinearCoupling:
        return cls(layout, target_dim, matrix=np.zeros((target_dim, layout.total_dim)))

    def forward(self, x) -> np.ndarray:
        x = _as_flat(x, self.source_layout.total_dim, "source vector")
        if self.matrix is not None:
            return self.matrix @ x
        return np.asarray(self._apply(x), dtype=float).reshape(self.target_dim)

    def adjoint(self, v) -> np.ndarray:
        v = _as_flat(v, self.target_dim, "target vector")
        if self.matrix is not None:
            return self.matrix.T @ v
        return np.asarray(self._adjoint(v), dtype=float).reshape(self.source_layout.total_dim)

    def column_block(self, i: int) -> np.ndarray:
        """Matrix of ``x_i -> L (x_i; 0)``, shape ``(target_dim, dim H_i)``."""
        sl = self.source_layout.slice(i)
        if self.matrix is not None:
            return np.array(self.matrix[:, sl])
        cols = []
        for e in np.eye(self.source_layout.block_dims[i]):
            x = np.zeros(self.source_layout.total_dim)
            x[sl] = e
            cols.append(self.forward(x))
        return np.column_stack(cols)

    def to_dense(self) -> np.ndarray:
        if self.matrix is not None:
            return np.array(self.matrix)
        return np.column_stack([self.forward(e) for e in np.eye(self.source_layout.total_dim)])

    def __repr__(self):
        kind = "dense" if self.matrix is not None else "matrix-free"
        return f"LinearCoupling({kind}, {self.source_layout.total_dim} -> {self.target_dim})"


def apply_forward(L: LinearCoupling, x) -> BlockVector:
    return BlockVector(BlockLayout((L.target_dim,)), L.forward(x))


def apply_adjoint(L: LinearCoupling, v) -> BlockVector:
    return BlockVector(L.source_layout, L.adjoint(v))


def stack_forward(couplings: Sequence[LinearCoupling], x) -> np.ndarray:
    """``x -> (L_k x)_k`` into the flat dual space."""
    if not couplings:
        return np.zeros(0)
    return np.concatenate([L.forward(x) for L in couplings])


def stack_adjoint(couplings: Sequence[LinearCoupling], v, dual_layout: BlockLayout | None, primal_dim: int):
    """``v* -> sum_k L_k* v*_k``."""
    out = np.zeros(primal_dim)
    if not couplings:
        return out
    for k, L in enumerate(couplings):
        out += L.adjoint(v[dual_layout.slice(k)])
    return out

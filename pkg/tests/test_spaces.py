import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modnash.errors import StructuralError
from modnash.spaces import (
    BlockLayout,
    BlockVector,
    LinearCoupling,
    apply_adjoint,
    apply_forward,
    inner,
    stack_adjoint,
    stack_forward,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_layout_offsets_and_total():
    lay = BlockLayout((2, 1, 3))
    assert lay.total_dim == 6
    assert lay.offsets == (0, 2, 3, 6)
    assert lay.slice(1) == slice(2, 3)


@pytest.mark.parametrize("dims", [(), (0,), (2, -1)])
def test_layout_rejects_bad_dims(dims):
    with pytest.raises(StructuralError):
        BlockLayout(dims)


def test_layout_is_immutable():
    lay = BlockLayout((1, 2))
    with pytest.raises(AttributeError):
        lay.block_dims = (3,)


def test_blockvector_length_checked():
    with pytest.raises(StructuralError):
        BlockVector(BlockLayout((2,)), [1.0, 2.0, 3.0])


def test_with_block_builds_deviation_profile():
    lay = BlockLayout((1, 2))
    x = BlockVector(lay, [1.0, 2.0, 3.0])
    y = x.with_block(1, [7.0, 8.0])
    assert y.data.tolist() == [1.0, 7.0, 8.0]
    assert x.data.tolist() == [1.0, 2.0, 3.0]


@given(arrays(np.float64, 6, elements=finite))
def test_extract_then_embed_reconstructs(data):
    lay = BlockLayout((2, 1, 3))
    x = BlockVector(lay, data)
    total = BlockVector(lay)
    for i in range(lay.num_blocks):
        total = total + BlockVector.embed(lay, i, x.block(i))
    assert total == x
    assert BlockVector.from_blocks(lay, x.blocks()) == x


def test_inner_examples():
    lay2 = BlockLayout((2,))
    assert inner(BlockVector(lay2, [1, 0]), BlockVector(lay2, [0, 1])) == 0.0
    x = BlockVector(lay2, [3, 4])
    assert inner(x, x) == 25.0
    lay3 = BlockLayout((3,))
    # summation oracle
    a, b = [1, 2, 3], [4, 5, 6]
    assert inner(BlockVector(lay3, a), BlockVector(lay3, b)) == sum(p * q for p, q in zip(a, b)) == 32


def test_inner_layout_mismatch():
    with pytest.raises(StructuralError):
        inner(BlockVector(BlockLayout((2,)), [1, 2]), BlockVector(BlockLayout((1, 1)), [1, 2]))
    with pytest.raises(StructuralError):
        inner([1.0, 2.0], [1.0])


@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite))
def test_inner_symmetric_and_positive(a, b):
    lay = BlockLayout((1, 3))
    x, y = BlockVector(lay, a), BlockVector(lay, b)
    assert inner(x, y) == inner(y, x)
    assert inner(x, x) >= 0
    if np.any(a):
        # subnormal entries square to zero, so compare after scaling
        xn = BlockVector(lay, a / np.abs(a).max())
        assert inner(xn, xn) >= 1.0 - 1e-12


def test_forward_examples():
    lay = BlockLayout((2,))
    x = BlockVector(lay, [1.0, 2.0])
    assert apply_forward(LinearCoupling.identity(lay), x).data.tolist() == [1.0, 2.0]
    assert apply_forward(LinearCoupling.zero(lay, 3), x).data.tolist() == [0.0, 0.0, 0.0]
    M = [[1, 2], [3, 4]]
    xs = [1.0, 1.0]
    loop = [sum(M[r][c] * xs[c] for c in range(2)) for r in range(2)]
    assert apply_forward(LinearCoupling.dense(M), xs).data.tolist() == loop == [3.0, 7.0]


def test_adjoint_examples():
    lay = BlockLayout((2,))
    assert apply_adjoint(LinearCoupling.identity(lay), [1.0, 2.0]).data.tolist() == [1.0, 2.0]
    assert apply_adjoint(LinearCoupling.dense([[1, 2], [3, 4]]), [1.0, 0.0]).data.tolist() == [1.0, 2.0]
    assert apply_adjoint(LinearCoupling.dense([[0, 1], [-1, 0]]), [1.0, 0.0]).data.tolist() == [0.0, 1.0]


def test_dimension_mismatch_raises():
    L = LinearCoupling.dense([[1, 2], [3, 4]])
    with pytest.raises(StructuralError):
        L.forward([1.0, 2.0, 3.0])
    with pytest.raises(StructuralError):
        L.adjoint([1.0])


def test_matrix_free_requires_both_callables():
    lay = BlockLayout((2,))
    with pytest.raises(StructuralError):
        LinearCoupling(lay, 2, apply=lambda x: x)


def test_from_blocks_checks_widths_and_rows():
    lay = BlockLayout((1, 2))
    L = LinearCoupling.from_blocks([[[1.0]], [[2.0, 3.0]]], lay)
    assert L.to_dense().tolist() == [[1.0, 2.0, 3.0]]
    assert L.column_block(1).tolist() == [[2.0, 3.0]]
    with pytest.raises(StructuralError):
        LinearCoupling.from_blocks([[[1.0]], [[2.0]]], lay)
    with pytest.raises(StructuralError):
        LinearCoupling.from_blocks([[[1.0]], [[2.0, 3.0], [4.0, 5.0]]], lay)


def _adjoint_gap(L, x, v):
    return abs(float(L.forward(x) @ v) - float(x @ L.adjoint(v)))


def test_adjoint_identity_dense_and_matrix_free():
    r = np.random.default_rng(3)
    lay = BlockLayout((2, 3))
    M = r.standard_normal((4, 5))
    ops = [
        LinearCoupling(lay, 4, matrix=M),
        LinearCoupling(lay, 4, apply=lambda x: M @ x, adjoint_apply=lambda v: M.T @ v),
    ]
    for L in ops:
        for _ in range(200):
            x, v = r.standard_normal(5), r.standard_normal(4)
            tol = 1e-10 * (1 + np.linalg.norm(x)) * (1 + np.linalg.norm(v))
            assert _adjoint_gap(L, x, v) <= tol
    assert np.allclose(ops[1].to_dense(), M)
    assert np.allclose(ops[1].column_block(0), M[:, :2])


def test_stacked_operators():
    lay = BlockLayout((1, 1))
    L1 = LinearCoupling.dense([[1.0, 1.0]], lay)
    L2 = LinearCoupling.dense([[1.0, -1.0], [0.0, 2.0]], lay)
    x = np.array([2.0, 3.0])
    assert stack_forward([L1, L2], x).tolist() == [5.0, -1.0, 6.0]
    dual = BlockLayout((1, 2))
    v = np.array([1.0, 1.0, 1.0])
    assert stack_adjoint([L1, L2], v, dual, 2).tolist() == [2.0, 2.0]
    assert stack_forward([], x).shape == (0,)
    assert stack_adjoint([], np.zeros(0), None, 2).tolist() == [0.0, 0.0]


@settings(max_examples=50)
@given(arrays(np.float64, (3, 2), elements=finite), arrays(np.float64, 2, elements=finite), arrays(np.float64, 3, elements=finite))
def test_adjoint_identity_property(M, x, v):
    L = LinearCoupling.dense(M)
    tol = 1e-10 * (1 + np.linalg.norm(x)) * (1 + np.linalg.norm(v)) * (1 + np.abs(M).max())
    assert _adjoint_gap(L, x, v) <= tol

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mri_classify.errors import GraphError, ShapeError
from mri_classify.tensor import (
    GradTape,
    Tensor,
    add,
    backward,
    finite_diff_grad,
    matmul,
    mul,
    reduce_sum,
    reshape,
)


def test_new_zero_fill():
    t = Tensor([2, 2], 0)
    assert t.shape == (2, 2)
    assert np.array_equal(t.data, np.zeros((2, 2), dtype=np.float32))


def test_new_image_sized():
    t = Tensor([224, 224, 3], 0)
    assert t.size == 150_528
    assert not t.data.any()


def test_new_row_major_layout():
    # enumeration oracle: flat index of (i, j) in a [2, 3] grid is i*3 + j
    vals = [1, 2, 3, 4, 5, 6]
    t = Tensor([2, 3], vals)
    for i in range(2):
        for j in range(3):
            assert t[i, j] == vals[i * 3 + j]
    assert t[1, 2] == 6


def test_new_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        Tensor([0, 3], 0)
    with pytest.raises(ShapeError):
        Tensor([2, -1], 0)
    with pytest.raises(ShapeError):
        Tensor([], 0)


def test_new_rejects_length_mismatch():
    with pytest.raises(ShapeError):
        Tensor([2, 2], [1, 2, 3])


def test_requires_grad_defaults_false():
    assert Tensor([3], 0).requires_grad is False


@given(
    st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=4),
    st.integers(0, 2 ** 31),
)
@settings(max_examples=100, deadline=None)
def test_flatten_reshape_roundtrip(shape, seed):
    rng = np.random.default_rng(seed)
    t = Tensor(shape, rng.normal(size=int(np.prod(shape))).astype(np.float32))
    flat = reshape(t, [t.size])
    back = reshape(flat, shape)
    assert np.array_equal(back.data, t.data)


# -- matmul ------------------------------------------------------------


def test_matmul_inner_product():
    # hand evaluation: 1*3 + 2*4 = 11
    a = Tensor([1, 2], [1, 2])
    b = Tensor([2, 1], [3, 4])
    out = matmul(a, b)
    assert out.shape == (1, 1)
    assert out.item() == 11.0


def test_matmul_identity_exact():
    rng = np.random.default_rng(7)
    x = Tensor([3, 5], rng.normal(size=15).astype(np.float32))
    eye = Tensor([3, 3], np.eye(3, dtype=np.float32))
    assert np.array_equal(matmul(eye, x).data, x.data)
    eye5 = Tensor([5, 5], np.eye(5, dtype=np.float32))
    assert np.array_equal(matmul(x, eye5).data, x.data)


def test_matmul_dense6_shape():
    a = Tensor([1, 25088], 0)
    b = Tensor([25088, 4096], 0)
    assert matmul(a, b).shape == (1, 4096)


def test_matmul_rejects_mismatch():
    with pytest.raises(ShapeError):
        matmul(Tensor([2, 3], 0), Tensor([4, 2], 0))


# -- backward ----------------------------------------------------------


def test_backward_sum_is_ones():
    x = Tensor([2, 3], [1, 2, 3, 4, 5, 6], requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(x)
    backward(loss, tape)
    assert np.array_equal(x.grad, np.ones((2, 3), dtype=np.float32))


def test_backward_sum_of_squares():
    # analytic derivative of sum(x*x) is 2x
    x = Tensor([3], [1, 2, 3], requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(mul(x, x))
    backward(loss, tape)
    assert np.allclose(x.grad, [2, 4, 6])


def test_backward_unused_parameter_gets_zeros():
    x = Tensor([2], [1.0, 2.0], requires_grad=True)
    unused = Tensor([2], [5.0, 5.0], requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(x)
        _ = add(unused, unused)  # on the tape but not feeding the loss
    backward(loss, tape)
    assert np.array_equal(unused.grad, np.zeros(2, dtype=np.float32))


def test_backward_requires_tape_producing_loss():
    x = Tensor([2], [1.0, 2.0], requires_grad=True)
    tape = GradTape()
    loss = reduce_sum(x)  # outside the tape context
    with pytest.raises(GraphError):
        backward(loss, tape)


def test_backward_replay_is_deterministic():
    rng = np.random.default_rng(11)
    x = Tensor([4], rng.normal(size=4).astype(np.float32), requires_grad=True)
    y = Tensor([4], rng.normal(size=4).astype(np.float32), requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(mul(add(x, y), x))
    first = backward(loss, tape)
    second = backward(loss, tape)
    assert set(first) == set(second)
    for tid in first:
        assert np.array_equal(first[tid], second[tid])


def test_backward_accumulates_shared_input():
    # d/dx sum(x*x + x) = 2x + 1
    x = Tensor([3], [1.0, -2.0, 0.5], requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(add(mul(x, x), x))
    backward(loss, tape)
    assert np.allclose(x.grad, [3.0, -3.0, 2.0])


# -- finite differences -------------------------------------------------


def test_finite_diff_linear():
    x = Tensor([1], [5.0])
    g = finite_diff_grad(lambda t: float(t.data.sum()), x, h=1e-3)
    assert abs(g[0] - 1.0) < 1e-9


def test_finite_diff_quadratic():
    x = Tensor([1], [3.0])
    g = finite_diff_grad(lambda t: float(np.sum(t.data.astype(np.float64) ** 2)), x, h=1e-3)
    assert abs(g[0] - 6.0) < 1e-5


def test_finite_diff_constant():
    x = Tensor([2, 2], [1, 2, 3, 4])
    g = finite_diff_grad(lambda t: 7.0, x, h=1e-3)
    assert np.array_equal(g, np.zeros((2, 2)))


def _rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.mark.parametrize("seed", range(25))
def test_composite_grad_matches_finite_diff(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 33))
    xv = rng.uniform(-1, 1, size=n).astype(np.float32)
    yv = rng.uniform(-1, 1, size=n).astype(np.float32)
    y = Tensor([n], yv)

    def run(xt: Tensor) -> float:
        return reduce_sum(mul(add(xt, y), mul(xt, xt))).item()

    x = Tensor([n], xv, requires_grad=True)
    with GradTape() as tape:
        loss = reduce_sum(mul(add(x, y), mul(x, x)))
    backward(loss, tape)
    num = finite_diff_grad(run, Tensor([n], xv), h=1e-3)
    assert _rel_err(x.grad, num) < 1e-3

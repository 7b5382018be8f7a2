import numpy as np
import pytest

from exquisitenet.errors import NumericError, ShapeError
from exquisitenet.tensor import col2im, conv_out_size, create, im2col, matmul

import oracles


def test_create_zero_fill():
    t = create([2, 2], 0)
    assert t.shape == (2, 2)
    assert np.array_equal(t, np.zeros((2, 2)))


def test_create_constant_element_count():
    t = create([1, 3, 224, 224], 0.5)
    assert t.size == 150528
    assert np.all(t == 0.5)


def test_create_seeded_generator_deterministic():
    a = create([3], np.random.default_rng(7))
    b = create([3], np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_create_bad_dims():
    with pytest.raises(ShapeError):
        create([2, 0], 0)
    with pytest.raises(ShapeError):
        create([-1], 0)


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(np.eye(2), a), a)


def test_matmul_hand_value():
    out = matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]]))
    assert out.shape == (1, 1)
    assert out[0, 0] == 11.0


def test_matmul_shape_law():
    rng = np.random.default_rng(3)
    for _ in range(10):
        m, k, n = rng.integers(1, 9, size=3)
        out = matmul(rng.normal(size=(m, k)), rng.normal(size=(k, n)))
        assert out.shape == (m, n)


def test_matmul_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_matmul_associativity():
    rng = np.random.default_rng(5)
    a, b, c = (rng.normal(size=(4, 4)) for _ in range(3))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    rel = np.abs(left - right) / np.maximum(np.abs(left), 1e-12)
    assert rel.max() < 1e-5


def test_matmul_rejects_nonfinite():
    with pytest.raises(NumericError):
        matmul(np.array([[np.nan, 1.0]]), np.ones((2, 1)))


def test_im2col_1x1_is_reshape():
    x = np.arange(4.0).reshape(1, 1, 2, 2) + 1
    cols = im2col(x, 1, 1, 1, 0)
    assert cols.shape == (1, 4)
    assert np.array_equal(cols[0], [1, 2, 3, 4])


def test_im2col_first_column():
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    cols = im2col(x, 2, 2, 1, 0)
    assert cols.shape == (4, 4)
    assert np.array_equal(cols[:, 0], [1, 2, 4, 5])


def test_im2col_matches_loop_oracle():
    rng = np.random.default_rng(11)
    for n, c, h, w, k, s, p in [(1, 1, 3, 3, 2, 1, 0), (2, 3, 5, 4, 3, 2, 1),
                                (1, 2, 4, 4, 2, 2, 0), (2, 1, 6, 5, 3, 1, 1)]:
        x = rng.normal(size=(n, c, h, w))
        assert np.array_equal(im2col(x, k, k, s, p),
                              oracles.im2col_loops(x, k, k, s, p))


def test_im2col_full_input_geometry():
    x = np.zeros((1, 3, 224, 224), dtype=np.float32)
    cols = im2col(x, 1, 1, 1, 0)
    assert cols.shape == (3, 50176)


def test_im2col_kernel_too_big():
    with pytest.raises(ShapeError):
        im2col(np.zeros((1, 1, 2, 2)), 5, 5, 1, 0)


def test_conv_out_size():
    assert conv_out_size(224, 2, 2, 0) == 112
    assert conv_out_size(7, 3, 1, 1) == 7


def test_col2im_inverts_1x1():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 4, 4))
    cols = im2col(x, 1, 1, 1, 0)
    assert np.array_equal(col2im(cols, 2, 3, 4, 4, 1, 1, 1, 0), x)


def test_col2im_overlap_counts():
    # k=2, s=1 on all-ones 3x3: the interior pixel sits in all 4 windows.
    x = np.ones((1, 1, 3, 3))
    cols = im2col(x, 2, 2, 1, 0)
    back = col2im(cols, 1, 1, 3, 3, 2, 2, 1, 0)
    assert back[0, 0, 1, 1] == 4.0
    assert back[0, 0, 0, 0] == 1.0
    assert back[0, 0, 0, 1] == 2.0


def test_col2im_adjoint_identity():
    """<im2col(x), y> == <x, col2im(y)> for random geometries (dims <= 8)."""
    rng = np.random.default_rng(13)
    for _ in range(20):
        n = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        h = int(rng.integers(2, 9))
        w = int(rng.integers(2, 9))
        k = int(rng.integers(1, min(h, w) + 1))
        s = int(rng.integers(1, 3))
        p = int(rng.integers(0, 2))
        if h + 2 * p < k or w + 2 * p < k:
            continue
        x = rng.normal(size=(n, c, h, w))
        cols = im2col(x, k, k, s, p)
        y = rng.normal(size=cols.shape)
        lhs = float(np.sum(cols * y))
        rhs = float(np.sum(x * col2im(y, n, c, h, w, k, k, s, p)))
        assert abs(lhs - rhs) <= 1e-6 * max(abs(lhs), abs(rhs), 1.0)


def test_col2im_geometry_mismatch():
    cols = im2col(np.ones((1, 1, 4, 4)), 2, 2, 2, 0)
    with pytest.raises(ShapeError):
        col2im(cols, 1, 1, 6, 6, 2, 2, 2, 0)

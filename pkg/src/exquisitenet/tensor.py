"""Dense tensor kernels: creation, matmul, im2col/col2im.

Activations live in NCHW layout, contiguous row-major. Every kernel checks
its result for NaN/Inf and raises instead of propagating silently.
"""

import numpy as np

from .errors import NumericError, ShapeError

DEFAULT_DTYPE = np.float32


def assert_finite(a, where):
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {where}")
    return a


def create(dims, fill, dtype=DEFAULT_DTYPE):
    """Allocate a tensor of `dims` filled with a scalar or drawn from a Generator."""
    dims = tuple(int(d) for d in dims)
    if len(dims) == 0:
        raise ShapeError("dims must be non-empty")
    if any(d < 1 for d in dims):
        raise ShapeError(f"dims must be >= 1, got {dims}")
    if isinstance(fill, np.random.Generator):
        out = fill.random(dims, dtype=np.float64).astype(dtype)
    else:
        out = np.full(dims, fill, dtype=dtype)
    return assert_finite(out, "create")


def matmul(a, b):
    """C[i,j] = sum_p A[i,p] * B[p,j] for rank-2 inputs."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 inputs, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return assert_finite(a @ b, "matmul")


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride=1, pad=0):
    """Lower [N,C,H,W] to a [C*kh*kw, N*Ho*Wo] patch matrix.

    Row index is (c, ki, kj) in row-major order, column index is
    (n, ho, wo). Padding is zero-fill outside the image.
    """
    if x.ndim != 4:
        raise ShapeError(f"im2col expects rank-4 input, got rank {x.ndim}")
    if kh < 1 or kw < 1 or stride < 1 or pad < 0:
        raise ShapeError(f"invalid geometry kh={kh} kw={kw} stride={stride} pad={pad}")
    n, c, h, w = x.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    xp = x if pad == 0 else np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # One vectorized copy per kernel tap; windows = (N, C, kh, kw, Ho, Wo).
    windows = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            windows[:, :, ki, kj] = xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
    cols = windows.transpose(1, 2, 3, 0, 4, 5).reshape(c * kh * kw, n * ho * wo)
    return assert_finite(cols, "im2col")


def col2im(cols, n, c, h, w, kh, kw, stride=1, pad=0):
    """Adjoint of im2col: scatter-add columns back to [N,C,H,W].

    Overlapping windows sum their contributions, so this inverts im2col
    only when windows do not overlap.
    """
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    if cols.ndim != 2 or cols.shape != (c * kh * kw, n * ho * wo):
        raise ShapeError(
            f"cols shape {cols.shape} does not match geometry ({c * kh * kw}, {n * ho * wo})"
        )
    windows = cols.reshape(c, kh, kw, n, ho, wo).transpose(3, 0, 1, 2, 4, 5)
    hp, wp = h + 2 * pad, w + 2 * pad
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    # For a fixed tap the strided destinations are disjoint, so += is a safe
    # vectorized accumulate; overlap across taps sums as required.
    for ki in range(kh):
        for kj in range(kw):
            xp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += windows[:, :, ki, kj]
    x = xp if pad == 0 else xp[:, :, pad:pad + h, pad:pad + w]
    return assert_finite(np.ascontiguousarray(x), "col2im")

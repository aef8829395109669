"""Binary and plane-weighted integer GEMM on packed operands.

Right-hand operands are always passed column-packed, i.e. as a ``BitMatrix``
whose rows are the columns of the logical matrix (``column_encode``). All
results are exact int32 dot products.

The XNOR kernel masks the last word of every row product so that the zero
padding of both operands (which XNORs to ones) never reaches the popcount.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import types
from numba.extending import intrinsic

from .bitpack import BitMatrix, PlaneStack, tail_mask

MAX_INNER = 1 << 24


@intrinsic
def _popcount(typingctx, x):
    def codegen(context, builder, sig, args):
        return builder.ctpop(args[0])

    # ctpop yields an i64; typing it int64 keeps accumulators integral
    return types.int64(types.uint64), codegen


@numba.njit(cache=True, nogil=True)
def _xnor_kernel(a, b, k, last_mask):
    n, w = a.shape
    m = b.shape[0]
    out = np.empty((n, m), dtype=np.int32)
    full = w - 1
    for i in range(n):
        for j in range(m):
            s = 0
            for t in range(full):
                s += _popcount(~(a[i, t] ^ b[j, t]))
            if w > 0:
                s += _popcount(~(a[i, full] ^ b[j, full]) & last_mask)
            out[i, j] = 2 * s - k
    return out


@numba.njit(cache=True, nogil=True)
def _planes_kernel(planes, b):
    # planes: (bits, n, w) code bits; b: (m, w) sign bits, 1 = +1
    nbits, n, w = planes.shape
    m = b.shape[0]
    ones = np.zeros((nbits, n), dtype=np.int64)
    for p in range(nbits):
        for i in range(n):
            c = 0
            for t in range(w):
                c += _popcount(planes[p, i, t])
            ones[p, i] = c
    out = np.empty((n, m), dtype=np.int32)
    for i in range(n):
        for j in range(m):
            acc = 0
            for p in range(nbits):
                s = 0
                for t in range(w):
                    s += _popcount(planes[p, i, t] & b[j, t])
                acc += (2 * s - ones[p, i]) << p
            out[i, j] = acc
    return out


@numba.njit(cache=True, nogil=True)
def _dot01(x, y):
    s = 0
    c = 0
    for t in range(x.shape[0]):
        s += _popcount(x[t] & y[t])
        c += _popcount(x[t])
    return 2 * s - c


@numba.njit(cache=True, nogil=True)
def _dense_kernel(a, b):
    n, k = a.shape
    m = b.shape[1]
    c = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for p in range(k):
            aip = a[i, p]
            for j in range(m):
                c[i, j] += aip * b[p, j]
    return c


def _check_inner(k: int) -> None:
    if k > MAX_INNER:
        raise ValueError(f"inner dimension {k} exceeds the int32-safe cap {MAX_INNER}")


def binary_gemm(a: BitMatrix, b_cols: BitMatrix) -> np.ndarray:
    """``A @ B`` for +-1 matrices: A is ``n x k`` row-packed, B is ``k x m``
    given column-packed (``b_cols.rows == m``, ``b_cols.cols == k``)."""
    if a.cols != b_cols.cols:
        raise ValueError(f"inner dimensions differ: {a.cols} vs {b_cols.cols}")
    _check_inner(a.cols)
    return _xnor_kernel(a.data, b_cols.data, a.cols, tail_mask(a.cols))


def binary_gemm_at_b(a: BitMatrix, b: BitMatrix) -> np.ndarray:
    """``A.T @ B`` for +-1 matrices, both ``k x *`` and row-packed."""
    if a.rows != b.rows:
        raise ValueError(f"leading dimensions differ: {a.rows} vs {b.rows}")
    return binary_gemm(a.transpose(), b.transpose())


def mixed_gemm_planes(planes: PlaneStack, b_cols: BitMatrix) -> np.ndarray:
    """``C @ B`` where C (``n x k``) is given by its bit planes and B is a
    column-packed ``k x m`` +-1 matrix.

    Each plane is multiplied as a {0,1} operand and the partial products are
    merged with shifts, so no plane is ever remapped to +-1.
    """
    if planes.bits < 1:
        raise ValueError("need at least one plane")
    if planes.cols != b_cols.cols:
        raise ValueError(f"inner dimensions differ: {planes.cols} vs {b_cols.cols}")
    _check_inner(planes.cols)
    return _planes_kernel(planes.stacked(), b_cols.data)


def popcount_dot01(x: np.ndarray, y: np.ndarray, k: int) -> int:
    """Dot product of a packed {0,1} row ``x`` with a packed +-1 row ``y``.

    Uses ``sum(x*y) = 2*popcount(x & y) - popcount(x)``; both rows must have
    clean padding for length ``k``.
    """
    x = np.asarray(x, dtype=np.uint64)
    y = np.asarray(y, dtype=np.uint64)
    if x.shape != y.shape or x.shape[0] != (k + 63) // 64:
        raise ValueError("rows must both hold exactly ceil(k/64) words")
    return int(_dot01(x, y))


def dense_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain triple-loop float64 GEMM; the in-repo dense baseline for timing."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise ValueError("inner dimensions differ")
    return _dense_kernel(a, b)

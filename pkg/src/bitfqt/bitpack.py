"""Bit-packed sign and code matrices.

Layout: rows are packed independently into 64-bit words, MSB-first, so the
first logical element of a row lands in bit 63 of word 0. Bits past the
logical column count are always zero. Packing along columns is expressed as
packing the transpose, which is what the GEMM kernels consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORD_BITS = 64
MAX_PLANE_BITS = 8


def words_for(cols: int) -> int:
    return (cols + WORD_BITS - 1) // WORD_BITS


def tail_mask(cols: int) -> np.uint64:
    """Mask selecting the logical bits of the last word of a row."""
    rem = cols % WORD_BITS
    if rem == 0:
        return np.uint64(0xFFFFFFFFFFFFFFFF)
    return np.uint64(((1 << rem) - 1) << (WORD_BITS - rem))


def _pack_bool(bits: np.ndarray) -> np.ndarray:
    rows, cols = bits.shape
    wpr = words_for(cols)
    padded = np.zeros((rows, wpr * WORD_BITS), dtype=np.uint8)
    padded[:, :cols] = bits
    packed = np.packbits(padded, axis=1, bitorder="big")
    # eight big-endian bytes per word keep MSB-first order inside each word
    return packed.view(">u8").astype(np.uint64).reshape(rows, wpr)


def _unpack_bool(data: np.ndarray, cols: int) -> np.ndarray:
    rows = data.shape[0]
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols), dtype=np.uint8)
    raw = np.ascontiguousarray(data.astype(">u8")).view(np.uint8).reshape(rows, -1)
    return np.unpackbits(raw, axis=1, bitorder="big")[:, :cols]


@dataclass(frozen=True)
class BitMatrix:
    """A ``rows x cols`` bit matrix packed row-wise into uint64 words.

    Bit value 1 stands for +1 (or for code bit 1), 0 for -1 (or code bit 0);
    which reading applies is up to the consumer.
    """

    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.dtype != np.uint64 or self.data.shape != (self.rows, words_for(self.cols)):
            raise ValueError(
                f"data must be uint64 of shape {(self.rows, words_for(self.cols))}, "
                f"got {self.data.dtype} {self.data.shape}"
            )
        self.data.flags.writeable = False

    @property
    def words_per_row(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def bits(self) -> np.ndarray:
        """Unpack to a ``uint8`` matrix of {0, 1}."""
        return _unpack_bool(self.data, self.cols)

    def signs(self) -> np.ndarray:
        """Unpack to an ``int8`` matrix of {-1, +1}."""
        return self.bits().astype(np.int8) * 2 - 1

    def transpose(self) -> BitMatrix:
        return row_encode(self.bits().T)

    def padding_popcount(self) -> int:
        """Number of set bits beyond ``cols``; zero for every valid matrix."""
        if self.rows == 0 or self.words_per_row == 0:
            return 0
        pad = self.data[:, -1] & ~tail_mask(self.cols)
        return int(np.bitwise_count(pad).sum())

    def hex(self) -> list[str]:
        """One space-separated hex word dump per row."""
        return [" ".join(f"{int(w):016x}" for w in row) for row in self.data]

    @classmethod
    def from_hex(cls, lines: list[str], cols: int) -> BitMatrix:
        rows = [[int(w, 16) for w in line.split()] for line in lines]
        data = np.array(rows, dtype=np.uint64).reshape(len(rows), words_for(cols))
        return cls(len(rows), cols, data)


@dataclass(frozen=True)
class PlaneStack:
    """Bit planes of a code matrix, least significant plane first."""

    bits: int
    planes: tuple[BitMatrix, ...]

    def __post_init__(self):
        if self.bits != len(self.planes) or self.bits < 1:
            raise ValueError("PlaneStack needs one plane per bit")
        if len({p.shape for p in self.planes}) != 1:
            raise ValueError("all planes must share one shape")

    @property
    def rows(self) -> int:
        return self.planes[0].rows

    @property
    def cols(self) -> int:
        return self.planes[0].cols

    def stacked(self) -> np.ndarray:
        """Plane words as a ``(bits, rows, words)`` array."""
        return np.stack([p.data for p in self.planes])


def sign_encode(x: np.ndarray) -> BitMatrix:
    """Pack ``sign(x)`` with sign(0) = -1: bit is 1 iff x > 0."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("sign_encode expects a 2-D matrix")
    return BitMatrix(x.shape[0], x.shape[1], _pack_bool(x > 0))


def _check01(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c)
    if c.ndim != 2:
        raise ValueError("expected a 2-D {0,1} matrix")
    if c.size and not np.isin(c, (0, 1)).all():
        raise ValueError("entries must be 0 or 1")
    return c


def row_encode(c: np.ndarray) -> BitMatrix:
    """Pack a {0,1} matrix along its rows."""
    c = _check01(c)
    return BitMatrix(c.shape[0], c.shape[1], _pack_bool(c.astype(bool)))


def column_encode(c: np.ndarray) -> BitMatrix:
    """Pack a {0,1} matrix along its columns (the row encoding of ``c.T``)."""
    return row_encode(_check01(c).T)


def bitplane_decompose(codes: np.ndarray, bits: int) -> PlaneStack:
    """Split integer codes in ``[0, 2**bits - 1]`` into ``bits`` binary planes.

    Plane ``i`` (0-based) holds bit ``i`` of every code, so
    ``codes == sum(2**i * plane_i)``.
    """
    if not 1 <= bits <= MAX_PLANE_BITS:
        raise ValueError(f"bits must be in [1, {MAX_PLANE_BITS}], got {bits}")
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError("expected a 2-D code matrix")
    if codes.size and (codes.min() < 0 or codes.max() > (1 << bits) - 1):
        raise ValueError(f"codes out of range for {bits} bits")
    u = codes.astype(np.uint8)
    planes = tuple(
        BitMatrix(u.shape[0], u.shape[1], _pack_bool((u >> i) & 1)) for i in range(bits)
    )
    return PlaneStack(bits, planes)


def bitplane_reconstruct(stack: PlaneStack) -> np.ndarray:
    out = np.zeros((stack.rows, stack.cols), dtype=np.int64)
    for i, plane in enumerate(stack.planes):
        out += plane.bits().astype(np.int64) << i
    return out

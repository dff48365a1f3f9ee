"""Core containers for double binary factorizations and their serialization.

A factorized layer approximates a dense ``n x m`` matrix as
``(a * A * mid^T) @ (B * b^T)`` where ``A`` (n x k) and ``B`` (k x m) hold
only +1/-1 entries and ``a``, ``mid``, ``b`` are real scale vectors.

Sign matrices are bit-packed row-major, LSB-first: bit ``j`` of byte ``i``
within a row holds column ``8*i + j``; bit value 1 means +1 and 0 means -1.
Each row is padded to a whole byte with zero bits.

File formats (little-endian, no alignment gaps):

* ``DBF1``  -- magic ``b"DBF1"``; u32 n, k, m; float32 a[n], mid[k], b[m];
  packed A (n rows of ceil(k/8) bytes); packed B (k rows of ceil(m/8)
  bytes).  Scales are stored as float32; in-memory arrays are float64.
* ``TNS1``  -- magic ``b"TNS1"``; u32 ndim; u32 dims[ndim]; float32 data
  row-major.

All containers are immutable after construction and may be shared freely
across threads.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .validation import as_matrix, as_vector

_U32_MAX = 2**32 - 1


class DbfFormatError(ValueError):
    """Raised when a DBF1 or TNS1 byte stream cannot be decoded."""


@dataclass(frozen=True)
class SignMatrix:
    """Bit-packed matrix whose logical entries are exactly +1 or -1."""

    rows: int
    cols: int
    bits: np.ndarray  # uint8, shape (rows, ceil(cols/8))

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"sign matrix must be at least 1x1, got {self.rows}x{self.cols}")
        expected = (self.rows, row_bytes(self.cols))
        if self.bits.dtype != np.uint8 or self.bits.shape != expected:
            raise ValueError(
                f"packed buffer must be uint8 with shape {expected}, "
                f"got {self.bits.dtype} {self.bits.shape}"
            )
        self.bits.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def nbytes(self) -> int:
        return self.bits.size


def row_bytes(cols: int) -> int:
    """Bytes needed to store one packed row of ``cols`` sign bits."""
    return (cols + 7) // 8


def pack(dense) -> SignMatrix:
    """Pack a dense +1/-1 matrix into a :class:`SignMatrix`.

    Raises ``ValueError`` naming the first offending index if any entry is
    not exactly +1 or -1.
    """
    dense = as_matrix(dense, "dense", allow_nonfinite=True)
    bad = np.abs(dense) != 1.0
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValueError(f"entry at ({r}, {c}) is {dense[r, c]!r}, expected -1 or +1")
    ones = (dense > 0).astype(np.uint8)
    packed = np.packbits(ones, axis=1, bitorder="little")
    return SignMatrix(dense.shape[0], dense.shape[1], packed)


def unpack(s: SignMatrix) -> np.ndarray:
    """Expand a :class:`SignMatrix` back to a dense float64 +1/-1 matrix."""
    ones = np.unpackbits(s.bits, axis=1, count=s.cols, bitorder="little")
    return ones.astype(np.float64) * 2.0 - 1.0


@dataclass(frozen=True)
class DbfLayer:
    """A complete double binary factorization of an ``n x m_dim`` matrix.

    ``reconstruct(layer)`` returns ``(a * A * mid^T) @ (B * b^T)``.
    """

    a: np.ndarray  # (n,)
    A: SignMatrix  # n x k
    mid: np.ndarray  # (k,)
    B: SignMatrix  # k x m_dim
    b: np.ndarray  # (m_dim,)

    def __post_init__(self):
        for name in ("a", "mid", "b"):
            vec = as_vector(getattr(self, name), name).copy()
            vec.setflags(write=False)
            object.__setattr__(self, name, vec)
        if self.a.size != self.A.rows:
            raise ValueError(f"a has length {self.a.size}, expected {self.A.rows}")
        if self.mid.size != self.A.cols:
            raise ValueError(f"mid has length {self.mid.size}, expected {self.A.cols}")
        if self.B.rows != self.A.cols:
            raise ValueError(f"B has {self.B.rows} rows, expected {self.A.cols}")
        if self.b.size != self.B.cols:
            raise ValueError(f"b has length {self.b.size}, expected {self.B.cols}")

    @property
    def n(self) -> int:
        return self.A.rows

    @property
    def k(self) -> int:
        return self.A.cols

    @property
    def m_dim(self) -> int:
        return self.B.cols


def reconstruct(layer: DbfLayer) -> np.ndarray:
    """Dense ``n x m_dim`` matrix represented by the factorization."""
    left = layer.a[:, None] * unpack(layer.A) * layer.mid[None, :]
    right = unpack(layer.B) * layer.b[None, :]
    return left @ right


def _write_f32(out, vec: np.ndarray):
    out.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())


def save_dbf(layer: DbfLayer, sink):
    """Write a layer to ``sink`` (path or binary file object) as DBF1."""
    for name, dim in (("n", layer.n), ("k", layer.k), ("m_dim", layer.m_dim)):
        if dim > _U32_MAX:
            raise DbfFormatError(f"dimension {name}={dim} does not fit in u32")
    if hasattr(sink, "write"):
        out = sink
    else:
        out = open(sink, "wb")
    try:
        out.write(b"DBF1")
        out.write(struct.pack("<III", layer.n, layer.k, layer.m_dim))
        _write_f32(out, layer.a)
        _write_f32(out, layer.mid)
        _write_f32(out, layer.b)
        out.write(layer.A.bits.tobytes())
        out.write(layer.B.bits.tobytes())
    finally:
        if out is not sink:
            out.close()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.data):
            raise DbfFormatError(
                f"truncated payload: need {count} bytes for {what}, "
                f"have {len(self.data) - self.pos}"
            )
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def done(self):
        if self.pos != len(self.data):
            raise DbfFormatError(f"{len(self.data) - self.pos} trailing bytes after payload")


def _read_all(source) -> bytes:
    if hasattr(source, "read"):
        return source.read()
    with open(source, "rb") as fh:
        return fh.read()


def load_dbf(source) -> DbfLayer:
    """Read a DBF1 layer from ``source`` (path or binary file object)."""
    rd = _Reader(_read_all(source))
    magic = rd.take(4, "magic")
    if magic != b"DBF1":
        raise DbfFormatError(f"bad magic {magic!r}, expected b'DBF1'")
    n, k, m = struct.unpack("<III", rd.take(12, "header dims"))
    if min(n, k, m) < 1:
        raise DbfFormatError(f"invalid shape n={n} k={k} m={m}")
    a = np.frombuffer(rd.take(4 * n, "scale a"), dtype="<f4").astype(np.float64)
    mid = np.frombuffer(rd.take(4 * k, "scale mid"), dtype="<f4").astype(np.float64)
    b = np.frombuffer(rd.take(4 * m, "scale b"), dtype="<f4").astype(np.float64)
    a_bytes = rd.take(n * row_bytes(k), "packed A")
    b_bytes = rd.take(k * row_bytes(m), "packed B")
    rd.done()
    A = SignMatrix(n, k, np.frombuffer(a_bytes, dtype=np.uint8).reshape(n, row_bytes(k)).copy())
    B = SignMatrix(k, m, np.frombuffer(b_bytes, dtype=np.uint8).reshape(k, row_bytes(m)).copy())
    return DbfLayer(a=a, A=A, mid=mid, B=B, b=b)


def save_tensor(arr: np.ndarray, sink):
    """Write an array to ``sink`` as TNS1 (float32 payload)."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim < 1 or any(d > _U32_MAX for d in arr.shape):
        raise DbfFormatError(f"cannot serialize shape {arr.shape}")
    if hasattr(sink, "write"):
        out = sink
    else:
        out = open(sink, "wb")
    try:
        out.write(b"TNS1")
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    finally:
        if out is not sink:
            out.close()


def load_tensor(source) -> np.ndarray:
    """Read a TNS1 array, returned as float64."""
    rd = _Reader(_read_all(source))
    magic = rd.take(4, "magic")
    if magic != b"TNS1":
        raise DbfFormatError(f"bad magic {magic!r}, expected b'TNS1'")
    (ndim,) = struct.unpack("<I", rd.take(4, "ndim"))
    if ndim < 1 or ndim > 32:
        raise DbfFormatError(f"unreasonable ndim {ndim}")
    dims = struct.unpack(f"<{ndim}I", rd.take(4 * ndim, "dims"))
    count = int(np.prod(dims, dtype=np.int64))
    data = np.frombuffer(rd.take(4 * count, "tensor data"), dtype="<f4")
    rd.done()
    return data.astype(np.float64).reshape(dims)

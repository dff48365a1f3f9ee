"""Addition-only forward pass over bit-packed sign matrices.

A sign-matrix/vector product needs no multiplications: entries of the
result are the sum of inputs at +1 positions minus the sum at -1
positions.  The inner loop walks the packed buffer one 64-bit word (64
columns) at a time and accumulates in float64.  Everything here reads
layer data without mutating it; batch rows are independent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .bitcore import DbfLayer, SignMatrix
from .validation import as_matrix, as_vector

_WORD_BYTES = 8
_WORD_BITS = 64


def sign_matvec(s: SignMatrix, x) -> np.ndarray:
    """``s @ x`` computed as (sum over +1 positions) - (sum over -1 positions).

    Padding bits never contribute.  Results are bitwise reproducible for a
    given input.
    """
    x = as_vector(x, "x")
    if x.size != s.cols:
        raise ValueError(f"x has length {x.size}, expected {s.cols}")
    pos = np.zeros(s.rows)
    neg = np.zeros(s.rows)
    n_words = (s.bits.shape[1] + _WORD_BYTES - 1) // _WORD_BYTES
    for w in range(n_words):
        lo = w * _WORD_BYTES
        hi = min(lo + _WORD_BYTES, s.bits.shape[1])
        ncols = min(s.cols - w * _WORD_BITS, (hi - lo) * 8)
        block = np.unpackbits(s.bits[:, lo:hi], axis=1, bitorder="little")
        mask = block[:, :ncols].astype(bool)
        xb = x[w * _WORD_BITS : w * _WORD_BITS + ncols]
        pos += np.where(mask, xb, 0.0).sum(axis=1)
        neg += np.where(mask, 0.0, xb).sum(axis=1)
    return pos - neg


def forward(X, layer: DbfLayer) -> np.ndarray:
    """Apply the factorized layer to a batch of inputs: ``X @ W_hat^T``.

    Staged exactly as the factorization reads: scale by ``b``, sign-matvec
    with ``B``, scale by ``mid``, sign-matvec with ``A``, scale by ``a``.
    """
    X = as_matrix(X, "X")
    if X.shape[1] != layer.m_dim:
        raise ValueError(f"X has {X.shape[1]} columns, expected {layer.m_dim}")
    out = np.empty((X.shape[0], layer.n))
    for i in range(X.shape[0]):
        h = sign_matvec(layer.B, X[i] * layer.b)
        h = sign_matvec(layer.A, h * layer.mid)
        out[i] = h * layer.a
    return out


@dataclass(frozen=True)
class BenchRow:
    n: int
    m_dim: int
    bits: float
    k: int
    t_dense_us: float
    t_dbf_us: float
    ratio: float

    def csv(self) -> str:
        return (
            f"{self.n}x{self.m_dim},{self.bits:g},"
            f"{self.t_dense_us:.3f},{self.t_dbf_us:.3f},{self.ratio:.4f}"
        )


BENCH_CSV_HEADER = "shape,bits,t_dense_us,t_dbf_us,ratio"


def _median_us(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e6)
    return float(np.median(times))


def bench_forward(shapes, bits, repeats: int = 3, seed: int = 0) -> list[BenchRow]:
    """Median matvec wall time, dense float vs the packed forward pass.

    Informational only; no pass/fail threshold.  One row per
    (shape, bits) combination.
    """
    from .budget import middle_dim

    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    rng = np.random.default_rng(seed)
    rows = []
    for n, m in shapes:
        dense = rng.standard_normal((n, m))
        x = rng.standard_normal(m)
        t_dense = _median_us(lambda: dense @ x, repeats)
        for b in bits:
            raw = b * n * m / (n + m)
            k = middle_dim(n, m, b, 32) if raw >= 32 else max(1, int(raw))
            layer = _random_layer(rng, n, k, m)
            xm = x.reshape(1, m)
            t_dbf = _median_us(lambda: forward(xm, layer), repeats)
            ratio = t_dbf / t_dense if t_dense > 0 else float("inf")
            rows.append(BenchRow(n, m, float(b), k, t_dense, t_dbf, ratio))
    return rows


def _random_layer(rng, n: int, k: int, m: int) -> DbfLayer:
    from .bitcore import pack

    def signs(r, c):
        return pack(rng.integers(0, 2, size=(r, c)).astype(np.float64) * 2.0 - 1.0)

    return DbfLayer(
        a=np.abs(rng.standard_normal(n)),
        A=signs(n, k),
        mid=np.abs(rng.standard_normal(k)),
        B=signs(k, m),
        b=np.abs(rng.standard_normal(m)),
    )

"""Reference quantizers used as comparison points in evaluation sweeps."""

from __future__ import annotations

import numpy as np

from .svid import svid
from .validation import as_matrix


def rtn_quantize(W, bits: int) -> np.ndarray:
    """Per-row symmetric round-to-nearest quantization.

    Rows are quantized to the grid ``{-q..q} * scale`` with
    ``scale = max|row| / q`` and ``q = 2^(bits-1) - 1``.  At 1 bit the grid
    degenerates to two levels and the scale is ``mean|row|`` (the
    least-squares choice for a pure sign code).
    """
    W = as_matrix(W, "W")
    if not 1 <= bits <= 8:
        raise ValueError(f"bits must be in 1..8, got {bits}")
    mags = np.abs(W)
    if bits == 1:
        scale = mags.mean(axis=1, keepdims=True)
        return np.where(W >= 0, scale, -scale)
    qmax = 2 ** (bits - 1) - 1
    scale = mags.max(axis=1, keepdims=True) / qmax
    safe = np.where(scale > 0, scale, 1.0)
    levels = np.clip(np.round(W / safe), -qmax, qmax)
    return np.where(scale > 0, levels * safe, 0.0)


def onebit_quantize(W, power_iters: int = 30, tol: float = 1e-6) -> np.ndarray:
    """Single-factor sign binarization with rank-1 magnitudes,
    ``W ~ a * Sign(W) * b^T``.  Stores one sign bit per weight."""
    return svid(W, power_iters, tol).reconstruct()


def relative_error(W, approx) -> float:
    """Frobenius error of ``approx`` relative to ``|W|_F``."""
    W = np.asarray(W, dtype=np.float64)
    denom = np.linalg.norm(W)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(W - np.asarray(approx, dtype=np.float64)) / denom)

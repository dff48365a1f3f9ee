"""Sign/rank-1 projection: split a matrix into its sign pattern and the best
rank-1 approximation of its magnitudes.

``svid(Z)`` returns nonnegative vectors ``a``, ``m_vec`` and a sign matrix
such that ``a * signs * m_vec^T`` is the closest matrix to ``Z`` (in
Frobenius norm) among all matrices with that sign pattern and a rank-1
magnitude, up to power-iteration accuracy.  Zero entries are assigned sign
+1; they carry zero magnitude, so the choice does not affect the error.

Both operations are pure and safe to call concurrently on distinct inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bitcore import SignMatrix, pack, unpack
from .validation import as_matrix

DEFAULT_POWER_ITERS = 30
DEFAULT_POWER_TOL = 1e-6


class PowerIterationResult(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    converged: bool
    iterations: int


@dataclass(frozen=True)
class SvidResult:
    """Projection output: ``a * signs * m_vec^T`` approximates the input."""

    a: np.ndarray  # (n,), >= 0
    signs: SignMatrix  # n x m
    m_vec: np.ndarray  # (m,), >= 0
    converged: bool
    iterations: int

    def reconstruct(self) -> np.ndarray:
        return self.a[:, None] * unpack(self.signs) * self.m_vec[None, :]


def power_iteration(
    mat,
    iters: int = DEFAULT_POWER_ITERS,
    tol: float = DEFAULT_POWER_TOL,
) -> PowerIterationResult:
    """Leading rank-1 pair of a nonnegative matrix, ``u v^T ~ mat``.

    The singular value is absorbed into ``u``; ``v`` has unit norm.  Both
    vectors are entrywise nonnegative.  Starts from the column sums
    (deterministic, nonzero unless the matrix is zero) and stops after
    ``iters`` steps or once the Rayleigh estimate changes by less than
    ``tol`` relatively.  An all-zero matrix yields zero vectors.
    """
    mat = as_matrix(mat, "mat")
    if (mat < 0).any():
        raise ValueError("power_iteration requires entrywise nonnegative input")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    n, m = mat.shape
    col = mat.sum(axis=0)
    norm = np.linalg.norm(col)
    if norm == 0.0:
        return PowerIterationResult(np.zeros(n), np.zeros(m), True, 0)
    v = col / norm
    u = np.zeros(n)
    sigma_prev = None
    converged = False
    done = 0
    for done in range(1, iters + 1):
        u = mat @ v
        un = np.linalg.norm(u)
        if un == 0.0:
            return PowerIterationResult(np.zeros(n), np.zeros(m), True, done)
        u /= un
        w = mat.T @ u
        sigma = np.linalg.norm(w)
        v = w / sigma
        if sigma_prev is not None and abs(sigma - sigma_prev) <= tol * sigma:
            converged = True
            break
        sigma_prev = sigma
    return PowerIterationResult(u * sigma, v, converged, done)


def svid(
    Z,
    power_iters: int = DEFAULT_POWER_ITERS,
    tol: float = DEFAULT_POWER_TOL,
) -> SvidResult:
    """Project ``Z`` onto the set ``{a * S * m^T : S in {-1,+1}, a, m >= 0}``."""
    Z = as_matrix(Z, "Z")
    signs = np.where(Z >= 0.0, 1.0, -1.0)
    pi = power_iteration(np.abs(Z), power_iters, tol)
    return SvidResult(
        a=pi.u,
        signs=pack(signs),
        m_vec=pi.v,
        converged=pi.converged,
        iterations=pi.iterations,
    )

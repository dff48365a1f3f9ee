"""Scikit-learn estimator wrapper around the factorization solver.

``fit`` consumes the weight matrix itself; the fitted object then acts as
a compressed linear operator, so ``transform`` runs the addition-only
forward pass on activation batches and composes with sklearn pipelines.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils import check_array

from .bitcore import reconstruct
from .budget import middle_dim, storage_bits
from .factorize import FactorizeConfig, ImportanceProfile, factorize, factorize_weighted
from .kernel import forward


class BinaryFactorizer(BaseEstimator, TransformerMixin):
    """Compress a dense matrix into a double binary factorization.

    Parameters
    ----------
    bits : float, default=2.0
        Target sign bits per weight; sets the middle dimension as
        ``bits * n * m / (n + m)`` rounded down to ``granularity``.
        Ignored when ``k`` is given.
    k : int or None
        Explicit middle dimension.
    granularity : int, default=32
        Middle-dimension rounding step used with ``bits``.
    outer_iters, inner_iters, rho, power_iters, power_tol, seed, track_best
        Solver hyperparameters; see :class:`dbf.factorize.FactorizeConfig`.

    Attributes
    ----------
    layer_ : DbfLayer
        The fitted factorization.
    report_ : FactorizeReport
        Error trace of the solve.
    k_ : int
        Middle dimension used.
    bits_per_weight_ : float
        Stored bits per weight including float16-width scale vectors.
    """

    def __init__(
        self,
        bits: float = 2.0,
        k: int | None = None,
        granularity: int = 32,
        outer_iters: int = 40,
        inner_iters: int = 3,
        rho: float = 1.0,
        power_iters: int = 30,
        power_tol: float = 1e-6,
        seed: int = 0,
        track_best: bool = True,
    ):
        self.bits = bits
        self.k = k
        self.granularity = granularity
        self.outer_iters = outer_iters
        self.inner_iters = inner_iters
        self.rho = rho
        self.power_iters = power_iters
        self.power_tol = power_tol
        self.seed = seed
        self.track_best = track_best

    def _config(self) -> FactorizeConfig:
        return FactorizeConfig(
            outer_iters=self.outer_iters,
            inner_iters=self.inner_iters,
            rho=self.rho,
            power_iters=self.power_iters,
            power_tol=self.power_tol,
            seed=self.seed,
            track_best=self.track_best,
        )

    def fit(self, X, y=None, out_importance=None, in_importance=None):
        """Factorize the weight matrix ``X``.

        Passing ``out_importance`` (per row) and ``in_importance`` (per
        column) switches to the importance-weighted objective.
        """
        W = check_array(X, dtype=np.float64)
        n, m = W.shape
        self.k_ = self.k if self.k is not None else middle_dim(n, m, self.bits, self.granularity)
        if out_importance is not None or in_importance is not None:
            imp = ImportanceProfile(
                out_imp=np.ones(n) if out_importance is None else out_importance,
                in_imp=np.ones(m) if in_importance is None else in_importance,
            )
            self.layer_, self.report_ = factorize_weighted(W, self.k_, imp, self._config())
        else:
            self.layer_, self.report_ = factorize(W, self.k_, self._config())
        self.bits_per_weight_ = storage_bits(n, self.k_, m).bits_per_weight
        return self

    def transform(self, X):
        """Run activation batches through the compressed layer."""
        self._check_fitted()
        return forward(check_array(X, dtype=np.float64), self.layer_)

    def reconstruct(self) -> np.ndarray:
        """Dense approximation of the fitted matrix."""
        self._check_fitted()
        return reconstruct(self.layer_)

    def _check_fitted(self):
        if not hasattr(self, "layer_"):
            raise NotFittedError("BinaryFactorizer is not fitted; call fit first")

import numpy as np
import pytest

from dbf.bitcore import DbfLayer, pack


def random_signs(rng, rows, cols):
    return rng.integers(0, 2, size=(rows, cols)).astype(np.float64) * 2.0 - 1.0


def f32_vector(rng, size, positive=False):
    """Random scale vector exactly representable in the file format."""
    vals = rng.standard_normal(size).astype(np.float32).astype(np.float64)
    return np.abs(vals) + 0.1 if positive else vals


def random_layer(rng, n, k, m, positive=False) -> DbfLayer:
    return DbfLayer(
        a=f32_vector(rng, n, positive),
        A=pack(random_signs(rng, n, k)),
        mid=f32_vector(rng, k, positive),
        B=pack(random_signs(rng, k, m)),
        b=f32_vector(rng, m, positive),
    )


def feasible_matrix(rng, n, k, m):
    """A matrix lying exactly in the factorization's feasible set."""
    A = random_signs(rng, n, k)
    B = random_signs(rng, k, m)
    a = np.abs(rng.standard_normal(n)) + 0.1
    mid = np.abs(rng.standard_normal(k)) + 0.1
    b = np.abs(rng.standard_normal(m)) + 0.1
    return (a[:, None] * A * mid[None, :]) @ (B * b[None, :])


@pytest.fixture
def rng():
    return np.random.default_rng(0)

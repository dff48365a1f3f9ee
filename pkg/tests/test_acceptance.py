"""End-to-end acceptance checks.

Each test prints one PASS/FAIL line (visible with ``pytest -s`` or in the
captured output).  Tolerances are fixed here, not tuned at runtime.
"""

import io
import itertools
from contextlib import contextmanager

import numpy as np
import pytest

import dbf
from dbf.factorize import FactorizeConfig

from conftest import feasible_matrix, random_layer, random_signs
from test_factorize import gauss_solve


@contextmanager
def criterion(num, text):
    try:
        yield
    except Exception:
        print(f"[acceptance {num:02d}] FAIL  {text}")
        raise
    print(f"[acceptance {num:02d}] PASS  {text}")


def test_01_storage_accounting():
    with criterion(1, "scale-vector overhead at 4096^2 / 2 bits is 0.012 bpw (2 s.f.)"):
        total, bpw, overhead = dbf.storage_bits(4096, 4096, 4096, 16)
        assert overhead == pytest.approx(0.01171875, abs=1e-12)
        assert f"{overhead:.2g}" == "0.012"
        assert bpw == pytest.approx(2.01171875, abs=1e-12)


def test_02_middle_dimension_formula():
    with criterion(2, "square-matrix middle dimensions: 2 bits -> k=n, 1 bit -> k=n/2"):
        assert dbf.middle_dim(4096, 4096, 2.0, 32) == 4096
        assert dbf.middle_dim(4096, 4096, 1.0, 32) == 2048


def test_03_svid_dominance():
    with criterion(3, "sign/rank-1 split beats mean-magnitude binarization, 100/100"):
        rng = np.random.default_rng(3)
        violations = 0
        for _ in range(100):
            Z = rng.standard_normal((32, 32))
            err = np.linalg.norm(Z - dbf.svid(Z).reconstruct())
            alpha = np.abs(Z).mean()
            base = np.linalg.norm(Z - alpha * np.where(Z >= 0, 1.0, -1.0))
            violations += err > base
        assert violations == 0


def test_04_admm_x_update_correctness():
    with criterion(4, "x-update residual < 1e-8 and matches elimination oracle to 1e-10"):
        rng = np.random.default_rng(4)
        for _ in range(100):
            k = int(rng.integers(2, 10))
            n = int(rng.integers(2, 14))
            m = int(rng.integers(2, 14))
            B = rng.standard_normal((k, m))
            W = rng.standard_normal((n, m))
            Aprev = rng.standard_normal((n, k))
            U = rng.standard_normal((n, k))
            rho = float(rng.uniform(0.2, 5.0))
            out = dbf.admm_x_update(B, W, Aprev, U, rho)
            G = B @ B.T + rho * np.eye(k)
            rhs = W @ B.T + rho * (Aprev - U)
            for r in range(n):
                resid = np.linalg.norm(G @ out[r] - rhs[r])
                assert resid <= 1e-8 * np.linalg.norm(rhs[r])
                assert np.allclose(out[r], gauss_solve(G, rhs[r]), atol=1e-10)


def test_05_forward_reconstruction_equivalence():
    with criterion(5, "packed forward equals dense reconstruction, 100 layers, 1e-4"):
        rng = np.random.default_rng(5)
        for case in range(100):
            n = int(rng.integers(3, 40))
            m = int(rng.integers(3, 40))
            regime = case % 3
            if regime == 0:
                k = int(rng.integers(1, max(2, min(n, m))))
            elif regime == 1:
                k = n
            else:
                k = max(n, m) + int(rng.integers(1, 9))
            layer = random_layer(rng, n, k, m)
            X = rng.standard_normal((4, m))
            out = dbf.forward(X, layer)
            ref = X @ dbf.reconstruct(layer).T
            assert np.linalg.norm(out - ref) <= 1e-4 * max(np.linalg.norm(ref), 1e-9)


def test_06_bits_vs_error_crossover():
    with criterion(6, "256x256 Gaussian: beats 2-bit scalar RTN, loses at 4 bits"):
        dbf2, dbf4, rtn2, rtn4 = [], [], [], []
        for s in range(5):
            W = np.random.default_rng(1000 + s).standard_normal((256, 256))
            _, rep = dbf.factorize(W, 256)  # 2.0 sign bits per weight
            dbf2.append(rep.final_error)
            _, rep = dbf.factorize(W, 512)  # 4.0 sign bits per weight
            dbf4.append(rep.final_error)
            rtn2.append(dbf.relative_error(W, dbf.rtn_quantize(W, 2)))
            rtn4.append(dbf.relative_error(W, dbf.rtn_quantize(W, 4)))
        assert np.mean(dbf2) < np.mean(rtn2)
        assert np.mean(rtn4) < np.mean(dbf4)


def test_07_importance_adherence():
    with criterion(7, "100x-importance column has the minimum squared error"):
        col = 5
        per_col = np.zeros(32)
        for s in range(5):
            rng = np.random.default_rng(900 + s)
            W = rng.standard_normal((32, 32))
            in_imp = np.ones(32)
            in_imp[col] = 100.0
            imp = dbf.ImportanceProfile(out_imp=np.ones(32), in_imp=in_imp)
            layer, _ = dbf.factorize_weighted(W, 32, imp, FactorizeConfig(seed=s))
            per_col += ((W - dbf.reconstruct(layer)) ** 2).mean(axis=0)
        assert per_col.argmin() == col


def test_08_channel_score_gradients():
    with criterion(8, "analytic mid-scale gradients match finite differences, 20 cases"):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(4, 10))
            k = int(rng.integers(2, 8))
            m = int(rng.integers(4, 10))
            layer = random_layer(rng, n, k, m, positive=True)
            X = [rng.standard_normal((6, m)) for _ in range(2)]
            Y = [rng.standard_normal((6, n)) for _ in range(2)]
            got = dbf.channel_scores(layer, X, Y).scores
            h = 1e-4
            for i in range(k):
                acc = 0.0
                for Xb, Yb in zip(X, Y):
                    up = layer.mid.copy()
                    up[i] += h
                    down = layer.mid.copy()
                    down[i] -= h
                    lu = np.sum((dbf.forward(Xb, dbf.DbfLayer(
                        a=layer.a, A=layer.A, mid=up, B=layer.B, b=layer.b)) - Yb) ** 2)
                    ld = np.sum((dbf.forward(Xb, dbf.DbfLayer(
                        a=layer.a, A=layer.A, mid=down, B=layer.B, b=layer.b)) - Yb) ** 2)
                    acc += (((lu - ld) / (2 * h)) * layer.mid[i]) ** 2
                assert got[i] == pytest.approx(acc, rel=1e-4, abs=1e-10)


def _brute_force_allocate(layers, scores, target_bpw, floor_bpw, g):
    total_w = sum(l.n * l.m_dim for l in layers)
    budget = target_bpw * total_w
    by = {s.name: np.sort(s.scores)[::-1] for s in scores}
    best = None
    ranges = []
    for l in layers:
        if floor_bpw <= 0:
            kmin = 0
        else:
            kmin = int(np.ceil(floor_bpw * l.n * l.m_dim / (l.n + l.m_dim) / g)) * g
        ranges.append([k for k in range(0, by[l.name].size + 1, g) if k >= kmin])
    for combo in itertools.product(*ranges):
        bits = sum(k * (l.n + l.m_dim) for k, l in zip(combo, layers))
        if bits > budget * (1 + 1e-12):
            continue
        mass = sum(by[l.name][:k].sum() for k, l in zip(combo, layers))
        if best is None or mass > best[0] + 1e-12:
            best = (mass, combo)
    return best


def test_09_nonuniform_pipeline():
    with criterion(9, "2.1 -> 2.0 bpw reallocation honors budget and 1.5 floor"):
        rng = np.random.default_rng(60)
        n = m = 128
        g = 4

        def norm_to(W, target):
            return W * (target / np.linalg.norm(W))

        ref_norm = float(np.linalg.norm(rng.standard_normal((n, m))))
        weights = {
            "easy1": norm_to(feasible_matrix(rng, n, 16, m), ref_norm),
            "gauss1": rng.standard_normal((n, m)),
            "easy2": norm_to(feasible_matrix(rng, n, 16, m), ref_norm),
            "gauss2": rng.standard_normal((n, m)),
        }
        calib = {name: [rng.standard_normal((32, m)) for _ in range(2)] for name in weights}
        res = dbf.reallocate_pipeline(weights, calib, start_bpw=2.1, target_bpw=2.0,
                                      floor_bpw=1.5, granularity=g)
        step = g * (n + m) / (n * m)
        assert abs(res.budget.total_bits_per_weight - 2.0) <= step
        assert res.budget.total_bits_per_weight <= 2.0 + 1e-12
        for entry in res.budget.entries:
            assert entry.bits_per_weight >= 1.5 - 1e-12

        # reallocation does at least as well as uniform 2.0 on this set
        total_nu = total_uni = 0.0
        for name, W in weights.items():
            _, rep = dbf.factorize(W, dbf.middle_dim(n, m, 2.0, g))
            w2 = np.linalg.norm(W) ** 2
            total_uni += rep.final_error ** 2 * w2
            total_nu += res.errors[name] ** 2 * w2
        assert total_nu <= total_uni

        # tiny 3-layer instance matches the exhaustive oracle
        orng = np.random.default_rng(9)
        layers = [dbf.LayerSpec(f"l{i}", 10, 10) for i in range(3)]
        scores = [dbf.ChannelScores(f"l{i}", orng.random(6)) for i in range(3)]
        for g2, target in ((1, 0.8), (2, 0.6)):
            budget = dbf.allocate(layers, scores, target, 0.0, g2)
            got = sum(np.sort(s.scores)[::-1][: budget.k_for(s.name)].sum() for s in scores)
            oracle = _brute_force_allocate(layers, scores, target, 0.0, g2)
            assert got == pytest.approx(oracle[0], abs=1e-9)


def test_10_determinism_and_formats(tmp_path):
    with criterion(10, "seeded runs byte-identical; 1000 pack/save roundtrips exact"):
        rng = np.random.default_rng(10)
        W = rng.standard_normal((32, 32))
        dbf.save_tensor(W, tmp_path / "w.tns")
        from dbf.cli import main

        blobs = []
        for name in ("a.dbf", "b.dbf"):
            rc = main([
                "factorize", "--input", str(tmp_path / "w.tns"), "--k", "16",
                "--out", str(tmp_path / name), "--report", str(tmp_path / "r.json"),
                "--outer-iters", "8", "--seed", "3",
            ])
            assert rc == 0
            blobs.append((tmp_path / name).read_bytes())
        assert blobs[0] == blobs[1]

        for case in range(500):
            rows = int(rng.integers(1, 25))
            cols = int(rng.integers(1, 70))
            M = random_signs(rng, rows, cols)
            assert np.array_equal(dbf.unpack(dbf.pack(M)), M)
        for case in range(500):
            n = int(rng.integers(1, 12))
            k = int(rng.integers(1, 12))
            m = int(rng.integers(1, 12))
            layer = random_layer(rng, n, k, m)
            buf = io.BytesIO()
            dbf.save_dbf(layer, buf)
            loaded = dbf.load_dbf(io.BytesIO(buf.getvalue()))
            assert np.array_equal(loaded.a, layer.a)
            assert np.array_equal(loaded.mid, layer.mid)
            assert np.array_equal(loaded.b, layer.b)
            assert np.array_equal(loaded.A.bits, layer.A.bits)
            assert np.array_equal(loaded.B.bits, layer.B.bits)


def test_11_solver_sanity():
    with criterion(11, "exactly representable matrix recovered below 1e-6; zeros exact"):
        config = FactorizeConfig(outer_iters=200)
        for seed in (500, 501, 502):
            W = feasible_matrix(np.random.default_rng(seed), 32, 8, 32)
            _, rep = dbf.factorize(W, 8, config)
            assert rep.final_error < 1e-6
        _, rep = dbf.factorize(np.zeros((16, 16)), 8)
        assert rep.final_error == 0.0

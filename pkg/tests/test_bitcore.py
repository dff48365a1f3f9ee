import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbf.bitcore import (
    DbfFormatError,
    DbfLayer,
    SignMatrix,
    load_dbf,
    load_tensor,
    pack,
    reconstruct,
    save_dbf,
    save_tensor,
    unpack,
)

from conftest import random_layer, random_signs


class TestPack:
    def test_single_row_bit_layout(self):
        row = np.array([[1, -1, -1, 1, 1, 1, -1, 1]], dtype=float)
        s = pack(row)
        assert s.bits.shape == (1, 1)
        assert s.bits[0, 0] == 0b10111001

    def test_all_plus_ones_padding(self):
        s = pack(np.ones((2, 2)))
        assert s.bits.shape == (2, 1)
        assert list(s.bits[:, 0]) == [0b11, 0b11]

    def test_roundtrip_13x37(self, rng):
        M = random_signs(rng, 13, 37)
        assert np.array_equal(unpack(pack(M)), M)

    def test_rejects_non_sign_entry(self):
        M = np.ones((3, 4))
        M[1, 2] = 0.5
        with pytest.raises(ValueError, match=r"\(1, 2\)"):
            pack(M)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            pack(np.zeros((2, 2)))

    def test_storage_size(self, rng):
        s = pack(random_signs(rng, 5, 17))
        assert s.nbytes() == 5 * ((17 + 7) // 8)

    @settings(max_examples=60, deadline=None)
    @given(rows=st.integers(1, 24), cols=st.integers(1, 70), seed=st.integers(0, 2**31))
    def test_roundtrip_property(self, rows, cols, seed):
        M = random_signs(np.random.default_rng(seed), rows, cols)
        s = pack(M)
        assert s.bits.shape == (rows, (cols + 7) // 8)
        assert np.array_equal(unpack(s), M)


class TestLayer:
    def test_scalar_layer_reconstruct(self):
        layer = DbfLayer(
            a=np.array([2.0]), A=pack(np.array([[1.0]])),
            mid=np.array([3.0]), B=pack(np.array([[-1.0]])), b=np.array([5.0]),
        )
        assert reconstruct(layer) == pytest.approx(np.array([[-30.0]]))

    def test_all_ones_layer(self):
        layer = DbfLayer(
            a=np.ones(2), A=pack(np.ones((2, 2))),
            mid=np.ones(2), B=pack(np.ones((2, 2))), b=np.ones(2),
        )
        assert np.allclose(reconstruct(layer), 2.0)

    def test_reconstruct_matches_naive_triple_loop(self, rng):
        layer = random_layer(rng, 5, 4, 6)
        Ad, Bd = unpack(layer.A), unpack(layer.B)
        expected = np.zeros((5, 6))
        for i in range(5):
            for j in range(6):
                for t in range(4):
                    expected[i, j] += (
                        layer.a[i] * Ad[i, t] * layer.mid[t] * Bd[t, j] * layer.b[j]
                    )
        assert np.allclose(reconstruct(layer), expected, rtol=1e-12, atol=1e-12)

    def test_reconstruct_bilinear_in_a(self, rng):
        layer = random_layer(rng, 4, 3, 5)
        scaled = DbfLayer(a=3.5 * layer.a, A=layer.A, mid=layer.mid, B=layer.B, b=layer.b)
        assert np.allclose(reconstruct(scaled), 3.5 * reconstruct(layer))

    def test_reconstruct_bilinear_in_b(self, rng):
        layer = random_layer(rng, 4, 3, 5)
        scaled = DbfLayer(a=layer.a, A=layer.A, mid=layer.mid, B=layer.B, b=-2.0 * layer.b)
        assert np.allclose(reconstruct(scaled), -2.0 * reconstruct(layer))

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="mid"):
            DbfLayer(
                a=np.ones(3), A=pack(random_signs(rng, 3, 4)),
                mid=np.ones(5), B=pack(random_signs(rng, 4, 2)), b=np.ones(2),
            )
        with pytest.raises(ValueError, match="B has"):
            DbfLayer(
                a=np.ones(3), A=pack(random_signs(rng, 3, 4)),
                mid=np.ones(4), B=pack(random_signs(rng, 5, 2)), b=np.ones(2),
            )

    def test_non_finite_scales_rejected(self, rng):
        a = np.ones(3)
        a[1] = np.nan
        with pytest.raises(ValueError):
            DbfLayer(
                a=a, A=pack(random_signs(rng, 3, 2)),
                mid=np.ones(2), B=pack(random_signs(rng, 2, 2)), b=np.ones(2),
            )


class TestDbfFile:
    def test_roundtrip_field_for_field(self, rng):
        layer = random_layer(rng, 7, 5, 11)
        buf = io.BytesIO()
        save_dbf(layer, buf)
        loaded = load_dbf(io.BytesIO(buf.getvalue()))
        assert np.array_equal(loaded.a, layer.a)
        assert np.array_equal(loaded.mid, layer.mid)
        assert np.array_equal(loaded.b, layer.b)
        assert np.array_equal(loaded.A.bits, layer.A.bits)
        assert np.array_equal(loaded.B.bits, layer.B.bits)

    def test_roundtrip_via_path(self, rng, tmp_path):
        layer = random_layer(rng, 3, 9, 2)
        path = tmp_path / "layer.dbf"
        save_dbf(layer, path)
        loaded = load_dbf(path)
        assert np.array_equal(loaded.b, layer.b)
        assert np.array_equal(loaded.A.bits, layer.A.bits)

    def test_empty_file_bad_magic(self):
        with pytest.raises(DbfFormatError, match="truncated"):
            load_dbf(io.BytesIO(b""))

    def test_wrong_magic(self):
        with pytest.raises(DbfFormatError, match="magic"):
            load_dbf(io.BytesIO(b"NOPE" + b"\x00" * 64))

    def test_truncated_payload(self, rng):
        layer = random_layer(rng, 4, 4, 4)
        buf = io.BytesIO()
        save_dbf(layer, buf)
        data = buf.getvalue()
        with pytest.raises(DbfFormatError, match="truncated"):
            load_dbf(io.BytesIO(data[:-3]))

    def test_shape_not_matching_payload(self, rng):
        # declare k larger than the stored factor matrices support
        layer = random_layer(rng, 4, 4, 4)
        buf = io.BytesIO()
        save_dbf(layer, buf)
        data = bytearray(buf.getvalue())
        data[8:12] = (100).to_bytes(4, "little")  # k field
        with pytest.raises(DbfFormatError, match="truncated"):
            load_dbf(io.BytesIO(bytes(data)))

    def test_trailing_bytes_rejected(self, rng):
        layer = random_layer(rng, 4, 4, 4)
        buf = io.BytesIO()
        save_dbf(layer, buf)
        with pytest.raises(DbfFormatError, match="trailing"):
            load_dbf(io.BytesIO(buf.getvalue() + b"\x00"))


class TestTensorFile:
    def test_roundtrip_2d(self, rng):
        arr = rng.standard_normal((6, 9)).astype(np.float32).astype(np.float64)
        buf = io.BytesIO()
        save_tensor(arr, buf)
        assert np.array_equal(load_tensor(io.BytesIO(buf.getvalue())), arr)

    def test_roundtrip_1d_path(self, rng, tmp_path):
        arr = rng.standard_normal(13).astype(np.float32).astype(np.float64)
        path = tmp_path / "v.tns"
        save_tensor(arr, path)
        assert np.array_equal(load_tensor(path), arr)

    def test_bad_magic(self):
        with pytest.raises(DbfFormatError, match="magic"):
            load_tensor(io.BytesIO(b"XXXX\x01\x00\x00\x00"))


def test_sign_matrix_validates_buffer_shape():
    with pytest.raises(ValueError, match="packed buffer"):
        SignMatrix(2, 10, np.zeros((2, 1), dtype=np.uint8))
    with pytest.raises(ValueError, match="at least 1x1"):
        SignMatrix(0, 4, np.zeros((0, 1), dtype=np.uint8))

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gwpk import io


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6),
                  elements=st.floats(allow_nan=False, width=64)))
def test_real_round_trip(arr):
    out = io.decode_array(io.encode_array(arr))
    assert out.dtype == np.float64
    np.testing.assert_array_equal(out, arr)


@given(hnp.arrays(np.complex128, hnp.array_shapes(min_dims=1, max_dims=2, max_side=8),
                  elements=st.complex_numbers(allow_nan=False, allow_infinity=False, max_magnitude=1e300)))
def test_complex_round_trip(arr):
    np.testing.assert_array_equal(io.decode_array(io.encode_array(arr)), arr)


def test_header_layout():
    buf = io.encode_array(np.zeros((2, 3)))
    assert buf[:5] == b"GWPK1"
    assert len(buf) == 5 + 6 + 2 * 8 + 6 * 8


def test_bool_masks_stored_as_float():
    m = np.array([[True, False], [False, True]])
    out = io.decode_array(io.encode_array(m))
    assert out.dtype == np.float64 and np.array_equal(out.astype(bool), m)


@pytest.mark.parametrize("buf", [b"", b"NOPE1" + b"\0" * 20, io.encode_array(np.ones(4))[:-3]])
def test_malformed_rejected(buf):
    with pytest.raises(io.ContainerError):
        io.decode_array(buf)


def test_file_and_sidecar(tmp_path):
    arr = np.arange(6.0).reshape(2, 3) * (1 + 1j)
    p = io.write_array(tmp_path / "a.gwpk", arr, {"k": 1.5, "c": 1 + 2j, "bad": float("nan")})
    np.testing.assert_array_equal(io.read_array(p), arr)
    meta = io.read_meta(p)
    assert meta["k"] == 1.5 and meta["c"] == {"re": 1.0, "im": 2.0} and meta["bad"] == "nan"
    assert io.read_meta(tmp_path / "missing.gwpk") is None


def test_dumps_deterministic():
    a = {"b": np.float64(1.0), "a": [np.int64(2), np.array([1.0, 2.0])]}
    b = {"a": [2, [1.0, 2.0]], "b": 1.0}
    assert io.dumps(a) == io.dumps(b)
    assert json.loads(io.dumps(a)) == b


def test_triplets_round_trip(rng):
    rows = rng.integers(0, 50, 20)
    cols = rng.integers(0, 50, 20)
    vals = rng.normal(size=20) + 1j * rng.normal(size=20)
    r, c, v = io.decode_triplets(io.encode_triplets(rows, cols, vals))
    assert np.array_equal(r, rows) and np.array_equal(c, cols) and np.array_equal(v, vals)

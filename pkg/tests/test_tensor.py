import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from fusehar import tensor
from fusehar.tensor import (BadMagicError, ShapeError, TensorFormatError, TruncatedError,
                            VersionMismatchError)


def header(version=1, dims=(2, 3), magic=b"HART"):
    return magic + struct.pack("<II", version, len(dims)) + struct.pack(f"<{len(dims)}I", *dims)


def test_header_layout_is_little_endian():
    data = tensor.to_bytes(np.array([[1.0, -2.0]], dtype=np.float32))
    assert data[:4] == b"HART"
    assert struct.unpack("<III", data[4:16]) == (1, 2, 1)
    assert struct.unpack("<I", data[16:20]) == (2,)
    assert struct.unpack("<2f", data[20:]) == (1.0, -2.0)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5),
                  elements=st.floats(width=32, allow_nan=True, allow_infinity=True)))
def test_round_trip_property(arr):
    back = tensor.from_bytes(tensor.to_bytes(arr))
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_save_load_file(tmp_path):
    arr = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    tensor.save(arr, tmp_path / "a.hart")
    np.testing.assert_array_equal(tensor.load(tmp_path / "a.hart"), arr)


@pytest.mark.parametrize("data, err", [
    (b"HARX" + header()[4:], BadMagicError),
    (b"", BadMagicError),
    (header(version=2), VersionMismatchError),
    (header()[:10], TruncatedError),
    (header() + b"\0" * 20, TruncatedError),
])
def test_malformed_records(data, err):
    with pytest.raises(err):
        tensor.from_bytes(data)


def test_error_classes_are_distinct():
    classes = {BadMagicError, VersionMismatchError, TruncatedError}
    assert len(classes) == 3
    assert all(issubclass(c, TensorFormatError) for c in classes)
    assert not issubclass(BadMagicError, TruncatedError)


def test_invalid_rank_and_zero_dim_in_header():
    with pytest.raises(TensorFormatError):
        tensor.from_bytes(header(dims=(1, 1, 1, 1, 1)) + b"\0" * 4)
    with pytest.raises(TensorFormatError):
        tensor.from_bytes(header(dims=(0, 3)))


def test_create_and_reshape():
    t = tensor.create([2, 3], fill=1.5)
    assert t.dtype == np.float32 and t.shape == (2, 3) and np.all(t == 1.5)
    r = tensor.reshape(np.arange(6, dtype=np.float32), [3, 2])
    np.testing.assert_array_equal(r.ravel(), np.arange(6))
    with pytest.raises(ShapeError):
        tensor.reshape(r, [4, 2])
    for bad in ([], [0, 2], [1, 1, 1, 1, 1]):
        with pytest.raises(ShapeError):
            tensor.create(bad)


def test_stream_holds_consecutive_records():
    buf = io.BytesIO()
    tensor.write_tensor(np.ones(3, np.float32), buf)
    tensor.write_tensor(np.zeros((1, 2), np.float32), buf)
    buf.seek(0)
    assert tensor.read_tensor(buf).shape == (3,)
    assert tensor.read_tensor(buf).shape == (1, 2)

"""Round-trip and error contract of the .ten binary tensor format."""

import numpy as np
import pytest

from mmbseg.engine import load_ten, save_ten, ten_bytes, ten_from_bytes
from mmbseg.errors import TenFormatError


@pytest.mark.parametrize(
    "arr",
    [
        np.arange(12, dtype=np.float32).reshape(3, 4),
        np.arange(24, dtype=np.uint8).reshape(2, 3, 4),
        np.arange(16, dtype=np.uint16).reshape(1, 2, 2, 4),
        np.array([1.5, -2.25, 3e-7], dtype=np.float32),
    ],
)
def test_round_trip_bit_exact(tmp_path, arr):
    p = tmp_path / "t.ten"
    save_ten(p, arr)
    back = load_ten(p)
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_header_layout():
    arr = np.zeros((2, 3), dtype=np.float32)
    blob = ten_bytes(arr)
    assert blob[:4] == b"TEN1"
    assert blob[4] == 0  # float32 code
    assert blob[5] == 2  # rank
    assert blob[6:10] == (2).to_bytes(4, "little")
    assert blob[10:14] == (3).to_bytes(4, "little")
    assert len(blob) == 14 + 6 * 4


def test_serialization_is_deterministic():
    arr = np.linspace(0, 1, 30, dtype=np.float32).reshape(5, 6)
    assert ten_bytes(arr) == ten_bytes(arr.copy())


@pytest.mark.parametrize(
    "mangle",
    [
        lambda b: b"XXXX" + b[4:],            # bad magic
        lambda b: b[:4] + bytes([9]) + b[5:],  # unknown dtype
        lambda b: b[:5] + bytes([7]) + b[6:],  # bad rank
        lambda b: b[:-3],                      # truncated payload
        lambda b: b + b"\x00",                 # trailing bytes
    ],
)
def test_malformed_blobs_raise(mangle):
    blob = ten_bytes(np.ones((2, 2), dtype=np.float32))
    with pytest.raises(TenFormatError):
        ten_from_bytes(mangle(blob))


def test_float64_not_storable():
    with pytest.raises(TenFormatError):
        ten_bytes(np.zeros(3, dtype=np.float64))


def test_rank5_not_storable():
    with pytest.raises(TenFormatError):
        ten_bytes(np.zeros((1, 1, 1, 1, 1), dtype=np.float32))

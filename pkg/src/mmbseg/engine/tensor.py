"""Dense tensors and the ".ten" binary interchange format.

Tensors are plain numpy arrays in NCHW layout (rank <= 4, row-major,
one of float32 / uint8 / uint16). The .ten format is bit-exact:

    magic   b"TEN1"
    dtype   1 byte   (0=float32, 1=uint8, 2=uint16)
    rank    1 byte   (1..4)
    extents rank x 4-byte little-endian unsigned
    payload row-major little-endian values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import TenFormatError

MAGIC = b"TEN1"
MAX_RANK = 4

_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("uint8"): 1,
    np.dtype("uint16"): 2,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def ten_bytes(arr: np.ndarray) -> bytes:
    """Serialize an array to .ten bytes."""
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise TenFormatError(f"dtype {arr.dtype} not storable (float32/uint8/uint16 only)")
    if not 1 <= arr.ndim <= MAX_RANK:
        raise TenFormatError(f"rank {arr.ndim} not storable (1..{MAX_RANK})")
    if min(arr.shape) < 1:
        raise TenFormatError(f"zero extent in shape {arr.shape}")
    head = MAGIC + bytes([_DTYPE_CODES[arr.dtype], arr.ndim])
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def ten_from_bytes(blob: bytes) -> np.ndarray:
    """Parse .ten bytes back into an array (native byte order)."""
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise TenFormatError("bad magic (not a .ten blob)")
    code, rank = blob[4], blob[5]
    if code not in _CODE_DTYPES:
        raise TenFormatError(f"unknown dtype code {code}")
    if not 1 <= rank <= MAX_RANK:
        raise TenFormatError(f"bad rank {rank}")
    off = 6 + 4 * rank
    if len(blob) < off:
        raise TenFormatError("truncated header")
    shape = struct.unpack(f"<{rank}I", blob[6:off])
    if min(shape) < 1:
        raise TenFormatError(f"zero extent in shape {shape}")
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape))
    expected = off + count * dtype.itemsize
    if len(blob) != expected:
        raise TenFormatError(f"payload length {len(blob) - off}, expected {expected - off}")
    data = np.frombuffer(blob, dtype=dtype.newbyteorder("<"), offset=off, count=count)
    return data.astype(dtype).reshape(shape)


def save_ten(path, arr: np.ndarray) -> None:
    Path(path).write_bytes(ten_bytes(arr))


def load_ten(path) -> np.ndarray:
    return ten_from_bytes(Path(path).read_bytes())

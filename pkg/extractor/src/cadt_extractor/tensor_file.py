"""Self-contained writer/reader for the CADT tensor container.

The format is the contract between this tool and whatever consumes the
embeddings, so it is implemented here independently rather than imported:

    bytes 0-3   magic "CADT"
    byte  4     dtype: 0 = float32-le, 1 = uint8
    byte  5     rank: 1, 2 or 3
    next        rank x uint32-le dims, each >= 1
    rest        row-major payload, exactly prod(dims) * itemsize bytes
"""

import struct

import numpy as np

MAGIC = b"CADT"
DTYPE_F32 = 0
DTYPE_U8 = 1

_CODES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}


class TensorFileError(Exception):
    pass


def write_tensor(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        code = DTYPE_F32
    elif arr.dtype == np.uint8:
        code = DTYPE_U8
    else:
        raise TensorFileError(f"unsupported dtype {arr.dtype}; use float32 or uint8")
    if arr.ndim not in (1, 2, 3):
        raise TensorFileError(f"rank must be 1..3, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise TensorFileError(f"all dims must be >= 1, got shape {arr.shape}")
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(arr).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise TensorFileError(f"{path}: not a CADT tensor file")
    code, rank = struct.unpack_from("<BB", blob, 4)
    if code not in _CODES or rank not in (1, 2, 3):
        raise TensorFileError(f"{path}: bad dtype/rank bytes ({code}, {rank})")
    dims = struct.unpack_from(f"<{rank}I", blob, 6)
    start = 6 + 4 * rank
    dt = _CODES[code]
    expected = int(np.prod(dims)) * dt.itemsize
    if len(blob) - start != expected:
        raise TensorFileError(
            f"{path}: payload is {len(blob) - start} bytes, expected {expected}"
        )
    return np.frombuffer(blob, dtype=dt, offset=start).reshape(dims).copy()

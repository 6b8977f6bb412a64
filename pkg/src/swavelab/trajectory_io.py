"""Binary dump of trajectory blocks.

Layout: header of three little-endian int64 values {P, K, N} (paths, time
levels, nodes), followed by row-major time-by-node float64 blocks per path,
little-endian.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

_HEADER_DTYPE = np.dtype("<i8")
_BLOCK_DTYPE = np.dtype("<f8")


def dump_trajectories(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=float)
    if array.ndim != 3:
        raise DataError("trajectory dump expects a (paths, levels, nodes) array")
    header = np.asarray(array.shape, dtype=_HEADER_DTYPE)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(array, dtype=_BLOCK_DTYPE).tobytes())


def load_trajectories(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = np.frombuffer(fh.read(3 * 8), dtype=_HEADER_DTYPE)
        if header.size != 3 or np.any(header <= 0):
            raise DataError("malformed trajectory header")
        p, k, n = (int(v) for v in header)
        data = np.frombuffer(fh.read(p * k * n * 8), dtype=_BLOCK_DTYPE)
    if data.size != p * k * n:
        raise DataError("trajectory payload truncated")
    return data.reshape(p, k, n).copy()

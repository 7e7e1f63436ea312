"""Binary tensor files and small CSV helpers.

The on-disk tensor format is deliberately tiny so that every consumer (CLI,
tests, external tooling) can parse it with a few struct reads:

    bytes 0..3   magic ``FVTN``
    bytes 4..7   format version, little-endian uint32 (currently 1)
    bytes 8..11  ndim, little-endian uint32
    then         ndim little-endian uint32 dimension sizes
    then         the payload: float32 little-endian, C (row-major) order

Storage is 32-bit on purpose -- model weights and images do not need more --
while all in-memory arithmetic is done in float64.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import DataError, require

MAGIC = b"FVTN"
VERSION = 1
_MAX_ELEMENTS = 2**31  # refuse absurd headers before allocating

__all__ = ["MAGIC", "VERSION", "write_tensor", "read_tensor",
           "write_vector_csv", "read_vector_csv"]


def write_tensor(path, array) -> None:
    """Serialize ``array`` to ``path`` in the FVTN format.

    The array is cast to float32; shape is preserved.  Zero-dimensional
    input is rejected (wrap scalars in a length-1 vector).
    """
    arr = np.asarray(array, dtype=np.float32)
    # check before ascontiguousarray, which silently promotes 0-d to 1-d
    require(arr.ndim >= 1, "tensor must have at least one dimension")
    arr = np.ascontiguousarray(arr)
    require(arr.size <= _MAX_ELEMENTS, "tensor too large for this format")
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    dims = struct.pack("<" + "I" * arr.ndim, *arr.shape)
    payload = arr.astype("<f4", copy=False).tobytes(order="C")
    Path(path).write_bytes(header + dims + payload)


def read_tensor(path) -> np.ndarray:
    """Read an FVTN file back as a float32 ndarray.

    :raises DataError: with a distinct message for each corruption mode --
        bad magic, unsupported version, dimension overflow, or a payload
        shorter/longer than the header promises.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from exc
    if len(blob) < 12:
        raise DataError(f"{path}: truncated tensor header")
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a tensor file (bad magic)")
    version, ndim = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported tensor format version {version}")
    if ndim < 1 or ndim > 32:
        raise DataError(f"{path}: implausible dimension count {ndim}")
    if len(blob) < 12 + 4 * ndim:
        raise DataError(f"{path}: truncated dimension list")
    shape = struct.unpack_from("<" + "I" * ndim, blob, 12)
    count = 1
    for d in shape:
        count *= int(d)
        if count > _MAX_ELEMENTS:
            raise DataError(f"{path}: dimension overflow in header")
    offset = 12 + 4 * ndim
    expected = count * 4
    got = len(blob) - offset
    if got < expected:
        raise DataError(f"{path}: truncated tensor payload "
                        f"(expected {expected} bytes, got {got})")
    if got > expected:
        raise DataError(f"{path}: trailing bytes after tensor payload")
    flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return flat.reshape(shape).astype(np.float32, copy=True)


def write_vector_csv(path, values: Sequence[float], prefix: str = "v") -> None:
    """Write a 1-D vector as a single CSV row under headers v0..v{n-1}."""
    arr = np.asarray(values, dtype=np.float64)
    require(arr.ndim == 1, "expected a 1-D vector")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"{prefix}{i}" for i in range(arr.size)])
        writer.writerow([repr(float(x)) for x in arr])


def read_vector_csv(path) -> np.ndarray:
    """Read a vector written by :func:`write_vector_csv`."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read vector csv {path}: {exc}") from exc
    if len(rows) != 2:
        raise DataError(f"{path}: expected a header row and one value row")
    try:
        return np.array([float(x) for x in rows[1]], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell in vector csv") from exc

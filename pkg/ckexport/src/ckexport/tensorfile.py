"""Binary tensor files: magic TNSR, version, 1-4 axes, float32 payload.

Independent implementation of the interchange format the compression toolkit
reads; this package deliberately does not import that toolkit.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1


class TensorFileError(ValueError):
    pass


def write_tensor(arr, path):
    arr = np.asarray(arr)
    if not 1 <= arr.ndim <= 4:
        raise TensorFileError(f"tensor files hold 1 to 4 axes, got {arr.ndim}")
    if arr.size == 0:
        raise TensorFileError("tensor files cannot hold empty axes")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", VERSION, arr.ndim))
        fh.write(b"\x00" * 6)
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return path


def read_tensor(path):
    """Read a tensor file back as float32 (the storage dtype, bit-exact)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise TensorFileError(f"cannot read {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise TensorFileError(f"{path}: not a tensor file")
    version, ndim = blob[4], blob[5]
    if version != VERSION:
        raise TensorFileError(f"{path}: unsupported version {version}")
    if not 1 <= ndim <= 4:
        raise TensorFileError(f"{path}: ndim {ndim} outside 1..4")
    if blob[6:12] != b"\x00" * 6:
        raise TensorFileError(f"{path}: reserved bytes not zero")
    head = 12 + 4 * ndim
    if len(blob) < head:
        raise TensorFileError(f"{path}: truncated dims")
    dims = struct.unpack(f"<{ndim}I", blob[12:head])
    count = int(np.prod(dims))
    if len(blob) != head + 4 * count:
        raise TensorFileError(f"{path}: payload length mismatch")
    return np.frombuffer(blob[head:], dtype="<f4").reshape(dims).copy()

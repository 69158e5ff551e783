"""Binary tensor files and named-tensor checkpoints.

File layout (everything little-endian):

    magic    4 bytes   b"A3RT"
    version  u8        currently 1
    dtype    u8        0 = float32, 1 = float64
    rank     u8
    dims     rank * u32
    payload  row-major values

A checkpoint is a directory with one tensor file per named parameter and
a ``manifest.json`` index. The manifest is serialized canonically
(sorted keys, 2-space indent, trailing newline) so that independently
produced checkpoints with equal contents are byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"A3RT"
FORMAT_VERSION = 1

_DTYPE_BY_CODE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_BY_NAME = {"float32": 0, "float64": 1}


class TensorFormatError(ValueError):
    """Malformed tensor file."""


class BadMagicError(TensorFormatError):
    pass


class BadVersionError(TensorFormatError):
    pass


class UnsupportedDTypeError(TensorFormatError):
    pass


class BadRankError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


def tensor_to_bytes(array: np.ndarray) -> bytes:
    """Serialize a float32/float64 array; row-major, little-endian."""
    arr = np.ascontiguousarray(array)
    if arr.dtype.name not in _CODE_BY_NAME:
        raise UnsupportedDTypeError(f"cannot serialize dtype {arr.dtype}")
    code = _CODE_BY_NAME[arr.dtype.name]
    if arr.ndim > 255:
        raise BadRankError("rank does not fit in u8")
    header = MAGIC + struct.pack("<BBB", FORMAT_VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return header + dims + little.tobytes(order="C")


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 7:
        raise TruncatedPayloadError("file shorter than header")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, dtype_code, rank = struct.unpack("<BBB", buf[4:7])
    if version != FORMAT_VERSION:
        raise BadVersionError(f"unsupported format version {version}")
    if dtype_code not in _DTYPE_BY_CODE:
        raise UnsupportedDTypeError(f"unknown dtype code {dtype_code}")
    dtype = _DTYPE_BY_CODE[dtype_code]
    dims_end = 7 + 4 * rank
    if len(buf) < dims_end:
        raise TruncatedPayloadError("file ends inside the dims block")
    shape = struct.unpack(f"<{rank}I", buf[7:dims_end]) if rank else ()
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = dims_end + count * dtype.itemsize
    if len(buf) < expected:
        raise TruncatedPayloadError(
            f"payload truncated: expected {expected} bytes, got {len(buf)}"
        )
    flat = np.frombuffer(buf[dims_end:expected], dtype=dtype)
    return flat.reshape(shape).copy()


def save_tensor(path, array: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(array))


def load_tensor(path, expected_rank: int | None = None) -> np.ndarray:
    arr = tensor_from_bytes(Path(path).read_bytes())
    if expected_rank is not None and arr.ndim != expected_rank:
        raise BadRankError(
            f"{path}: expected rank {expected_rank}, got rank {arr.ndim}"
        )
    return arr


def _canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_named_tensors(directory, tensors: dict, version: str) -> None:
    """Write a checkpoint directory: one .a3rt per tensor plus manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": FORMAT_VERSION, "version": version, "tensors": {}}
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        fname = name + ".a3rt"
        save_tensor(directory / fname, arr)
        manifest["tensors"][name] = {
            "file": fname,
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
        }
    (directory / "manifest.json").write_text(_canonical_json(manifest))


def load_named_tensors(directory) -> tuple[dict, str]:
    """Read a checkpoint directory; returns (name -> array, version)."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    out = {}
    for name, meta in manifest["tensors"].items():
        arr = load_tensor(directory / meta["file"])
        if list(arr.shape) != list(meta["shape"]):
            raise TensorFormatError(
                f"{name}: manifest shape {meta['shape']} != file shape {list(arr.shape)}"
            )
        out[name] = arr
    return out, manifest.get("version", "")

"""Deterministic RNG streams and the on-disk tensor format.

Tensors move between processes in a small binary container: a 4-byte
magic ``RNTZ``, three little-endian u32 header words (version, dtype
code, rank), ``rank`` u32 dims, then the payload as little-endian
float32 in row-major order. Version is 1 and the only dtype code is 0
(float32). Values are quantized to float32 at this boundary; all
in-memory computation in the package runs in float64 and reductions
accumulate in float64.

Randomness is counter-based (Philox) and addressed by path: a stream is
identified by (seed, path) where path is a tuple of child indices. Child
streams are independent of the order in which they are created, so a
parallel run draws the same numbers as a serial one.
"""

from __future__ import annotations

import os
import struct
from typing import BinaryIO

import numpy as np

from .exceptions import TensorFormatError

__all__ = [
    "MAGIC",
    "Rng",
    "derive_seed",
    "elementwise",
    "matmul",
    "read_tensor",
    "write_tensor",
]

MAGIC = b"RNTZ"
_VERSION = 1
_DTYPE_F32 = 0
# Payload must stay addressable with 32-bit element counts.
_MAX_ELEMENTS = 2**31


class Rng:
    """A named, reproducible random stream.

    Streams form a tree: ``child(i)`` returns the stream at the same
    seed with ``i`` appended to the path. Two runs that derive the same
    (seed, path) get bit-identical draws regardless of how many other
    streams were created in between.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "Rng":
        return Rng(self.seed, self.path + (int(index),))

    def normal(self, shape=None) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"


def derive_seed(seed: int, *path: int) -> int:
    """Collapse (seed, path) into a single integer seed.

    Used where an API takes a plain seed (e.g. per-probe inversion
    configs) but the value must be a deterministic function of a parent
    seed and an index.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# serialization


def _check_element_count(dims) -> int:
    count = 1
    for d in dims:
        if d < 0 or d > 0xFFFFFFFF:
            raise TensorFormatError(f"dimension {d} does not fit in u32")
        count *= int(d)
        if count > _MAX_ELEMENTS:
            raise TensorFormatError(
                f"tensor with dims {tuple(dims)} exceeds {_MAX_ELEMENTS} elements"
            )
    return count


def write_tensor(f: BinaryIO | str | os.PathLike, array) -> None:
    """Write an array to the binary tensor format (quantizing to float32)."""
    arr = np.asarray(array)
    if arr.ndim < 1:
        arr = arr.reshape(1)
    count = _check_element_count(arr.shape)
    payload = np.ascontiguousarray(arr, dtype="<f4")
    header = struct.pack(
        f"<4sIII{arr.ndim}I", MAGIC, _VERSION, _DTYPE_F32, arr.ndim, *arr.shape
    )
    if hasattr(f, "write"):
        f.write(header)
        f.write(payload.tobytes())
    else:
        with open(f, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes())
    assert count == payload.size


def _read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TensorFormatError(
            f"truncated tensor: expected {n} bytes for {what}, got {len(buf)}"
        )
    return buf


def read_tensor(f: BinaryIO | str | os.PathLike) -> np.ndarray:
    """Read a tensor written by write_tensor. Returns float32, row-major."""
    if not hasattr(f, "read"):
        with open(f, "rb") as fh:
            return read_tensor(fh)
    magic = _read_exact(f, 4, "magic")
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, dtype_code, rank = struct.unpack("<III", _read_exact(f, 12, "header"))
    if version != _VERSION:
        raise TensorFormatError(f"unsupported version {version}")
    if dtype_code != _DTYPE_F32:
        raise TensorFormatError(f"unsupported dtype code {dtype_code}")
    if rank > 32:
        raise TensorFormatError(f"implausible rank {rank}")
    dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims"))
    count = _check_element_count(dims)
    payload = _read_exact(f, 4 * count, "payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    if not np.all(np.isfinite(arr)):
        raise TensorFormatError("tensor payload contains non-finite values")
    return arr.copy()


# ---------------------------------------------------------------------------
# dense ops

_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a, b) -> np.ndarray:
    """Elementwise add/sub/mul of same-shape tensors, or 'scale' by a scalar."""
    a = np.asarray(a, dtype=np.float64)
    # overflow surfaces as the non-finite check below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        if op == "scale":
            out = a * float(b)
        else:
            try:
                fn = _ELEMENTWISE[op]
            except KeyError:
                raise ValueError(f"unknown elementwise op {op!r}") from None
            b = np.asarray(b, dtype=np.float64)
            if a.shape != b.shape:
                from .exceptions import ShapeMismatchError

                raise ShapeMismatchError(
                    f"elementwise {op}: shapes {a.shape} and {b.shape} differ"
                )
            out = fn(a, b)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"elementwise {op} produced non-finite values")
    return out


def matmul(a, b) -> np.ndarray:
    """Matrix product of two rank-2 tensors with float64 accumulation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        from .exceptions import ShapeMismatchError

        raise ShapeMismatchError(
            f"matmul needs rank-2 inputs, got ranks {a.ndim} and {b.ndim}"
        )
    if a.shape[1] != b.shape[0]:
        from .exceptions import ShapeMismatchError

        raise ShapeMismatchError(
            f"matmul inner dimensions differ: {a.shape} vs {b.shape}"
        )
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise ValueError("matmul produced non-finite values")
    return out

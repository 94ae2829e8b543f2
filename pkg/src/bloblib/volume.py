"""3D grid containers, index maps, and the BLV1 on-disk format.

Volumes are plain numpy arrays of shape ``(nz, ny, nx)`` in C order, so the
flattened buffer is x-fastest. Probability and intensity maps are float64,
binary masks are bool, and instance labelings travel as
:class:`InstanceLabeling` so the contiguity invariant is checked once.
"""
from __future__ import annotations

import struct
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

from .errors import (
    BadMagicError,
    DimsMismatchError,
    DimsOverflowError,
    FormatError,
    NumericalError,
    TruncatedPayloadError,
    UnknownDtypeError,
    UsageError,
)

MAGIC = b"BLV1"
HEADER = struct.Struct("<4sIIIB")

DTYPE_PROB = 0
DTYPE_MASK = 1
DTYPE_LABELS = 2

_PAYLOAD = {
    DTYPE_PROB: np.dtype("<f8"),
    DTYPE_MASK: np.dtype("u1"),
    DTYPE_LABELS: np.dtype("<u4"),
}


class Dims(NamedTuple):
    nx: int
    ny: int
    nz: int

    @classmethod
    def of(cls, nx, ny, nz) -> "Dims":
        nx, ny, nz = int(nx), int(ny), int(nz)
        if min(nx, ny, nz) < 1:
            raise UsageError(f"every dimension must be >= 1, got {(nx, ny, nz)}")
        if nx * ny * nz > sys.maxsize // 8:
            raise DimsOverflowError(f"volume {nx}x{ny}x{nz} exceeds addressable size")
        return cls(nx, ny, nz)

    @classmethod
    def from_shape(cls, shape) -> "Dims":
        if len(shape) != 3:
            raise UsageError(f"expected a 3D array, got shape {tuple(shape)}")
        nz, ny, nx = shape
        return cls.of(nx, ny, nz)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nz, self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz


def linear_index(dims: Dims, x, y, z):
    """x-fastest linear index of voxel (x, y, z); works elementwise on arrays."""
    return x + dims.nx * (y + dims.ny * z)


def coords(dims: Dims, index):
    """Inverse of :func:`linear_index`; returns (x, y, z)."""
    z, rem = divmod(index, dims.nx * dims.ny)
    y, x = divmod(rem, dims.nx)
    return x, y, z


@dataclass(frozen=True)
class InstanceLabeling:
    """Instance ids per voxel: 0 is background, ids 1..n_instances all present."""

    labels: np.ndarray
    n_instances: int

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.uint32)
        Dims.from_shape(labels.shape)
        counts = np.bincount(labels.ravel(), minlength=self.n_instances + 1)
        if counts.size != self.n_instances + 1 or np.any(counts[1:] == 0):
            raise UsageError(
                f"labels are not contiguous 0..{self.n_instances} with every id present")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_instances", int(self.n_instances))

    @classmethod
    def from_array(cls, labels) -> "InstanceLabeling":
        labels = np.asarray(labels)
        if labels.size and labels.min() < 0:
            raise UsageError("labels must be non-negative")
        n = int(labels.max()) if labels.size else 0
        return cls(labels, n)

    @property
    def dims(self) -> Dims:
        return Dims.from_shape(self.labels.shape)

    @property
    def foreground(self) -> np.ndarray:
        return self.labels > 0

    def __eq__(self, other):
        if not isinstance(other, InstanceLabeling):
            return NotImplemented
        return (self.n_instances == other.n_instances
                and np.array_equal(self.labels, other.labels))

    __hash__ = None


Volume = Union[np.ndarray, InstanceLabeling]


def check_same_dims(*arrays) -> Dims:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise DimsMismatchError(f"dims mismatch: {sorted(shapes)}")
    return Dims.from_shape(next(iter(shapes)))


def as_probability(p, name="p") -> np.ndarray:
    """Validate a probability map at an operation boundary."""
    p = np.asarray(p, dtype=np.float64)
    Dims.from_shape(p.shape)
    if not np.all(np.isfinite(p)):
        raise NumericalError(f"{name} contains non-finite values")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise UsageError(f"{name} must lie in [0, 1]")
    return p


def as_mask(m, name="mask") -> np.ndarray:
    m = np.asarray(m)
    Dims.from_shape(m.shape)
    if m.dtype != np.bool_:
        if m.size and not np.isin(m, (0, 1)).all():
            raise UsageError(f"{name} must be binary")
        m = m.astype(bool)
    return m


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of a dense volume with a binary mask."""
    a = np.asarray(a, dtype=np.float64)
    b = as_mask(b)
    check_same_dims(a, b)
    return np.where(b, a, 0.0)


def _dtype_code(v) -> int:
    if isinstance(v, InstanceLabeling):
        return DTYPE_LABELS
    v = np.asarray(v)
    if v.dtype == np.bool_:
        return DTYPE_MASK
    if np.issubdtype(v.dtype, np.floating):
        return DTYPE_PROB
    raise UsageError(f"cannot write array of dtype {v.dtype}; "
                     "use bool, float, or InstanceLabeling")


def encode_volume(v: Volume) -> bytes:
    code = _dtype_code(v)
    arr = v.labels if code == DTYPE_LABELS else np.asarray(v)
    dims = Dims.from_shape(arr.shape)
    payload = np.ascontiguousarray(arr, dtype=_PAYLOAD[code]).tobytes()
    return HEADER.pack(MAGIC, dims.nx, dims.ny, dims.nz, code) + payload


def decode_volume(buf: bytes) -> Volume:
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < HEADER.size:
        raise TruncatedPayloadError("header truncated")
    _, nx, ny, nz, code = HEADER.unpack_from(buf)
    if code not in _PAYLOAD:
        raise UnknownDtypeError(f"unknown dtype code {code}")
    if min(nx, ny, nz) < 1:
        raise FormatError(f"zero-sized dims {(nx, ny, nz)}")
    n = nx * ny * nz
    itemsize = _PAYLOAD[code].itemsize
    if n > sys.maxsize // itemsize:
        raise DimsOverflowError(f"dims {(nx, ny, nz)} overflow the address space")
    expected = HEADER.size + n * itemsize
    if len(buf) < expected:
        raise TruncatedPayloadError(
            f"payload has {len(buf) - HEADER.size} bytes, expected {n * itemsize}")
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after payload")
    arr = np.frombuffer(buf, dtype=_PAYLOAD[code], count=n, offset=HEADER.size)
    arr = arr.reshape(nz, ny, nx)
    if code == DTYPE_PROB:
        return arr.astype(np.float64)
    if code == DTYPE_MASK:
        if arr.max() > 1:
            raise FormatError("mask payload contains values other than 0/1")
        return arr.astype(bool)
    try:
        return InstanceLabeling.from_array(arr.astype(np.uint32))
    except UsageError as exc:
        raise FormatError(str(exc)) from exc


def write_volume(path, v: Volume) -> None:
    data = encode_volume(v)
    path = Path(path)
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_volume(path) -> Volume:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    try:
        return decode_volume(buf)
    except FormatError as exc:
        raise type(exc)(f"{path}: {exc}") from None

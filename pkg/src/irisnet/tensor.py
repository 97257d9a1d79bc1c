"""Dense float64 tensors.

A :class:`Tensor` wraps a C-contiguous, read-only ``numpy`` array.  Layout for
4-D data is batch x channels x height x width.  There is no broadcasting: every
binary operation demands identical shapes.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from irisnet.autodiff import record

Fill = Union[float, int, Sequence[float], np.ndarray]


class ShapeError(ValueError):
    """Raised when tensor extents disagree."""


class Tensor:
    """Immutable N-dimensional array of 64-bit reals.

    Equality is identity (tensors key gradient maps); use :meth:`equals` for
    value comparison.
    """

    __slots__ = ("_data", "__weakref__")

    def __init__(self, data, shape: Sequence[int] | None = None):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if shape is not None:
            shape = tuple(int(s) for s in shape)
            if arr.size != int(np.prod(shape)):
                raise ShapeError(f"data length {arr.size} != product of shape {shape} ({int(np.prod(shape))})")
            arr = arr.reshape(shape)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(s < 1 for s in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise FloatingPointError("tensor contains non-finite values")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Trusted constructor for op outputs; takes ownership of fresh arrays.
        arr = np.asarray(arr, dtype=np.float64)
        if not (arr.flags.c_contiguous and arr.flags.owndata):
            arr = np.array(arr, order="C")
        if not np.isfinite(arr).all():
            raise FloatingPointError("operation produced non-finite values")
        arr.flags.writeable = False
        t = cls.__new__(cls)
        t._data = arr
        return t

    @property
    def data(self) -> np.ndarray:
        """Read-only view of the underlying array."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        """Writable copy of the data."""
        return self._data.copy()

    def tolist(self) -> list:
        return self._data.tolist()

    def flat(self) -> list[float]:
        """Row-major flat list of values."""
        return self._data.ravel().tolist()

    def equals(self, other: "Tensor") -> bool:
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    def __float__(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"only single-element tensors convert to float, shape is {self.shape}")
        return float(self._data.ravel()[0])

    def __len__(self) -> int:
        return self._data.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={np.array2string(self._data, threshold=8)})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return elementwise_add(self, other)


def tensor_create(shape: Sequence[int], fill: Fill = 0.0) -> Tensor:
    """Build a tensor of ``shape`` from a scalar fill or a row-major value sequence."""
    shape = tuple(int(s) for s in shape)
    if not shape:
        raise ShapeError("shape must be nonempty")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    n = int(np.prod(shape))
    if np.isscalar(fill):
        return Tensor._wrap(np.full(shape, float(fill)))
    values = np.asarray(fill, dtype=np.float64).ravel()
    if values.size != n:
        raise ShapeError(f"fill length {values.size} ≠ {n} required by shape {shape}")
    return Tensor(values, shape)


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def elementwise_add(a: Tensor, b: Tensor) -> Tensor:
    """``a + b`` for identically shaped tensors; recorded on the active tape."""
    _same_shape(a, b, "elementwise_add")
    out = Tensor._wrap(a.data + b.data)
    record("add", (a, b), out, lambda g: (g, g), lambda: a.data + b.data)
    return out


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """``a * b`` for identically shaped tensors."""
    _same_shape(a, b, "elementwise_mul")
    ad, bd = a.data, b.data
    out = Tensor._wrap(ad * bd)
    record("mul", (a, b), out, lambda g: (g * bd, g * ad), lambda: ad * bd)
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two 4-D tensors along the channel axis, ``a`` first."""
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"concat_channels needs 4-D tensors, got {a.shape} and {b.shape}")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(
            f"concat_channels: batch/height/width mismatch "
            f"(B,H,W)={a.shape[0], a.shape[2], a.shape[3]} vs {b.shape[0], b.shape[2], b.shape[3]}"
        )
    ca = a.shape[1]
    out = Tensor._wrap(np.concatenate([a.data, b.data], axis=1))
    record(
        "concat_channels",
        (a, b),
        out,
        lambda g: (g[:, :ca], g[:, ca:]),
        lambda: np.concatenate([a.data, b.data], axis=1),
    )
    return out


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channels ``start:stop`` of a 4-D tensor."""
    if x.ndim != 4:
        raise ShapeError(f"slice_channels needs a 4-D tensor, got {x.shape}")
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"channel range {start}:{stop} invalid for {x.shape[1]} channels")

    def backward(g):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        return (full,)

    out = Tensor._wrap(x.data[:, start:stop])
    record("slice_channels", (x,), out, backward, lambda: x.data[:, start:stop])
    return out

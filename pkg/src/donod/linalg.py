"""Dense matrix container and the Frobenius-norm kernels everything else
builds on.

All values are float64. Norm accumulation is blocked: squares are summed
per 4096-element block with a BLAS dot product and the block partials are
combined exactly with math.fsum, which keeps rounding error bounded on
vocabulary-sized weight matrices. Blocks are taken over the row-major
flattening, so the result depends only on the multiset of entries per
block boundary and is identical across runs.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeMismatch

_NORM_BLOCK = 4096


class Matrix:
    """Immutable 2-D float64 matrix.

    Constructors reject NaN/Inf entries and malformed shapes, so norm code
    downstream never needs to re-validate. The wrapped array is read-only.
    """

    __slots__ = ("_data",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.ndim != 2:
            raise ValueError(f"matrix must be 2-D, got {arr.ndim}-D")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"matrix dimensions must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("matrix entries must be finite (no NaN/Inf)")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def from_flat(cls, rows: int, cols: int, values) -> "Matrix":
        flat = np.asarray(values, dtype=np.float64)
        if flat.size != rows * cols:
            raise ValueError(
                f"need {rows * cols} values for a {rows}x{cols} matrix, got {flat.size}"
            )
        return cls(flat.reshape(rows, cols))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


def _require_same_shape(a: Matrix, b: Matrix, what: str = "matrices") -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what} have mismatched shapes: {a.shape} vs {b.shape}")


def frobenius_norm(w: Matrix) -> float:
    """Square root of the sum of squared entries."""
    flat = w.data.ravel()
    if flat.size <= _NORM_BLOCK:
        return math.sqrt(float(np.dot(flat, flat)))
    partials = [
        float(np.dot(block, block))
        for block in np.split(flat, range(_NORM_BLOCK, flat.size, _NORM_BLOCK))
    ]
    return math.sqrt(math.fsum(partials))


def sub(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise a - b."""
    _require_same_shape(a, b)
    return Matrix(a.data - b.data)


def scaled_axpy(y: Matrix, alpha: float, x: Matrix) -> Matrix:
    """y + alpha * x, elementwise."""
    _require_same_shape(y, x)
    if not math.isfinite(alpha):
        raise ValueError(f"alpha must be finite, got {alpha!r}")
    return Matrix(y.data + alpha * x.data)

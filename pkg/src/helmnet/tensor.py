"""Dense float32 arrays with explicit shape agreement.

Tensors are plain ``numpy.ndarray`` objects in C (row-major) order. The
helpers here add the contract checks the layers rely on: no broadcasting,
64-bit accumulation for reductions and matrix products, and optional
finiteness checks.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


class NonFiniteError(ArithmeticError):
    """Raised when a checked tensor holds NaN or Inf."""


def _check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape:
        raise ShapeError("shape must be non-empty")
    if any(d < 1 for d in shape):
        raise ShapeError(f"every dimension must be >= 1, got {shape}")
    return shape


def new_tensor(shape, fill: float = 0.0, dtype=DTYPE) -> np.ndarray:
    return np.full(_check_shape(shape), fill, dtype=dtype)


def as_tensor(values, dtype=DTYPE) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    _check_shape(arr.shape)
    return arr


def strides(shape) -> tuple[int, ...]:
    """Row-major element strides: stride_k = product of dims after k."""
    shape = _check_shape(shape)
    out = [1] * len(shape)
    for k in range(len(shape) - 2, -1, -1):
        out[k] = out[k + 1] * shape[k + 1]
    return tuple(out)


def flat_index(index, shape) -> int:
    shape = _check_shape(shape)
    if len(index) != len(shape):
        raise ShapeError(f"index rank {len(index)} != tensor rank {len(shape)}")
    flat = 0
    for i, d, s in zip(index, shape, strides(shape)):
        if not 0 <= i < d:
            raise IndexError(f"index {tuple(index)} out of range for {shape}")
        flat += i * s
    return flat


def unravel(flat: int, shape) -> tuple[int, ...]:
    shape = _check_shape(shape)
    total = int(np.prod(shape))
    if not 0 <= flat < total:
        raise IndexError(f"flat index {flat} out of range for {shape}")
    out = []
    for s in strides(shape):
        q, flat = divmod(flat, s)
        out.append(q)
    return tuple(out)


_ELEMENTWISE = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return fn(a, b)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with a float64 accumulator, result in ``a``'s dtype."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims differ: {a.shape} x {b.shape}")
    out = a.astype(np.float64) @ b.astype(np.float64)
    return out.astype(np.result_type(a.dtype, b.dtype))


_REDUCE = {"sum": np.sum, "mean": np.mean, "max": np.max}


def reduce(a: np.ndarray, op: str, axis: int | None = None) -> np.ndarray:
    try:
        fn = _REDUCE[op]
    except KeyError:
        raise ValueError(f"unknown reduction {op!r}") from None
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.ndim}")
    kwargs = {} if op == "max" else {"dtype": np.float64}
    out = np.asarray(fn(a, axis=axis, **kwargs)).astype(a.dtype)
    return out.reshape(1) if out.ndim == 0 else out


def check_finite(a: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return a

"""Dense tensor helpers.

Tensors are plain C-contiguous (row-major) ``numpy.ndarray`` values. The
functions here add the shape/finiteness checks the rest of the package relies
on; nothing broadcasts.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

DTYPE = np.float32


class TensorError(ValueError):
    pass


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise TensorError(f"invalid shape {shape}: need at least one dimension, all >= 1")
    return shape


def tensor_from(shape: Sequence[int], values: Sequence[float], dtype=DTYPE) -> np.ndarray:
    shape = _check_shape(shape)
    flat = np.asarray(values, dtype=dtype).ravel()
    expected = int(np.prod(shape))
    if flat.size != expected:
        raise TensorError(f"length mismatch: shape {shape} needs {expected} values, got {flat.size}")
    if not np.all(np.isfinite(flat)):
        raise TensorError("values must be finite")
    return np.ascontiguousarray(flat.reshape(shape))


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    new_shape = _check_shape(new_shape)
    if int(np.prod(new_shape)) != t.size:
        raise TensorError(f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TensorError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def argmax_last_axis(t: np.ndarray) -> list[int]:
    """Row-wise argmax of a ``[batch, n]`` tensor; ties go to the lowest index."""
    if t.ndim != 2 or t.shape[1] < 1:
        raise TensorError(f"argmax_last_axis expects [batch, n], got {t.shape}")
    # np.argmax returns the first occurrence of the maximum
    return [int(i) for i in np.argmax(t, axis=1)]

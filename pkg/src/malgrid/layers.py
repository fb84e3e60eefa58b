"""Layer primitives with hand-written backward passes.

Activations are NHWC. The public forward functions also accept a single
unbatched sample (HWC, or a 1-D vector for dense) and return a result of the
same rank. Backward functions always work on batches.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL = 3
POOL = 2


class ShapeError(ValueError):
    pass


def he_uniform_init(fan_in: int, shape, seed, dtype=np.float32) -> np.ndarray:
    """Draw i.i.d. U[-L, L] weights, L = sqrt(6 / fan_in), from a PCG64 stream."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    limit = np.sqrt(6.0 / fan_in)
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-limit, limit, size=tuple(shape)).astype(dtype)


def _batched(x: np.ndarray, rank: int):
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected a rank-{rank} sample or rank-{rank + 1} batch, got shape {x.shape}")


def _im2col(x: np.ndarray) -> np.ndarray:
    # (N, H, W, C) -> (N*Ho*Wo, 3*3*C) with patch entries ordered (dy, dx, c)
    n, h, w, c = x.shape
    win = sliding_window_view(x, (KERNEL, KERNEL), axis=(1, 2))  # N, Ho, Wo, C, 3, 3
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * (h - 2) * (w - 2), KERNEL * KERNEL * c)


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid, stride-1 3x3 cross-correlation.

    ``out[y, x, f] = bias[f] + sum over (dy, dx, c) of x[y+dy, x+dx, c] * kernels[dy, dx, c, f]``
    """
    xb, single = _batched(x, 3)
    n, h, w, c = xb.shape
    if kernels.ndim != 4 or kernels.shape[:2] != (KERNEL, KERNEL):
        raise ShapeError(f"kernels must be [3, 3, c_in, c_out], got {kernels.shape}")
    if kernels.shape[2] != c:
        raise ShapeError(f"input has {c} channels but kernels expect {kernels.shape[2]}")
    if bias.shape != (kernels.shape[3],):
        raise ShapeError(f"bias shape {bias.shape} does not match {kernels.shape[3]} filters")
    if h < KERNEL or w < KERNEL:
        raise ShapeError(f"input {h}x{w} is smaller than the 3x3 kernel")
    f = kernels.shape[3]
    out = _im2col(xb) @ kernels.reshape(-1, f) + bias
    out = out.reshape(n, h - 2, w - 2, f)
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, dout: np.ndarray):
    """Return (dx, dkernels, dbias) summed over the batch."""
    n, h, w, c = x.shape
    f = kernels.shape[3]
    ho, wo = h - 2, w - 2
    g = dout.reshape(-1, f)
    dk = (_im2col(x).T @ g).reshape(kernels.shape)
    db = g.sum(axis=0)
    dcols = (g @ kernels.reshape(-1, f).T).reshape(n, ho, wo, KERNEL, KERNEL, c)
    dx = np.zeros_like(x)
    for dy in range(KERNEL):
        for dxi in range(KERNEL):
            dx[:, dy : dy + ho, dxi : dxi + wo, :] += dcols[:, :, :, dy, dxi, :]
    return dx, dk, db


def maxpool2x2_forward(x: np.ndarray):
    """Non-overlapping 2x2 max pool; odd trailing rows/columns are dropped.

    Returns ``(out, argmax)`` where ``argmax`` holds the winning window slot
    (0..3, row-major in the window; ties go to the earliest slot).
    """
    xb, single = _batched(x, 3)
    n, h, w, c = xb.shape
    if h < POOL or w < POOL:
        raise ShapeError(f"input {h}x{w} is smaller than the 2x2 pool window")
    ho, wo = h // POOL, w // POOL
    win = (
        xb[:, : ho * POOL, : wo * POOL, :]
        .reshape(n, ho, POOL, wo, POOL, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, ho, wo, c, POOL * POOL)
    )
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    if single:
        return out[0], arg[0]
    return out, arg


def maxpool2x2_backward(x_shape, argmax: np.ndarray, dout: np.ndarray) -> np.ndarray:
    n, h, w, c = x_shape
    ho, wo = h // POOL, w // POOL
    routed = np.zeros((n, ho, wo, c, POOL * POOL), dtype=dout.dtype)
    np.put_along_axis(routed, argmax[..., None], dout[..., None], axis=-1)
    routed = routed.reshape(n, ho, wo, c, POOL, POOL).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, : ho * POOL, : wo * POOL, :] = routed.reshape(n, ho * POOL, wo * POOL, c)
    return dx


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    xb, single = _batched(x, 1)
    if weights.ndim != 2 or xb.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense input width {xb.shape[1]} does not match weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weights.shape[1]} outputs")
    out = xb @ weights + bias
    return out[0] if single else out


def dense_backward(x: np.ndarray, weights: np.ndarray, dout: np.ndarray):
    return dout @ weights.T, x.T @ dout, dout.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, dout: np.ndarray) -> np.ndarray:
    # gradient at exactly 0 is taken as 0
    return np.where(x > 0, dout, 0).astype(dout.dtype, copy=False)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)

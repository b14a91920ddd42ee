"""Forward/backward primitives for the small convolutional stack.

Everything works on float64 arrays in NCHW layout and returns exact analytic
gradients. Convolutions are 3x3, stride 1, zero-padded to preserve the
spatial size; pooling is 2x2 max with stride 2; the encoder ends with global
average pooling.
"""

from __future__ import annotations

import numpy as np

_OFFSETS = [(di, dj) for di in range(3) for dj in range(3)]


def _im2col3(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, C*9, H*W) patch matrix for a same-padded 3x3 conv."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((b, c, 9, h, w), dtype=x.dtype)
    for k, (di, dj) in enumerate(_OFFSETS):
        cols[:, :, k] = xp[:, :, di : di + h, dj : dj + w]
    return cols.reshape(b, c * 9, h * w)


def conv3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 same conv. w: (C_out, C_in, 3, 3), b: (C_out,)."""
    batch, c_in, h, width = x.shape
    c_out = w.shape[0]
    cols = _im2col3(x)
    wmat = w.reshape(c_out, c_in * 9)
    out = np.matmul(wmat[None, :, :], cols).reshape(batch, c_out, h, width)
    out += b[None, :, None, None]
    cache = (x.shape, cols, wmat)
    return out, cache


def conv3_backward(dout: np.ndarray, cache):
    (batch, c_in, h, width), cols, wmat = cache
    c_out = dout.shape[1]
    dflat = dout.reshape(batch, c_out, h * width)
    dw = np.tensordot(dflat, cols, axes=([0, 2], [0, 2])).reshape(c_out, c_in, 3, 3)
    db = dout.sum(axis=(0, 2, 3))
    dcols = np.matmul(wmat.T[None, :, :], dflat)  # (B, C_in*9, H*W)
    dcols = dcols.reshape(batch, c_in, 9, h, width)
    dxp = np.zeros((batch, c_in, h + 2, width + 2), dtype=dout.dtype)
    for k, (di, dj) in enumerate(_OFFSETS):
        dxp[:, :, di : di + h, dj : dj + width] += dcols[:, :, k]
    dx = dxp[:, :, 1 : 1 + h, 1 : 1 + width]
    return dx, dw, db


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dout * mask


def _pool_views(x: np.ndarray):
    """The four strided views covering each 2x2 window, in row-major order."""
    return (x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2])


def maxpool2_forward(x: np.ndarray):
    """2x2 max pooling, stride 2; ties resolve to the first window element."""
    v0, v1, v2, v3 = _pool_views(x)
    out = np.maximum(np.maximum(v0, v1), np.maximum(v2, v3))
    return out, (x, out)


def maxpool2_backward(dout: np.ndarray, cache) -> np.ndarray:
    x, out = cache
    dx = np.empty_like(x)
    claimed = np.zeros(out.shape, dtype=bool)
    for view, dview in zip(_pool_views(x), _pool_views(dx)):
        winner = (view == out) & ~claimed
        dview[...] = dout * winner
        claimed |= winner
    return dx


def gap_forward(x: np.ndarray):
    """Global average pooling (B, C, H, W) -> (B, C)."""
    return x.mean(axis=(2, 3)), x.shape


def gap_backward(dout: np.ndarray, shape) -> np.ndarray:
    b, c, h, w = shape
    return np.broadcast_to(dout[:, :, None, None], shape) / (h * w)


def affine_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x: (B, N), w: (M, N), b: (M,) -> (B, M)."""
    return x @ w.T + b, (x, w)


def affine_backward(dout: np.ndarray, cache):
    x, w = cache
    dw = dout.T @ x
    db = dout.sum(axis=0)
    dx = dout @ w
    return dx, dw, db

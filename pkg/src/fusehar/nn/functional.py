"""Forward and backward passes for the layer types used by the CNN branches.

Every function accepts a batch (leading ``N`` axis) and also a single sample
without one. Gradients are hand-derived; ``fusehar.nn.gradcheck`` checks them
against central differences.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..tensor import ShapeError


class NonFiniteError(ValueError):
    """NaN or infinity where a finite value is required."""


def _batched(x, rank):
    x = np.asarray(x)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ShapeError(f"expected rank {rank - 1} or {rank} input, got rank {x.ndim}")
    return x, False


def _im2col(x, kh, kw, stride):
    """[N, C, H, W] -> ([N*OH*OW, C*kh*kw] patch matrix, OH, OW)."""
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, -1)
    return cols, oh, ow


def conv2d_forward(x, w, b, stride=1):
    """Valid cross-correlation.

    x: [N, C, H, W] (or [C, H, W]); w: [K, C, kh, kw]; b: [K].
    Returns [N, K, OH, OW] with OH = (H - kh) // stride + 1.
    """
    x, single = _batched(x, 4)
    k, c, kh, kw = w.shape
    if x.shape[1] != c:
        raise ShapeError(f"input has {x.shape[1]} channels, kernels expect {c}")
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {x.shape[2]}x{x.shape[3]}")
    if b.shape != (k,):
        raise ShapeError(f"bias shape {b.shape} does not match {k} kernels")
    cols, oh, ow = _im2col(x, kh, kw, stride)
    out = cols @ w.reshape(k, -1).T + b
    out = np.ascontiguousarray(out.reshape(len(x), oh, ow, k).transpose(0, 3, 1, 2))
    return out[0] if single else out


def conv2d_backward(dout, x, w, stride=1, need_dx=True):
    """Returns (dx, dw, db) for :func:`conv2d_forward`; dx is None unless ``need_dx``."""
    x, single = _batched(x, 4)
    dout = dout[None] if single else dout
    k, c, kh, kw = w.shape
    n, _, oh, ow = dout.shape
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, k)
    cols, _, _ = _im2col(x, kh, kw, stride)
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dmat @ w.reshape(k, -1)).reshape(n, oh, ow, c, kh, kw)
    dx = np.zeros((n, x.shape[2], x.shape[3], c), dtype=dcols.dtype)  # NHWC while summing
    hspan, wspan = stride * (oh - 1) + 1, stride * (ow - 1) + 1
    for u in range(kh):
        for v in range(kw):
            dx[:, u:u + hspan:stride, v:v + wspan:stride, :] += dcols[:, :, :, :, u, v]
    dx = np.ascontiguousarray(dx.transpose(0, 3, 1, 2))
    return (dx[0] if single else dx), dw, db


def _pool_cells(x, ph, pw, stride):
    if x.shape[2] < ph or x.shape[3] < pw:
        raise ShapeError(f"pool window {ph}x{pw} exceeds input {x.shape[2]}x{x.shape[3]}")
    oh = (x.shape[2] - ph) // stride + 1
    ow = (x.shape[3] - pw) // stride + 1
    hspan, wspan = stride * (oh - 1) + 1, stride * (ow - 1) + 1
    for u in range(ph):
        for v in range(pw):
            yield u, v, (slice(None), slice(None), slice(u, u + hspan, stride),
                         slice(v, v + wspan, stride))


def _pool_argmax(x, ph, pw, stride):
    best = idx = None
    for u, v, sl in _pool_cells(x, ph, pw, stride):
        cell = x[sl]
        if best is None:
            best, idx = cell.copy(), np.zeros(cell.shape, np.int32)
            continue
        # strict comparison keeps the first maximal cell on ties
        better = cell > best
        best = np.where(better, cell, best)
        idx[better] = u * pw + v
    return best, idx


def maxpool2d_forward(x, pool=(2, 2), stride=2):
    x, single = _batched(x, 4)
    out, _ = _pool_argmax(x, pool[0], pool[1], stride)
    return out[0] if single else out


def maxpool2d_backward(dout, x, pool=(2, 2), stride=2):
    x, single = _batched(x, 4)
    dout = dout[None] if single else dout
    ph, pw = pool
    _, idx = _pool_argmax(x, ph, pw, stride)
    dx = np.zeros_like(x)
    for u, v, sl in _pool_cells(x, ph, pw, stride):
        dx[sl] += np.where(idx == u * pw + v, dout, 0)
    return dx[0] if single else dx


def fc_forward(x, w, b):
    """Affine map y = W x + b with W of shape [out, in]."""
    x = np.asarray(x)
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} does not match weights {w.shape}")
    return x @ w.T + b


def fc_backward(dout, x, w):
    x2 = np.atleast_2d(x)
    d2 = np.atleast_2d(dout)
    dx = d2 @ w
    return (dx[0] if np.ndim(x) == 1 else dx), d2.T @ x2, d2.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


def softmax(logits, axis=-1):
    logits = np.asarray(logits)
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Loss ``-ln p[label]`` and its gradient ``p - onehot(label)`` for one sample."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("logits must be finite")
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    z = logits - logits.max()
    log_p = z - np.log(np.exp(z).sum())
    p = np.exp(log_p)
    grad = p.copy()
    grad[label] -= 1.0
    return float(-log_p[label]), grad


def softmax_cross_entropy_batch(logits, labels):
    """Mean loss over the batch; gradient already divided by N."""
    if not np.all(np.isfinite(logits)):
        raise NonFiniteError("logits must be finite")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= c:
        raise ValueError("labels must be a length-N vector with values in [0, C)")
    z = logits - logits.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -log_p[rows, labels].mean()
    grad = np.exp(log_p)
    grad[rows, labels] -= 1
    return float(loss), (grad / n).astype(logits.dtype, copy=False)

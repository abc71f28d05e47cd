"""Pure-numpy conv kernels (im2col + BLAS); fallback backend.

Signatures mirror the compiled extension exactly so either can back the
layer implementations.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x: np.ndarray, kernel: int, stride: int, pad: int) -> np.ndarray:
    """(B, Cin, L) -> (B*Lout, Cin*K) patch matrix."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    cols = sliding_window_view(x, kernel, axis=2)[:, :, ::stride]  # (B,Cin,Lout,K)
    b, cin, lout, k = cols.shape
    return cols.transpose(0, 2, 1, 3).reshape(b * lout, cin * k), lout


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int, pad: int) -> np.ndarray:
    cout, cin, k = w.shape
    mat, lout = _im2col(x, k, stride, pad)
    y = mat @ w.reshape(cout, cin * k).T
    y += b
    return np.ascontiguousarray(y.reshape(x.shape[0], lout, cout).transpose(0, 2, 1))


def conv1d_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray,
                    stride: int, pad: int):
    """Returns (dx, dw, db) for y = conv1d(x, w, b)."""
    batch, cin, length = x.shape
    cout, _, k = w.shape
    lout = dy.shape[2]

    db = dy.sum(axis=(0, 2))
    dy_mat = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(batch * lout, cout)

    mat, _ = _im2col(x, k, stride, pad)
    dw = (dy_mat.T @ mat).reshape(cout, cin, k)

    dcols = dy_mat @ w.reshape(cout, cin * k)                       # (B*Lout, Cin*K)
    dcols = dcols.reshape(batch, lout, cin, k).transpose(0, 2, 1, 3)  # (B,Cin,Lout,K)
    dxp = np.zeros((batch, cin, length + 2 * pad), dtype=x.dtype)
    for ki in range(k):
        dxp[:, :, ki: ki + stride * (lout - 1) + 1: stride] += dcols[:, :, :, ki]
    dx = dxp[:, :, pad: pad + length]
    return np.ascontiguousarray(dx), dw, db

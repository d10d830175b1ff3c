"""Dense tensor kernels on top of numpy.

Tensors are plain ``numpy.ndarray`` objects in row-major order. Production
code runs in float32; every kernel preserves the dtype of its inputs so the
gradient-check harness can run the same code in float64.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError

DTYPE = np.float32


def as_tensor(x, dtype=DTYPE):
    return np.ascontiguousarray(x, dtype=dtype)


def elementwise(x, f):
    """Apply the scalar function ``f`` to every element, keeping the shape."""
    x = np.asarray(x)
    out = np.fromiter((f(v) for v in x.ravel()), dtype=x.dtype, count=x.size)
    return out.reshape(x.shape)


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def _out_dim(size, k, stride, pad, what):
    span = size + 2 * pad - k
    if stride < 1 or pad < 0 or span < 0 or span % stride:
        raise ConfigError(
            f"{what}: size {size} with window {k}, stride {stride}, pad {pad} "
            "does not give an integral output dimension"
        )
    return span // stride + 1


def _batched(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected C×H×W or N×C×H×W input, got shape {x.shape}")


def conv_output_shape(h, w, kh, kw, stride=1, pad=0):
    return _out_dim(h, kh, stride, pad, "conv2d"), _out_dim(w, kw, stride, pad, "conv2d")


def im2col(x, kh, kw, stride=1, pad=0):
    """Unfold N×C×H×W into (N·H'·W') × (C·kh·kw) patch rows.

    Column order is (c, i, j), matching ``kernel.reshape(C_out, -1)``.
    """
    n, c, h, w = x.shape
    ho, wo = conv_output_shape(h, w, kh, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win[:, :, :ho, :wo].transpose(0, 2, 3, 1, 4, 5)
    return np.ascontiguousarray(cols).reshape(n * ho * wo, c * kh * kw), (n, ho, wo)


def conv2d(x, kernel, stride=1, pad=0, return_cols=False):
    """Cross-correlation (no kernel flip) with zero padding.

    With ``return_cols`` the unfolded input is returned as well, for reuse
    by ``conv2d_backward``.
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    xb, single = _batched(x)
    if kernel.ndim != 4 or kernel.shape[1] != xb.shape[1]:
        raise DimensionError(
            f"conv2d shape mismatch: input {x.shape}, kernel {kernel.shape}"
        )
    cout, _, kh, kw = kernel.shape
    cols, (n, ho, wo) = im2col(xb, kh, kw, stride, pad)
    out = cols @ kernel.reshape(cout, -1).T
    out = out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    out = out[0] if single else out
    return (out, cols) if return_cols else out


def conv2d_backward(x, kernel, g_out, stride=1, pad=0, cols=None):
    """Gradients of ``conv2d`` w.r.t. its input and kernel.

    ``cols`` is the unfolded input from the forward pass, recomputed if absent.
    """
    xb, single = _batched(np.asarray(x))
    gb = g_out[None] if single else g_out
    cout, cin, kh, kw = kernel.shape
    n, _, h, w = xb.shape
    if cols is None:
        cols, _ = im2col(xb, kh, kw, stride, pad)
    ho, wo = gb.shape[2], gb.shape[3]
    g2 = gb.transpose(0, 2, 3, 1).reshape(-1, cout)
    g_kernel = (g2.T @ cols).reshape(kernel.shape)

    # per-sample (cin·kh·kw) × (ho·wo) patch gradients, scattered back one tap at a time
    g_cols = (kernel.reshape(cout, -1).T @ gb.reshape(n, cout, ho * wo))
    g_cols = g_cols.reshape(n, cin, kh, kw, ho, wo)
    g_pad = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), dtype=g_cols.dtype)
    for i in range(kh):
        for j in range(kw):
            g_pad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g_cols[:, :, i, j]
    g_x = g_pad[:, :, pad:pad + h, pad:pad + w] if pad else g_pad
    g_x = np.ascontiguousarray(g_x)
    return (g_x[0] if single else g_x), g_kernel


def pool2d(x, window, stride=None, mode="max", return_indices=False):
    """Max or average pooling over square windows.

    With ``return_indices`` the flat in-window argmax (max mode) is returned
    alongside the output for routing gradients back.
    """
    if window < 1:
        raise ConfigError(f"pool window must be >= 1, got {window}")
    if mode not in ("max", "avg"):
        raise ConfigError(f"unknown pool mode {mode!r}")
    stride = window if stride is None else stride
    x = np.asarray(x)
    xb, single = _batched(x)
    n, c, h, w = xb.shape
    ho = _out_dim(h, window, stride, 0, "pool2d")
    wo = _out_dim(w, window, stride, 0, "pool2d")
    win = sliding_window_view(xb, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo].reshape(n, c, ho, wo, window * window)
    if mode == "max":
        idx = win.argmax(axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    else:
        idx = None
        out = win.mean(axis=-1, dtype=x.dtype)
    out = np.ascontiguousarray(out)
    if single:
        out = out[0]
        idx = None if idx is None else idx[0]
    return (out, idx) if return_indices else out


def pool2d_backward(g_out, x_shape, window, stride=None, mode="max", indices=None):
    stride = window if stride is None else stride
    single = len(x_shape) == 3
    gb = g_out[None] if single else g_out
    n, c, ho, wo = gb.shape
    shape4 = (1,) + tuple(x_shape) if single else tuple(x_shape)
    g_x = np.zeros(shape4, dtype=g_out.dtype)
    if mode == "max":
        idx = indices[None] if single else indices
        di, dj = np.divmod(idx, window)
        rows = np.arange(ho)[None, None, :, None] * stride + di
        cols = np.arange(wo)[None, None, None, :] * stride + dj
        nn_ = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(g_x, (nn_, cc, rows, cols), gb)
    else:
        share = gb / (window * window)
        for i in range(window):
            for j in range(window):
                g_x[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += share
    return g_x[0] if single else g_x

"""Vectorized layer kernels.

Same contracts as the direct-loop reference module, with the spatial and
channel sums folded into matmul/einsum over whole-grid slices. Loops only
over kernel taps, so the work per call is a handful of BLAS dispatches.
This is the fallback backend when the compiled extension is unavailable.
"""

from __future__ import annotations

import numpy as np

from ._kernels_ref import pad_spatial

NAME = "numpy"


def _gate(out: np.ndarray, grad_out: np.ndarray, relu: bool) -> np.ndarray:
    if relu:
        return np.where(out > 0.0, grad_out, 0.0)
    return np.asarray(grad_out, dtype=np.float64)


def conv3d_forward(x, w, b, relu=True):
    rows, cols, t_in, c_in = x.shape
    kh, kw, kd, _, c_out = w.shape
    t_out = t_in - kd + 1
    xp = pad_spatial(x)
    acc = np.zeros((rows, cols, t_out, c_out))
    acc += b
    for u in range(kh):
        for v in range(kw):
            for d in range(kd):
                acc += xp[u:u + rows, v:v + cols, d:d + t_out, :] @ w[u, v, d]
    return np.maximum(acc, 0.0) if relu else acc


def conv3d_backward(x, w, out, grad_out, relu=True):
    rows, cols, t_in, c_in = x.shape
    kh, kw, kd, _, c_out = w.shape
    t_out = t_in - kd + 1
    xp = pad_spatial(x)
    g = _gate(out, grad_out, relu)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    gb = g.sum(axis=(0, 1, 2))
    for u in range(kh):
        for v in range(kw):
            for d in range(kd):
                xs = xp[u:u + rows, v:v + cols, d:d + t_out, :]
                gw[u, v, d] = np.tensordot(xs, g, axes=([0, 1, 2], [0, 1, 2]))
                gxp[u:u + rows, v:v + cols, d:d + t_out, :] += g @ w[u, v, d].T
    return gxp[1:-1, 1:-1], gw, gb


def conv2d_forward(x, w, b, relu=True):
    rows, cols, c_in = x.shape
    kh, kw, _, c_out = w.shape
    xp = pad_spatial(x)
    acc = np.zeros((rows, cols, c_out))
    acc += b
    for u in range(kh):
        for v in range(kw):
            acc += xp[u:u + rows, v:v + cols, :] @ w[u, v]
    return np.maximum(acc, 0.0) if relu else acc


def conv2d_backward(x, w, out, grad_out, relu=True):
    rows, cols, c_in = x.shape
    kh, kw, _, c_out = w.shape
    xp = pad_spatial(x)
    g = _gate(out, grad_out, relu)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    gb = g.sum(axis=(0, 1))
    for u in range(kh):
        for v in range(kw):
            xs = xp[u:u + rows, v:v + cols, :]
            gw[u, v] = np.tensordot(xs, g, axes=([0, 1], [0, 1]))
            gxp[u:u + rows, v:v + cols, :] += g @ w[u, v].T
    return gxp[1:-1, 1:-1], gw, gb


def lc2d_forward(x, w, b, relu=True):
    rows, cols, c_in = x.shape
    _, _, kh, kw, _, c_out = w.shape
    xp = pad_spatial(x)
    acc = b.copy()
    for u in range(kh):
        for v in range(kw):
            xs = xp[u:u + rows, v:v + cols, :]
            acc += np.einsum("ijc,ijco->ijo", xs, w[:, :, u, v])
    return np.maximum(acc, 0.0) if relu else acc


def lc2d_backward(x, w, out, grad_out, relu=True):
    rows, cols, c_in = x.shape
    _, _, kh, kw, _, c_out = w.shape
    xp = pad_spatial(x)
    g = _gate(out, grad_out, relu)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    gb = g.copy()
    for u in range(kh):
        for v in range(kw):
            xs = xp[u:u + rows, v:v + cols, :]
            gw[:, :, u, v] = np.einsum("ijc,ijo->ijco", xs, g)
            gxp[u:u + rows, v:v + cols, :] += np.einsum("ijco,ijo->ijc", w[:, :, u, v], g)
    return gxp[1:-1, 1:-1], gw, gb


def dense_forward(x, w, b, relu=False):
    acc = x @ w + b
    return np.maximum(acc, 0.0) if relu else acc


def dense_backward(x, w, out, grad_out, relu=False):
    g = _gate(out, grad_out, relu)
    gx = w @ g
    gw = np.outer(x, g)
    gb = g.copy()
    return gx, gw, gb

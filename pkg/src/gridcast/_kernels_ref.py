"""Direct-loop layer kernels.

These mirror the defining sums one index at a time and exist as the
readable reference: both production backends (numpy and the compiled
extension) are equivalence-tested against this module. Far too slow for
training; do not select it outside tests.

Shared conventions, all backends:
  volumes      x[row, col, depth, channel]
  feature maps x[row, col, channel]
  3d weights   w[ku, kv, kd, c_in, c_out], spatial kernel 3x3
  2d weights   w[ku, kv, c_in, c_out]
  local weights w[row, col, ku, kv, c_in, c_out], bias[row, col, c_out]
  dense        w[fan_in, fan_out], bias[fan_out]
Spatial padding is a single ring of zeros (output keeps the grid size);
the depth axis is never padded. Stride 1 everywhere. Backward passes take
the forward output to recover the ReLU gate (out > 0).
"""

from __future__ import annotations

import numpy as np

NAME = "reference"


def pad_spatial(x: np.ndarray) -> np.ndarray:
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (x.ndim - 2)
    return np.pad(x, pad)


def _gate(out: np.ndarray, grad_out: np.ndarray, relu: bool) -> np.ndarray:
    if relu:
        return np.where(out > 0.0, grad_out, 0.0)
    return np.asarray(grad_out, dtype=np.float64)


def conv3d_forward(x, w, b, relu=True):
    rows, cols, t_in, c_in = x.shape
    kh, kw, kd, _, c_out = w.shape
    t_out = t_in - kd + 1
    xp = pad_spatial(x)
    out = np.zeros((rows, cols, t_out, c_out))
    for i in range(rows):
        for j in range(cols):
            for t in range(t_out):
                for co in range(c_out):
                    acc = b[co]
                    for u in range(kh):
                        for v in range(kw):
                            for d in range(kd):
                                for ci in range(c_in):
                                    acc += w[u, v, d, ci, co] * xp[i + u, j + v, t + d, ci]
                    out[i, j, t, co] = max(acc, 0.0) if relu else acc
    return out


def conv3d_backward(x, w, out, grad_out, relu=True):
    rows, cols, t_in, c_in = x.shape
    kh, kw, kd, _, c_out = w.shape
    t_out = t_in - kd + 1
    xp = pad_spatial(x)
    g = _gate(out, grad_out, relu)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    gb = np.zeros(c_out)
    for i in range(rows):
        for j in range(cols):
            for t in range(t_out):
                for co in range(c_out):
                    gv = g[i, j, t, co]
                    if gv == 0.0:
                        continue
                    gb[co] += gv
                    for u in range(kh):
                        for v in range(kw):
                            for d in range(kd):
                                for ci in range(c_in):
                                    gw[u, v, d, ci, co] += gv * xp[i + u, j + v, t + d, ci]
                                    gxp[i + u, j + v, t + d, ci] += gv * w[u, v, d, ci, co]
    return gxp[1:-1, 1:-1], gw, gb


def conv2d_forward(x, w, b, relu=True):
    rows, cols, c_in = x.shape
    kh, kw, _, c_out = w.shape
    xp = pad_spatial(x)
    out = np.zeros((rows, cols, c_out))
    for i in range(rows):
        for j in range(cols):
            for co in range(c_out):
                acc = b[co]
                for u in range(kh):
                    for v in range(kw):
                        for ci in range(c_in):
                            acc += w[u, v, ci, co] * xp[i + u, j + v, ci]
                out[i, j, co] = max(acc, 0.0) if relu else acc
    return out


def conv2d_backward(x, w, out, grad_out, relu=True):
    rows, cols, c_in = x.shape
    kh, kw, _, c_out = w.shape
    xp = pad_spatial(x)
    g = _gate(out, grad_out, relu)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    gb = np.zeros(c_out)
    for i in range(rows):
        for j in range(cols):
            for co in range(c_out):
                gv = g[i, j, co]
                if gv == 0.0:
                    continue
                gb[co] += gv
                for u in range(kh):
                    for v in range(kw):
                        for ci in range(c_in):
                            gw[u, v, ci, co] += gv * xp[i + u, j + v, ci]
                            gxp[i + u, j + v, ci] += gv * w[u, v, ci, co]
    return gxp[1:-1, 1:-1], gw, gb


def lc2d_forward(x, w, b, relu=True):
    rows, cols, c_in = x.shape
    _, _, kh, kw, _, c_out = w.shape
    xp = pad_spatial(x)
    out = np.zeros((rows, cols, c_out))
    for i in range(rows):
        for j in range(cols):
            for co in range(c_out):
                acc = b[i, j, co]
                for u in range(kh):
                    for v in range(kw):
                        for ci in range(c_in):
                            acc += w[i, j, u, v, ci, co] * xp[i + u, j + v, ci]
                out[i, j, co] = max(acc, 0.0) if relu else acc
    return out


def lc2d_backward(x, w, out, grad_out, relu=True):
    rows, cols, c_in = x.shape
    _, _, kh, kw, _, c_out = w.shape
    xp = pad_spatial(x)
    g = _gate(out, grad_out, relu)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    gb = np.zeros((rows, cols, c_out))
    for i in range(rows):
        for j in range(cols):
            for co in range(c_out):
                gv = g[i, j, co]
                if gv == 0.0:
                    continue
                gb[i, j, co] += gv
                for u in range(kh):
                    for v in range(kw):
                        for ci in range(c_in):
                            gw[i, j, u, v, ci, co] += gv * xp[i + u, j + v, ci]
                            gxp[i + u, j + v, ci] += gv * w[i, j, u, v, ci, co]
    return gxp[1:-1, 1:-1], gw, gb


def dense_forward(x, w, b, relu=False):
    fan_in, fan_out = w.shape
    out = np.zeros(fan_out)
    for o in range(fan_out):
        acc = b[o]
        for k in range(fan_in):
            acc += x[k] * w[k, o]
        out[o] = max(acc, 0.0) if relu else acc
    return out


def dense_backward(x, w, out, grad_out, relu=False):
    fan_in, fan_out = w.shape
    g = _gate(out, grad_out, relu)
    gx = np.zeros(fan_in)
    gw = np.zeros_like(w)
    gb = np.zeros(fan_out)
    for o in range(fan_out):
        gv = g[o]
        gb[o] += gv
        for k in range(fan_in):
            gw[k, o] += gv * x[k]
            gx[k] += gv * w[k, o]
    return gx, gw, gb

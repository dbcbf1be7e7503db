"""Slow, independent reference implementations used as test oracles.

Everything here is plain nested-loop / np.interp numpy in float64, sharing no
code with the fast kernels. Intended for small extents only.
"""

from __future__ import annotations

import numpy as np

from .snake import OffsetField, SnakeAxis, SnakeConvLayer, accumulate_positions
from .tensor import Tensor


def naive_conv3d(x, w, bias=None, stride=1, padding=0, groups=1):
    """Direct nested-loop cross-correlation. x [N,C,D,H,W], w [K,C/g,kd,kh,kw]."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if isinstance(stride, int):
        stride = (stride,) * 3
    if isinstance(padding, int):
        padding = (padding,) * 3
    n, c, d, h, ww = x.shape
    k, cg, kd, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding[0],) * 2, (padding[1],) * 2, (padding[2],) * 2))
    do = (d + 2 * padding[0] - kd) // stride[0] + 1
    ho = (h + 2 * padding[1] - kh) // stride[1] + 1
    wo = (ww + 2 * padding[2] - kw) // stride[2] + 1
    out = np.zeros((n, k, do, ho, wo), dtype=np.float64)
    og = k // groups
    for i in range(n):
        for ko in range(k):
            g = ko // og
            for od in range(do):
                for oh in range(ho):
                    for ow in range(wo):
                        acc = 0.0
                        for ci in range(cg):
                            cin = g * cg + ci
                            for a in range(kd):
                                for b in range(kh):
                                    for e in range(kw):
                                        acc += (
                                            w[ko, ci, a, b, e]
                                            * xp[i, cin, od * stride[0] + a,
                                                 oh * stride[1] + b, ow * stride[2] + e]
                                        )
                        out[i, ko, od, oh, ow] = acc
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64).reshape(1, k, 1, 1, 1)
    return out


def _interp_clamped(arr, pos):
    """1-d linear interpolation with replicated borders (np.interp semantics)."""
    idx = np.arange(arr.shape[0], dtype=np.float64)
    return float(np.interp(pos, idx, arr))


def reference_snake_conv(x, layer: SnakeConvLayer):
    """Gather-based snake convolution oracle.

    Materializes the per-cell fractional positions with accumulate_positions
    and reads each tap with np.interp along the perpendicular axis.
    """
    x = np.asarray(x, dtype=np.float64)
    planar = not layer.volumetric
    if planar:
        x = x[:, :, None]  # [N,C,1,H,W]
    n, c, d, h, w = x.shape
    spec = layer.spec
    # Offsets exactly as the layer computes them, but via the naive conv.
    delta = np.tanh(
        naive_conv3d(
            x,
            layer.offset_w.data,
            layer.offset_b.data,
            padding=tuple(k // 2 for k in layer._pred_ksize),
        )
    ) if layer.enable_offsets else np.zeros((n, spec.length - 1, d, h, w))

    lat = layer._lat
    kernel = layer.kernel.data.astype(np.float64)  # [cells, lat, C, K]
    out = np.zeros((n, spec.out_channels, d, h, w), dtype=np.float64)
    for i in range(n):
        for dd in range(d):
            for yy in range(h):
                for xx in range(w):
                    off = OffsetField(
                        delta=Tensor(delta[i : i + 1, :, dd, yy, xx].reshape(1, spec.length - 1, 1, 1)),
                        length=spec.length,
                    )
                    pos = accumulate_positions((xx, yy, dd), off, spec)
                    cells = pos.cell_tuples()
                    for j, cell in enumerate(cells):
                        cx, cy = cell[0], cell[1]
                        cd = cell[2] if len(cell) > 2 else dd
                        for li, lo in enumerate(lat):
                            ld = min(max(int(round(cd)) + int(lo), 0), d - 1) if spec.axis is not SnakeAxis.SPECTRAL else min(max(int(round(cd)), 0), d - 1)
                            if spec.axis is SnakeAxis.X:
                                # integer column, fractional row
                                col = min(max(int(round(cx)), 0), w - 1)
                                for ci in range(c):
                                    v = _interp_clamped(x[i, ci, ld, :, col], cy)
                                    out[i, :, dd, yy, xx] += kernel[j, li, ci, :] * v
                            elif spec.axis is SnakeAxis.Y:
                                row = min(max(int(round(cy)), 0), h - 1)
                                for ci in range(c):
                                    v = _interp_clamped(x[i, ci, ld, row, :], cx)
                                    out[i, :, dd, yy, xx] += kernel[j, li, ci, :] * v
                            else:  # SPECTRAL: integer band+row, fractional column
                                band = min(max(int(round(cd)), 0), d - 1)
                                for ci in range(c):
                                    v = _interp_clamped(x[i, ci, band, yy, :], cx)
                                    out[i, :, dd, yy, xx] += kernel[j, li, ci, :] * v
    if planar:
        out = out[:, :, 0]
    return out

"""Hot compute kernels behind the tensor ops.

Everything here works on plain numpy arrays in channels-last layout
[N, D, H, W, C]. Each kernel has a pure-numpy reference implementation and,
when numba is importable, a jitted fast path; both produce identical results
and the test suite cross-checks them. Set SPECTRALSNAKE_NO_NUMBA=1 to force
the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

try:
    if os.environ.get("SPECTRALSNAKE_NO_NUMBA"):
        raise ImportError("numba disabled by SPECTRALSNAKE_NO_NUMBA")
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(f):
            return f

        return deco

    prange = range


# ---------------------------------------------------------------------------
# im2col / col2im for channels-last 3-d convolution
# ---------------------------------------------------------------------------


def im2col_np(xp, ksize, stride, out_shape):
    """Gather sliding windows: xp [N,Dp,Hp,Wp,C] -> [N,Do,Ho,Wo, kd*kh*kw*C]."""
    n, _, _, _, c = xp.shape
    kd, kh, kw = ksize
    sd, sh, sw = stride
    do, ho, wo = out_shape
    win = np.lib.stride_tricks.sliding_window_view(xp, (kd, kh, kw), axis=(1, 2, 3))
    win = win[:, ::sd, ::sh, ::sw]
    # [N,Do,Ho,Wo,C,kd,kh,kw] -> [N,Do,Ho,Wo,kd,kh,kw,C]
    win = np.moveaxis(win, 4, 7)
    return np.ascontiguousarray(win).reshape(n, do, ho, wo, kd * kh * kw * c)


@njit(cache=True, parallel=True)
def _im2col_nb(xp, kd, kh, kw, sd, sh, sw, cols):
    n, _, _, _, c = xp.shape
    do, ho, wo = cols.shape[1], cols.shape[2], cols.shape[3]
    for i in prange(n):
        for od in range(do):
            for oh in range(ho):
                for ow in range(wo):
                    base = 0
                    for a in range(kd):
                        for b in range(kh):
                            for e in range(kw):
                                src = xp[i, od * sd + a, oh * sh + b, ow * sw + e]
                                for ch in range(c):
                                    cols[i, od, oh, ow, base + ch] = src[ch]
                                base += c
    return cols


def im2col(xp, ksize, stride, out_shape):
    if not HAVE_NUMBA:
        return im2col_np(xp, ksize, stride, out_shape)
    n, _, _, _, c = xp.shape
    kd, kh, kw = ksize
    do, ho, wo = out_shape
    cols = np.empty((n, do, ho, wo, kd * kh * kw * c), dtype=xp.dtype)
    _im2col_nb(xp, kd, kh, kw, *stride, cols)
    return cols


def col2im_np(cols, ksize, stride, padded_shape):
    """Scatter-add of column gradients back onto the padded input grid."""
    n, do, ho, wo, _ = cols.shape
    kd, kh, kw = ksize
    sd, sh, sw = stride
    c = padded_shape[-1]
    out = np.zeros(padded_shape, dtype=cols.dtype)
    cols = cols.reshape(n, do, ho, wo, kd, kh, kw, c)
    for a in range(kd):
        for b in range(kh):
            for e in range(kw):
                out[:, a : a + do * sd : sd, b : b + ho * sh : sh, e : e + wo * sw : sw] += cols[
                    :, :, :, :, a, b, e
                ]
    return out


@njit(cache=True, parallel=True)
def _col2im_nb(cols, kd, kh, kw, sd, sh, sw, out):
    n, do, ho, wo, _ = cols.shape
    c = out.shape[4]
    for i in prange(n):
        for od in range(do):
            for oh in range(ho):
                for ow in range(wo):
                    base = 0
                    for a in range(kd):
                        for b in range(kh):
                            for e in range(kw):
                                dst = out[i, od * sd + a, oh * sh + b, ow * sw + e]
                                for ch in range(c):
                                    dst[ch] += cols[i, od, oh, ow, base + ch]
                                base += c
    return out


def col2im(cols, ksize, stride, padded_shape):
    if not HAVE_NUMBA:
        return col2im_np(cols, ksize, stride, padded_shape)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    _col2im_nb(cols, *ksize, *stride, out)
    return out


# ---------------------------------------------------------------------------
# Snake sampling: gather taps along a deformed polyline
# ---------------------------------------------------------------------------
#
# Standardized layout: x [N, U, P, Q, C] where Q is the kernel's primary axis
# (integer steps), P the perpendicular axis (fractional, interpolated) and U
# the remaining axis (optionally covered by fixed lateral taps). q holds the
# accumulated perpendicular displacement per kernel cell, [N, U, P, Q, J].
# Interpolation anchors on ceil(pos)-1 so the subgradient at integer
# coordinates is the left limit; out-of-range neighbors replicate the border.


def snake_gather_np(x, q, shifts, lat_offsets):
    n, u, p, qn, c = x.shape
    cells = shifts.shape[0]
    lat = lat_offsets.shape[0]
    pos = q + np.arange(p, dtype=x.dtype)[None, None, :, None, None]  # [N,U,P,Q,J]
    lo = np.ceil(pos).astype(np.int64) - 1
    w_hi = (pos - lo).astype(x.dtype)
    lo_c = np.clip(lo, 0, p - 1)
    hi_c = np.clip(lo + 1, 0, p - 1)
    s = np.empty((n, u, p, qn, lat, cells, c), dtype=x.dtype)
    uu = np.clip(np.arange(u)[:, None] + lat_offsets[None, :], 0, u - 1)  # [U,lat]
    qprim = np.clip(np.arange(qn)[:, None] + shifts[None, :], 0, qn - 1)  # [Q,cells]
    for l in range(lat):
        xl = x[:, uu[:, l]]  # [N,U,P,Q,C]
        for j in range(cells):
            xs = xl[:, :, :, qprim[:, j]]  # [N,U,P,Q,C]
            g_lo = np.take_along_axis(xs, lo_c[:, :, :, :, j, None], axis=2)
            g_hi = np.take_along_axis(xs, hi_c[:, :, :, :, j, None], axis=2)
            w = w_hi[:, :, :, :, j, None]
            s[:, :, :, :, l, j, :] = (1.0 - w) * g_lo + w * g_hi
    return s


@njit(cache=True, parallel=True)
def _snake_gather_nb(x, q, shifts, lat_offsets, s):
    n, u, p, qn, c = x.shape
    cells = shifts.shape[0]
    lat = lat_offsets.shape[0]
    for i in prange(n):
        for a in range(u):
            for b in range(p):
                for d in range(qn):
                    for j in range(cells):
                        qp = d + shifts[j]
                        if qp < 0:
                            qp = 0
                        elif qp >= qn:
                            qp = qn - 1
                        pos = b + q[i, a, b, d, j]
                        lo = int(np.ceil(pos)) - 1
                        w_hi = pos - lo
                        hi = lo + 1
                        if lo < 0:
                            lo = 0
                        elif lo >= p:
                            lo = p - 1
                        if hi < 0:
                            hi = 0
                        elif hi >= p:
                            hi = p - 1
                        w_lo = 1.0 - w_hi
                        for l in range(lat):
                            au = a + lat_offsets[l]
                            if au < 0:
                                au = 0
                            elif au >= u:
                                au = u - 1
                            dst = s[i, a, b, d, l, j]
                            xlo = x[i, au, lo, qp]
                            xhi = x[i, au, hi, qp]
                            for ch in range(c):
                                dst[ch] = w_lo * xlo[ch] + w_hi * xhi[ch]
    return s


def snake_gather(x, q, shifts, lat_offsets):
    """Sample [N,U,P,Q,lat,cells,C] taps from x at the polyline positions."""
    if not HAVE_NUMBA:
        return snake_gather_np(x, q, shifts, lat_offsets)
    n, u, p, qn, c = x.shape
    s = np.empty((n, u, p, qn, lat_offsets.shape[0], shifts.shape[0], c), dtype=x.dtype)
    _snake_gather_nb(x, np.ascontiguousarray(q), shifts, lat_offsets, s)
    return s


def snake_scatter_np(ds, x, q, shifts, lat_offsets):
    """Backward of snake_gather: grads w.r.t. x and the perpendicular positions."""
    n, u, p, qn, c = x.shape
    cells = shifts.shape[0]
    lat = lat_offsets.shape[0]
    dx = np.zeros_like(x)
    dq = np.zeros_like(q)
    for i in range(n):
        for a in range(u):
            for b in range(p):
                for d in range(qn):
                    for j in range(cells):
                        qp = min(max(d + shifts[j], 0), qn - 1)
                        pos = b + q[i, a, b, d, j]
                        lo = int(np.ceil(pos)) - 1
                        w_hi = pos - lo
                        hi = min(max(lo + 1, 0), p - 1)
                        lo = min(max(lo, 0), p - 1)
                        acc = 0.0
                        for l in range(lat):
                            au = min(max(a + lat_offsets[l], 0), u - 1)
                            g = ds[i, a, b, d, l, j]
                            dx[i, au, lo, qp] += (1.0 - w_hi) * g
                            dx[i, au, hi, qp] += w_hi * g
                            acc += float(np.dot(g, x[i, au, hi, qp] - x[i, au, lo, qp]))
                        dq[i, a, b, d, j] = acc
    return dx, dq


@njit(cache=True, parallel=True)
def _snake_scatter_nb(ds, x, q, shifts, lat_offsets, dx, dq):
    n, u, p, qn, c = x.shape
    cells = shifts.shape[0]
    lat = lat_offsets.shape[0]
    for i in prange(n):
        for a in range(u):
            for b in range(p):
                for d in range(qn):
                    for j in range(cells):
                        qp = d + shifts[j]
                        if qp < 0:
                            qp = 0
                        elif qp >= qn:
                            qp = qn - 1
                        pos = b + q[i, a, b, d, j]
                        lo = int(np.ceil(pos)) - 1
                        w_hi = pos - lo
                        hi = lo + 1
                        if lo < 0:
                            lo = 0
                        elif lo >= p:
                            lo = p - 1
                        if hi < 0:
                            hi = 0
                        elif hi >= p:
                            hi = p - 1
                        w_lo = 1.0 - w_hi
                        acc = 0.0
                        for l in range(lat):
                            au = a + lat_offsets[l]
                            if au < 0:
                                au = 0
                            elif au >= u:
                                au = u - 1
                            g = ds[i, a, b, d, l, j]
                            xlo = x[i, au, lo, qp]
                            xhi = x[i, au, hi, qp]
                            for ch in range(c):
                                gc = g[ch]
                                dx[i, au, lo, qp, ch] += w_lo * gc
                                dx[i, au, hi, qp, ch] += w_hi * gc
                                acc += gc * (xhi[ch] - xlo[ch])
                        dq[i, a, b, d, j] = acc
    return dx, dq


def snake_scatter(ds, x, q, shifts, lat_offsets):
    if not HAVE_NUMBA:
        return snake_scatter_np(ds, x, q, shifts, lat_offsets)
    dx = np.zeros_like(x)
    dq = np.zeros_like(q)
    _snake_scatter_nb(
        np.ascontiguousarray(ds), x, np.ascontiguousarray(q), shifts, lat_offsets, dx, dq
    )
    return dx, dq

"""Convolution, pooling, normalization, and classifier-head operations.

Public entry points follow the channel-second convention ([N, C, D, H, W]).
The *_cl variants work channels-last and are what the network uses
internally; the public wrappers only add the transposes.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor


def _triple(v):
    if isinstance(v, (tuple, list)):
        if len(v) != 3:
            raise ShapeError(f"expected 3 entries, got {v!r}")
        return tuple(int(x) for x in v)
    return (int(v),) * 3


def conv3d_cl(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Grouped cross-correlation over [N, D, H, W, C] input.

    weight keeps the public [Cout, Cin/groups, kd, kh, kw] layout.
    """
    stride = _triple(stride)
    padding = _triple(padding)
    n, d, h, w, cin = x.data.shape
    cout, cin_g, kd, kh, kw = weight.data.shape
    if cin % groups != 0:
        raise ShapeError(f"conv3d: input channels {cin} not divisible by groups {groups}")
    if cout % groups != 0:
        raise ShapeError(f"conv3d: output channels {cout} not divisible by groups {groups}")
    if cin_g != cin // groups:
        raise ShapeError(
            f"conv3d: weight expects {cin_g} channels per group, input provides {cin // groups}"
        )
    dims = []
    for ext, k, s, p, name in zip((d, h, w), (kd, kh, kw), stride, padding, "DHW"):
        o = (ext + 2 * p - k) // s + 1
        if o < 1:
            raise ShapeError(f"conv3d: kernel {k} does not fit input extent {ext} on axis {name}")
        dims.append(o)
    do, ho, wo = dims

    pad_width = ((0, 0), (padding[0],) * 2, (padding[1],) * 2, (padding[2],) * 2, (0, 0))
    needs_pad = any(p > 0 for p in padding)

    pointwise = (kd, kh, kw) == (1, 1, 1) and stride == (1, 1, 1) and not needs_pad
    padded_shape = (n, d + 2 * padding[0], h + 2 * padding[1], w + 2 * padding[2], cin)
    og = cout // groups

    def wmat_of(wdata):
        return np.ascontiguousarray(wdata.transpose(2, 3, 4, 1, 0)).reshape(
            kd * kh * kw * cin_g, cout
        )

    def group_cols(xp, g):
        if pointwise and groups == 1:
            return xp
        xg = np.ascontiguousarray(xp[..., g * cin_g : (g + 1) * cin_g])
        if pointwise:
            return xg
        return kernels.im2col(xg, (kd, kh, kw), stride, (do, ho, wo))

    wmat_full = wmat_of(weight.data)
    xp0 = np.pad(x.data, pad_width) if needs_pad else x.data
    out_data = np.empty((n, do, ho, wo, cout), dtype=x.data.dtype)
    for g in range(groups):
        cols = group_cols(xp0, g)
        out_data[..., g * og : (g + 1) * og] = (
            cols.reshape(-1, kd * kh * kw * cin_g) @ wmat_full[:, g * og : (g + 1) * og]
        ).reshape(n, do, ho, wo, og)
    if bias is not None:
        out_data = out_data + bias.data

    requires = x.requires_grad or weight.requires_grad or (bias is not None and bias.requires_grad)

    def backward(gout):
        # Columns are rebuilt here rather than kept alive on the tape.
        wmat = wmat_of(weight.data)
        xp = np.pad(x.data, pad_width) if needs_pad else x.data
        if weight.requires_grad:
            dw = np.empty_like(weight.data)
        if x.requires_grad:
            dxp = np.zeros(padded_shape, dtype=x.data.dtype)
        for g in range(groups):
            g2d = np.ascontiguousarray(gout[..., g * og : (g + 1) * og]).reshape(-1, og)
            if weight.requires_grad:
                cols = group_cols(xp, g).reshape(-1, kd * kh * kw * cin_g)
                dwmat = cols.T @ g2d  # [k3*cin_g, og]
                dw[g * og : (g + 1) * og] = dwmat.reshape(kd, kh, kw, cin_g, og).transpose(
                    4, 3, 0, 1, 2
                )
            if x.requires_grad:
                dcols = (g2d @ wmat[:, g * og : (g + 1) * og].T).reshape(
                    n, do, ho, wo, kd * kh * kw * cin_g
                )
                if pointwise:
                    dxp[..., g * cin_g : (g + 1) * cin_g] += dcols
                else:
                    dxp[..., g * cin_g : (g + 1) * cin_g] += kernels.col2im(
                        dcols, (kd, kh, kw), stride, padded_shape[:-1] + (cin_g,)
                    )
        if weight.requires_grad:
            weight.accumulate_grad(dw)
        if x.requires_grad:
            if needs_pad:
                dxp = dxp[
                    :,
                    padding[0] : padding[0] + d,
                    padding[1] : padding[1] + h,
                    padding[2] : padding[2] + w,
                    :,
                ]
            x.accumulate_grad(np.ascontiguousarray(dxp))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gout.reshape(-1, cout).sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out_data, parents, backward, requires)


def conv3d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Cross-correlation of x [N, C, D, H, W] with weight [Cout, C/groups, kd, kh, kw]."""
    if x.data.ndim != 5:
        raise ShapeError(f"conv3d: expected 5-d input [N,C,D,H,W], got shape {x.data.shape}")
    y = conv3d_cl(x.moveaxis(1, -1), weight, bias=bias, stride=stride, padding=padding, groups=groups)
    return y.moveaxis(-1, 1)


def avg_pool3d_cl(x, window, stride=None):
    """Mean pooling over [N, D, H, W, C]; gradient spreads uniformly."""
    window = _triple(window)
    stride = window if stride is None else _triple(stride)
    n, d, h, w, c = x.data.shape
    for ext, k, name in zip((d, h, w), window, "DHW"):
        if k > ext:
            raise ShapeError(f"avg_pool3d: window {k} exceeds input extent {ext} on axis {name}")
    do = (d - window[0]) // stride[0] + 1
    ho = (h - window[1]) // stride[1] + 1
    wo = (w - window[2]) // stride[2] + 1
    inv = 1.0 / (window[0] * window[1] * window[2])
    out = np.zeros((n, do, ho, wo, c), dtype=x.data.dtype)
    for a in range(window[0]):
        for b in range(window[1]):
            for e in range(window[2]):
                out += x.data[
                    :,
                    a : a + do * stride[0] : stride[0],
                    b : b + ho * stride[1] : stride[1],
                    e : e + wo * stride[2] : stride[2],
                ]
    out *= np.array(inv, dtype=x.data.dtype)

    def backward(g):
        if not x.requires_grad:
            return
        dx = np.zeros_like(x.data)
        gs = g * np.array(inv, dtype=g.dtype)
        for a in range(window[0]):
            for b in range(window[1]):
                for e in range(window[2]):
                    dx[
                        :,
                        a : a + do * stride[0] : stride[0],
                        b : b + ho * stride[1] : stride[1],
                        e : e + wo * stride[2] : stride[2],
                    ] += gs
        x.accumulate_grad(dx)

    return Tensor.from_op(out, (x,), backward, x.requires_grad)


def avg_pool3d(x, window, stride=None):
    """Mean pooling of x [N, C, D, H, W]."""
    if x.data.ndim != 5:
        raise ShapeError(f"avg_pool3d: expected 5-d input, got shape {x.data.shape}")
    return avg_pool3d_cl(x.moveaxis(1, -1), window, stride).moveaxis(-1, 1)


class BatchNorm:
    """Per-channel standardization with learned scale/shift and running stats."""

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


def batch_norm_cl(x, state, train):
    """Normalize the trailing channel axis of x using `state` (a BatchNorm)."""
    c = x.data.shape[-1]
    if c != state.channels:
        raise ShapeError(f"batch_norm: input has {c} channels, state expects {state.channels}")
    flat = x.data.reshape(-1, c)
    m = flat.shape[0]
    if train:
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        state.running_mean += state.momentum * (mean - state.running_mean)
        state.running_var += state.momentum * (var - state.running_var)
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (flat - mean) * inv_std
    out = (xhat * state.gamma.data + state.beta.data).reshape(x.data.shape).astype(x.data.dtype)
    gamma, beta = state.gamma, state.beta
    requires = x.requires_grad or gamma.requires_grad or beta.requires_grad

    def backward(g):
        g2 = g.reshape(-1, c)
        if beta.requires_grad:
            beta.accumulate_grad(g2.sum(axis=0))
        if gamma.requires_grad:
            gamma.accumulate_grad((g2 * xhat).sum(axis=0))
        if x.requires_grad:
            gx = g2 * gamma.data
            if train:
                dx = inv_std / m * (m * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
            else:
                dx = gx * inv_std
            x.accumulate_grad(dx.reshape(x.data.shape).astype(x.data.dtype))

    return Tensor.from_op(out, (x, gamma, beta), backward, requires)


def batch_norm(x, state, train=True):
    """Normalize channel axis 1 of x [N, C, ...]."""
    return batch_norm_cl(x.moveaxis(1, -1), state, train).moveaxis(-1, 1)


def linear(x, weight, bias=None):
    """Affine map of x [N, F] with weight [F, out]."""
    if x.data.ndim != 2:
        raise ShapeError(f"linear: expected 2-d input, got shape {x.data.shape}")
    if x.data.shape[1] != weight.data.shape[0]:
        raise ShapeError(
            f"linear: input features {x.data.shape[1]} != weight rows {weight.data.shape[0]}"
        )
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy between logits [N, C] and integer labels [N] in 0..C-1."""
    labels = np.asarray(labels)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"softmax_cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.min() < 0 or labels.max() >= c:
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise ShapeError(f"softmax_cross_entropy: label {bad} outside class range 0..{c - 1}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    exps = np.exp(z - zmax)
    probs = exps / exps.sum(axis=1, keepdims=True)
    nll = -(np.log(probs[np.arange(n), labels] + 1e-30)).mean()
    out = np.asarray(nll, dtype=z.dtype)

    def backward(g):
        if logits.requires_grad:
            d = probs.copy()
            d[np.arange(n), labels] -= 1.0
            logits.accumulate_grad(g * d / n)

    return Tensor.from_op(out, (logits,), backward, logits.requires_grad)


def softmax_probs(logits):
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    exps = np.exp(z - zmax)
    return exps / exps.sum(axis=1, keepdims=True)


def he_init(rng, shape, fan_in, dtype=np.float32):
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)

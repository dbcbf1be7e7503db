"""Dynamic snake convolution.

A snake kernel is a polyline of sampling cells: along its primary axis the
cells step by exactly one grid unit, while a learned, bounded offset is
accumulated cell by cell along the perpendicular axis. Fractional positions
are read with separable linear interpolation (replicated borders), then the
taps are mixed by the kernel weights. Gradients flow through the sampled
values, the interpolation weights, and the offset predictor; they are
obtained by calling backward() on anything derived from the output.

Coordinate conventions: x indexes columns (W), y indexes rows (H), band
indexes the spectral axis (D). Interpolation anchors neighbors at
ceil(pos)-1 and ceil(pos), so at integer positions the value is exact and
the subgradient is the left limit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .nn import conv3d_cl, he_init
from .tensor import ShapeError, Tensor


class SnakeAxis(enum.Enum):
    X = "x"
    Y = "y"
    SPECTRAL = "spectral"


@dataclass
class SnakeKernelSpec:
    """Geometry of one snake kernel."""

    in_channels: int
    out_channels: int
    length: int = 9
    axis: SnakeAxis = SnakeAxis.X
    max_step: float = 1.0

    def __post_init__(self):
        if self.length < 3 or self.length % 2 == 0:
            raise ShapeError(f"snake kernel length must be odd and >= 3, got {self.length}")
        if self.max_step != 1.0:
            raise ShapeError("snake offsets are bounded to [-1, 1]; max_step must be 1.0")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("snake kernel needs positive channel counts")

    @property
    def half(self):
        return (self.length - 1) // 2


@dataclass
class OffsetField:
    """Per-step perpendicular offsets, one per non-center kernel cell.

    delta has shape [N, length-1, *spatial]; the first half of the step axis
    holds the minus-side steps ordered outward from the center, the second
    half the plus-side steps outward. Every entry lies in [-1, 1].
    """

    delta: Tensor
    length: int

    def __post_init__(self):
        if self.delta.shape[1] != self.length - 1:
            raise ShapeError(
                f"offset field step axis has extent {self.delta.shape[1]}, expected {self.length - 1}"
            )

    def within_bounds(self, tol=0.0):
        d = self.delta.data
        return bool((d >= -1.0 - tol).all() and (d <= 1.0 + tol).all())


@dataclass
class SnakePositionSet:
    """Fractional sampling coordinates per kernel cell.

    Arrays are indexed [N, cell, *spatial] with cells ordered by signed
    distance from the center (-half .. +half).
    """

    axis: SnakeAxis
    xs: np.ndarray
    ys: np.ndarray
    bands: np.ndarray = None

    def cell_tuples(self):
        """(x, y[, band]) per cell for a single-position field."""
        xs = self.xs.reshape(self.xs.shape[1], -1)[:, 0]
        ys = self.ys.reshape(self.ys.shape[1], -1)[:, 0]
        if self.bands is None:
            return list(zip(xs.tolist(), ys.tolist()))
        ds = self.bands.reshape(self.bands.shape[1], -1)[:, 0]
        return list(zip(xs.tolist(), ys.tolist(), ds.tolist()))


def accumulate_positions(center, offsets: OffsetField, spec: SnakeKernelSpec) -> SnakePositionSet:
    """Turn per-step offsets into absolute fractional cell coordinates.

    center is (x, y) or (x, y, band); scalars broadcast over the offset
    field's spatial extents. The primary axis steps by exactly one per cell,
    the perpendicular axis accumulates the offsets outward from the center.
    """
    half = spec.half
    delta = offsets.delta.data
    n = delta.shape[0]
    spatial = delta.shape[2:]
    cum_minus = np.cumsum(delta[:, :half], axis=1)[:, ::-1]
    cum_plus = np.cumsum(delta[:, half:], axis=1)
    perp = np.concatenate(
        [cum_minus, np.zeros((n, 1) + spatial, dtype=delta.dtype), cum_plus], axis=1
    )
    shifts = np.arange(-half, half + 1, dtype=delta.dtype).reshape(1, spec.length, *(1,) * len(spatial))

    def expand(v):
        return np.broadcast_to(np.asarray(v, dtype=delta.dtype), (n, spec.length) + spatial)

    cx, cy = center[0], center[1]
    if spec.axis is SnakeAxis.X:
        xs = expand(cx) + shifts
        ys = expand(cy) + perp
        bands = expand(center[2]) if len(center) > 2 else None
    elif spec.axis is SnakeAxis.Y:
        ys = expand(cy) + shifts
        xs = expand(cx) + perp
        bands = expand(center[2]) if len(center) > 2 else None
    else:
        if len(center) < 3:
            raise ShapeError("spectral-axis positions need a (x, y, band) center")
        bands = expand(center[2]) + shifts
        xs = expand(cx) + perp
        ys = expand(cy)
    return SnakePositionSet(axis=spec.axis, xs=np.ascontiguousarray(xs), ys=np.ascontiguousarray(ys), bands=None if bands is None else np.ascontiguousarray(bands))


def bilinear_sample(x: Tensor, positions: Tensor) -> Tensor:
    """Sample x [N, C, H, W] at fractional positions [N, K, 2, Ho, Wo].

    positions[:, :, 0] holds x (column) coordinates, [:, :, 1] holds y (row)
    coordinates. Out-of-range neighbors replicate the border, so the
    interpolation weights always form a partition of unity. Differentiable
    with respect to both x and positions.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"bilinear_sample: expected [N,C,H,W] input, got {x.data.shape}")
    if positions.data.ndim != 5 or positions.data.shape[2] != 2:
        raise ShapeError(
            f"bilinear_sample: expected positions [N,K,2,Ho,Wo], got {positions.data.shape}"
        )
    n, c, h, w = x.data.shape
    _, k, _, ho, wo = positions.data.shape
    px = positions.data[:, :, 0]
    py = positions.data[:, :, 1]
    x_lo = np.ceil(px).astype(np.int64) - 1
    y_lo = np.ceil(py).astype(np.int64) - 1
    wx = (px - x_lo).astype(x.data.dtype)
    wy = (py - y_lo).astype(x.data.dtype)
    x0 = np.clip(x_lo, 0, w - 1)
    x1 = np.clip(x_lo + 1, 0, w - 1)
    y0 = np.clip(y_lo, 0, h - 1)
    y1 = np.clip(y_lo + 1, 0, h - 1)

    xd = x.data.reshape(n, c, h * w)
    ni = np.arange(n).reshape(n, 1, 1, 1)

    def corner(yi, xi):
        flat = (yi * w + xi).reshape(n, 1, k * ho * wo)
        g = np.take_along_axis(xd, np.broadcast_to(flat, (n, c, k * ho * wo)), axis=2)
        return g.reshape(n, c, k, ho, wo)

    g00 = corner(y0, x0)
    g01 = corner(y0, x1)
    g10 = corner(y1, x0)
    g11 = corner(y1, x1)
    wxe = wx[:, None]
    wye = wy[:, None]
    out = (
        (1 - wye) * ((1 - wxe) * g00 + wxe * g01)
        + wye * ((1 - wxe) * g10 + wxe * g11)
    ).astype(x.data.dtype)

    requires = x.requires_grad or positions.requires_grad

    def backward(g):
        if x.requires_grad:
            dx = np.zeros((n, c, h * w), dtype=x.data.dtype)
            gflat = g.reshape(n, c, k * ho * wo)
            for yi, xi, wgt in (
                (y0, x0, (1 - wy) * (1 - wx)),
                (y0, x1, (1 - wy) * wx),
                (y1, x0, wy * (1 - wx)),
                (y1, x1, wy * wx),
            ):
                flat = (yi * w + xi).reshape(n, 1, k * ho * wo)
                np.add.at(
                    dx,
                    (ni.reshape(n, 1, 1), np.arange(c).reshape(1, c, 1), flat),
                    gflat * wgt.reshape(n, 1, k * ho * wo),
                )
            x.accumulate_grad(dx.reshape(n, c, h, w))
        if positions.requires_grad:
            dpx = ((1 - wye) * (g01 - g00) + wye * (g11 - g10)) * g
            dpy = ((1 - wxe) * (g10 - g00) + wxe * (g11 - g01)) * g
            dpos = np.stack([dpx.sum(axis=1), dpy.sum(axis=1)], axis=2)
            positions.accumulate_grad(dpos.astype(positions.data.dtype))

    return Tensor.from_op(out, (x, positions), backward, requires)


_PERMUTE = {
    SnakeAxis.X: ((0, 1, 2, 3, 4), (0, 1, 2, 3, 4)),
    SnakeAxis.Y: ((0, 1, 3, 2, 4), (0, 1, 3, 2, 4)),
    SnakeAxis.SPECTRAL: ((0, 2, 3, 1, 4), (0, 3, 1, 2, 4)),
}


def _snake_apply(x_std: Tensor, q_std: Tensor, kernel: Tensor, shifts, lat_offsets) -> Tensor:
    """Gather polyline taps from x_std [N,U,P,Q,C] and mix with kernel
    [K, C, lat, cells]. q_std [N,U,P,Q,cells] is the accumulated
    perpendicular displacement per cell."""
    n, u, p, qn, c = x_std.data.shape
    cells, lat, cin, kout = kernel.data.shape
    if cin != c:
        raise ShapeError(f"snake kernel expects {cin} input channels, feature map has {c}")
    s = kernels.snake_gather(x_std.data, q_std.data, shifts, lat_offsets)
    wmat = np.ascontiguousarray(kernel.data.transpose(1, 0, 2, 3)).reshape(lat * cells * c, kout)
    out = (s.reshape(-1, lat * cells * c) @ wmat).reshape(n, u, p, qn, kout)
    requires = x_std.requires_grad or q_std.requires_grad or kernel.requires_grad

    def backward(g):
        g2 = g.reshape(-1, kout)
        if kernel.requires_grad:
            s_back = kernels.snake_gather(x_std.data, q_std.data, shifts, lat_offsets)
            dwmat = s_back.reshape(-1, lat * cells * c).T @ g2
            kernel.accumulate_grad(
                dwmat.reshape(lat, cells, c, kout).transpose(1, 0, 2, 3)
            )
        if x_std.requires_grad or q_std.requires_grad:
            ds = (g2 @ wmat.T).reshape(n, u, p, qn, lat, cells, c)
            dx, dq = kernels.snake_scatter(ds, x_std.data, q_std.data, shifts, lat_offsets)
            if x_std.requires_grad:
                x_std.accumulate_grad(dx)
            if q_std.requires_grad:
                q_std.accumulate_grad(dq)

    return Tensor.from_op(out, (x_std, q_std, kernel), backward, requires)


class SnakeConvLayer:
    """One snake convolution: offset predictor, position accumulation,
    interpolated sampling, and weighted aggregation. Stride 1, output keeps
    the input's spatial extents."""

    def __init__(self, spec: SnakeKernelSpec, rng=None, volumetric=False, lateral_extent=None,
                 enable_offsets=True, dtype=np.float32):
        if spec.axis is SnakeAxis.SPECTRAL and not volumetric:
            raise ShapeError("spectral-axis snake kernels need volumetric input")
        if lateral_extent is None:
            lateral_extent = 3 if (volumetric and spec.axis is not SnakeAxis.SPECTRAL) else 1
        if lateral_extent not in (1, 3):
            raise ShapeError(f"lateral extent must be 1 or 3, got {lateral_extent}")
        self.spec = spec
        self.volumetric = volumetric
        self.lateral_extent = lateral_extent
        self.enable_offsets = enable_offsets
        rng = rng or np.random.default_rng(0)
        fan_in = spec.in_channels * lateral_extent * spec.length
        # cells leading: kernel[cell, lat, cin, cout]
        self.kernel = he_init(rng, (spec.length, lateral_extent, spec.in_channels, spec.out_channels), fan_in, dtype)
        pk = (3, 3, 3) if volumetric else (1, 3, 3)
        self._pred_ksize = pk
        if enable_offsets:
            self.offset_w = Tensor(
                np.zeros((spec.length - 1, spec.in_channels) + pk, dtype=dtype), requires_grad=True
            )
            self.offset_b = Tensor(np.zeros(spec.length - 1, dtype=dtype), requires_grad=True)
        else:
            self.offset_w = None
            self.offset_b = None
        self._shifts = np.arange(-spec.half, spec.half + 1, dtype=np.int64)
        if lateral_extent == 3:
            self._lat = np.array([-1, 0, 1], dtype=np.int64)
        else:
            self._lat = np.array([0], dtype=np.int64)

    def config_key(self):
        return ("snake", self.spec.axis.value, self.spec.length, self.lateral_extent, self.enable_offsets)

    @property
    def out_channels(self):
        return self.spec.out_channels

    def parameters(self):
        out = [("kernel", self.kernel)]
        if self.enable_offsets:
            out += [("offset_w", self.offset_w), ("offset_b", self.offset_b)]
        return out

    def _check_channels(self, c):
        if c != self.spec.in_channels:
            raise ShapeError(
                f"snake conv expects {self.spec.in_channels} input channels, got {c}"
            )

    def _offsets_cl(self, x5):
        """tanh-squashed offsets, channels-last [N, D, H, W, length-1]."""
        pad = tuple(k // 2 for k in self._pred_ksize)
        raw = conv3d_cl(x5, self.offset_w, bias=self.offset_b, stride=1, padding=pad)
        return raw.tanh()

    def forward_cl(self, x5: Tensor, delta: Tensor = None) -> Tensor:
        """x5 is channels-last [N, D, H, W, C] (D may be 1 for planar input).

        delta, when given, is a precomputed [N, D, H, W, length-1] offset
        field (already squashed); otherwise the layer's own predictor runs.
        """
        self._check_channels(x5.data.shape[-1])
        n, d, h, w, _ = x5.data.shape
        cells = self.spec.length
        if delta is None and self.enable_offsets:
            delta = self._offsets_cl(x5)  # [N,D,H,W,L-1]
        if delta is not None:
            q = _split_cum_cl(delta, self.spec.half)
        else:
            q = Tensor(np.zeros((n, d, h, w, cells), dtype=x5.data.dtype))
        fwd_perm, inv_perm = _PERMUTE[self.spec.axis]
        x_std = x5.transpose(fwd_perm) if fwd_perm != (0, 1, 2, 3, 4) else x5
        q_std = q.transpose(fwd_perm) if fwd_perm != (0, 1, 2, 3, 4) else q
        out_std = _snake_apply(x_std, q_std, self.kernel, self._shifts, self._lat)
        out = out_std.transpose(inv_perm) if inv_perm != (0, 1, 2, 3, 4) else out_std
        return out

    def forward(self, x: Tensor) -> Tensor:
        """x is [N, C, H, W] for planar layers, [N, C, D, H, W] for volumetric."""
        if self.volumetric:
            if x.data.ndim != 5:
                raise ShapeError(f"volumetric snake conv expects 5-d input, got {x.data.shape}")
            x5 = x.moveaxis(1, -1)
            return self.forward_cl(x5).moveaxis(-1, 1)
        if x.data.ndim != 4:
            raise ShapeError(f"planar snake conv expects 4-d input, got {x.data.shape}")
        x5 = x.moveaxis(1, -1).reshape(x.shape[0], 1, x.shape[2], x.shape[3], x.shape[1])
        out = self.forward_cl(x5)
        return out.reshape(x.shape[0], x.shape[2], x.shape[3], self.spec.out_channels).moveaxis(-1, 1)

    __call__ = forward


def _split_cum_cl(delta: Tensor, half: int) -> Tensor:
    """Channels-last variant of the accumulation: [N,D,H,W,L-1] -> [N,D,H,W,L]."""
    minus = delta[..., :half]
    plus = delta[..., half:]
    cum_minus = minus.cumsum(axis=-1).flip(axis=-1)
    cum_plus = plus.cumsum(axis=-1)
    zeros = Tensor(np.zeros(delta.shape[:-1] + (1,), dtype=delta.dtype))
    return Tensor.cat([cum_minus, zeros, cum_plus], axis=-1)


def predict_offsets(x: Tensor, layer: SnakeConvLayer) -> OffsetField:
    """Run the layer's offset predictor; returns offsets shaped
    [N, length-1, *spatial] with every entry squashed into [-1, 1]."""
    if not layer.enable_offsets:
        raise ShapeError("layer was built with offsets disabled")
    if layer.volumetric:
        if x.data.ndim != 5:
            raise ShapeError(f"expected 5-d input, got {x.data.shape}")
        layer._check_channels(x.data.shape[1])
        x5 = x.moveaxis(1, -1)
        delta = layer._offsets_cl(x5).moveaxis(-1, 1)
    else:
        if x.data.ndim != 4:
            raise ShapeError(f"expected 4-d input, got {x.data.shape}")
        layer._check_channels(x.data.shape[1])
        x5 = x.moveaxis(1, -1).reshape(x.shape[0], 1, x.shape[2], x.shape[3], x.shape[1])
        delta = layer._offsets_cl(x5)
        delta = delta.reshape(x.shape[0], x.shape[2], x.shape[3], layer.spec.length - 1).moveaxis(-1, 1)
    return OffsetField(delta=delta, length=layer.spec.length)


def snake_conv_forward(x: Tensor, layer: SnakeConvLayer) -> Tensor:
    return layer.forward(x)


def snake_conv_backward(output: Tensor, upstream=None):
    """Propagate gradients from a snake-conv output back to the feature map,
    kernel weights, and offset predictor (chain rule over the tape)."""
    if upstream is None:
        output.sum().backward()
    else:
        output.backward(np.asarray(upstream, dtype=output.data.dtype))

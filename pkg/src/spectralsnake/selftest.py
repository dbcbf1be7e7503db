"""Quick self-verification: gradient checks and oracle comparisons.

Run via `spectralsnake selftest`. Prints one line per check; returns True
when everything passes.
"""

from __future__ import annotations

import numpy as np

from . import fusion, metrics
from .gradcheck import grad_check
from .nn import BatchNorm, avg_pool3d, batch_norm, conv3d, linear, softmax_cross_entropy
from .reference import naive_conv3d, reference_snake_conv
from .snake import SnakeAxis, SnakeConvLayer, SnakeKernelSpec
from .tensor import Tensor


def _check(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}{(' ' + detail) if detail else ''}")
    return bool(ok)


def _snake_layer(rng, axis=SnakeAxis.X, length=5, cin=2, cout=2, volumetric=False):
    layer = SnakeConvLayer(
        SnakeKernelSpec(in_channels=cin, out_channels=cout, length=length, axis=axis),
        rng=rng,
        volumetric=volumetric,
    )
    # keep predictor active but mild so positions stay off integer kinks
    layer.offset_w.data[:] = rng.standard_normal(layer.offset_w.data.shape) * 0.2
    layer.offset_b.data[:] = 0.25
    return layer


def run_selftest():
    rng = np.random.default_rng(2024)
    ok = True

    r = grad_check(lambda t: t.relu().sum(), rng.standard_normal((3, 4)), tol=1e-3)
    ok &= _check("grad relu", r.passed, str(r))

    w = rng.standard_normal((2, 3, 2, 2, 2))
    r = grad_check(
        lambda t: conv3d(t, Tensor(w, dtype=np.float64), padding=1).sum(),
        rng.standard_normal((1, 3, 3, 3, 3)),
        tol=1e-3,
    )
    ok &= _check("grad conv3d", r.passed, str(r))

    r = grad_check(
        lambda t: avg_pool3d(t, 2).sum(), rng.standard_normal((1, 2, 4, 4, 4)), tol=1e-3
    )
    ok &= _check("grad avg_pool3d", r.passed, str(r))

    def bn_loss(t):
        state = BatchNorm(3, dtype=np.float64)
        return (batch_norm(t, state, train=True) ** 2).sum()

    r = grad_check(bn_loss, rng.standard_normal((4, 3, 2, 2, 2)), tol=1e-3)
    ok &= _check("grad batch_norm", r.passed, str(r))

    wl = rng.standard_normal((5, 3))
    labels = np.array([0, 2, 1])
    r = grad_check(
        lambda t: softmax_cross_entropy(linear(t, Tensor(wl, dtype=np.float64)), labels),
        rng.standard_normal((3, 5)),
        tol=1e-3,
    )
    ok &= _check("grad linear+cross_entropy", r.passed, str(r))

    layer = _snake_layer(np.random.default_rng(7))

    def snake_loss(t):
        layer64 = _snake_layer(np.random.default_rng(7))
        layer64.kernel.data = layer64.kernel.data.astype(np.float64)
        layer64.offset_w.data = layer64.offset_w.data.astype(np.float64)
        layer64.offset_b.data = layer64.offset_b.data.astype(np.float64)
        return (layer64(t) ** 2).sum()

    r = grad_check(snake_loss, rng.standard_normal((1, 2, 5, 5)) , tol=1e-2)
    ok &= _check("grad snake_conv", r.passed, str(r))

    # conv oracle
    x = rng.standard_normal((2, 4, 3, 4, 4)).astype(np.float32)
    wv = (rng.standard_normal((4, 2, 2, 2, 2)) * 0.3).astype(np.float32)
    got = conv3d(Tensor(x), Tensor(wv), stride=1, padding=1, groups=2).data
    want = naive_conv3d(x, wv, stride=1, padding=1, groups=2)
    err = float(np.abs(got - want).max())
    ok &= _check("oracle conv3d", err < 1e-4, f"max_err={err:.2e}")

    # snake oracle, planar and volumetric
    for axis, volumetric in ((SnakeAxis.X, False), (SnakeAxis.Y, False),
                             (SnakeAxis.X, True), (SnakeAxis.SPECTRAL, True)):
        layer = _snake_layer(np.random.default_rng(11), axis=axis, volumetric=volumetric)
        shape = (1, 2, 4, 6, 6) if volumetric else (1, 2, 6, 6)
        xs = rng.standard_normal(shape).astype(np.float32)
        got = layer(Tensor(xs)).data
        want = reference_snake_conv(xs, layer)
        err = float(np.abs(got - want).max())
        ok &= _check(f"oracle snake_conv {axis.value} vol={volumetric}", err < 1e-5,
                     f"max_err={err:.2e}")

    # zero-offset equivalence
    layer = SnakeConvLayer(
        SnakeKernelSpec(in_channels=2, out_channels=2, length=5, axis=SnakeAxis.X),
        rng=np.random.default_rng(3),
    )
    xs = rng.standard_normal((1, 2, 5, 7)).astype(np.float32)
    got = layer(Tensor(xs)).data
    want = reference_snake_conv(xs, layer)
    err = float(np.abs(got - want).max())
    ok &= _check("zero-offset equivalence", err < 1e-5, f"max_err={err:.2e}")

    # fusion retention counts
    cfg = fusion.FusionConfig(m=4, p=0.5, seed=0)
    ts = fusion.TemplateSet([Tensor(np.full((2, 2), float(i))) for i in range(4)])
    frng = np.random.default_rng(0)
    counts = np.zeros(4)
    for _ in range(2000):
        keep = fusion.sample_retained(cfg, frng)
        counts[keep] += 1
    freq = counts / 2000
    ok &= _check("fusion retention", bool(np.all(np.abs(freq - 0.5) < 0.05)),
                 f"freq={np.round(freq, 3)}")

    cm = metrics.ConfusionMatrix(2)
    cm.counts[:] = [[2, 1], [0, 1]]
    ok &= _check(
        "metrics hand case",
        abs(metrics.oa(cm) - 0.75) < 1e-12
        and abs(metrics.aa(cm) - 5.0 / 6.0) < 1e-12
        and abs(metrics.kappa(cm) - 0.5) < 1e-12,
    )

    print("selftest:", "all checks passed" if ok else "FAILURES above")
    return ok

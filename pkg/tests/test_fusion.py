from itertools import combinations

import numpy as np
import pytest

from spectralsnake import (
    FusionConfig,
    ShapeError,
    SnakeAxis,
    SnakeConvLayer,
    SnakeKernelSpec,
    TemplateSet,
    Tensor,
    build_templates,
    fuse_eval,
    fuse_train,
)
from spectralsnake.fusion import fuse_train_lazy, sample_retained


def const_templates(values, shape=(2, 3)):
    return TemplateSet([Tensor(np.full(shape, float(v), dtype=np.float32)) for v in values])


class TestFusionConfig:
    def test_rejects_zero_keep(self):
        with pytest.raises(ShapeError, match="zero"):
            FusionConfig(m=3, p=0.1)

    def test_rejects_bad_p(self):
        with pytest.raises(ShapeError, match="probability"):
            FusionConfig(m=4, p=1.5)

    def test_kept_count(self):
        assert FusionConfig(m=4, p=0.5).kept == 2
        assert FusionConfig(m=4, p=1.0).kept == 4
        assert FusionConfig(m=5, p=0.5).kept == 2


class TestBuildTemplates:
    def layers(self, cin=2, cout=2, length=5):
        mk = lambda axis, vol: SnakeConvLayer(
            SnakeKernelSpec(in_channels=cin, out_channels=cout, length=length, axis=axis),
            rng=np.random.default_rng(hash(axis.value) % 1000),
            volumetric=vol,
        )
        straight = SnakeConvLayer(
            SnakeKernelSpec(in_channels=cin, out_channels=cout, length=length, axis=SnakeAxis.X),
            rng=np.random.default_rng(99),
            volumetric=True,
            enable_offsets=False,
        )
        return [mk(SnakeAxis.X, True), mk(SnakeAxis.Y, True), mk(SnakeAxis.SPECTRAL, True), straight]

    def test_single_template(self, rng):
        layer = SnakeConvLayer(
            SnakeKernelSpec(in_channels=2, out_channels=2, length=5), rng=rng
        )
        x = Tensor(np.random.default_rng(0).standard_normal((1, 2, 5, 5)).astype(np.float32))
        ts = build_templates(x, [layer])
        assert ts.m == 1
        assert np.array_equal(ts.templates[0].data, layer(x).data)

    def test_zero_weights_give_zero_templates(self, rng):
        layers = self.layers()
        for l in layers:
            l.kernel.data[:] = 0.0
        x = Tensor(np.random.default_rng(1).standard_normal((1, 2, 4, 5, 5)).astype(np.float32))
        ts = build_templates(x, layers)
        for t in ts.templates:
            assert np.abs(t.data).max() == 0.0

    def test_each_template_is_its_layer_applied_independently(self):
        layers = self.layers()
        x = Tensor(np.random.default_rng(2).standard_normal((1, 2, 4, 5, 5)).astype(np.float32))
        ts = build_templates(x, layers)
        assert ts.m == 4
        for layer, t in zip(layers, ts.templates):
            assert np.array_equal(t.data, layer(x).data)

    def test_duplicate_configurations_rejected(self):
        layers = self.layers()
        dup = [layers[0], layers[0], layers[2], layers[3]]
        x = Tensor(np.zeros((1, 2, 4, 5, 5), dtype=np.float32))
        with pytest.raises(ShapeError, match="distinct"):
            build_templates(x, dup)

    def test_inconsistent_shapes_rejected(self):
        with pytest.raises(ShapeError, match="shape"):
            TemplateSet([Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3)))])


class TestFuseTrain:
    def test_p_one_keeps_everything(self, rng):
        ts = const_templates([1, 2, 3, 4])
        out = fuse_train(ts, FusionConfig(m=4, p=1.0), np.random.default_rng(0))
        assert np.allclose(out.data, 10.0)

    def test_exact_subset_size(self):
        ts = const_templates([1, 10, 100, 1000])
        cfg = FusionConfig(m=4, p=0.5)
        sums = {float(fuse_train(ts, cfg, np.random.default_rng(s)).data.reshape(-1)[0])
                for s in range(50)}
        valid = {float(a + b) for a, b in combinations([1, 10, 100, 1000], 2)}
        assert sums <= valid
        assert len(sums) > 1

    def test_retention_frequency(self):
        cfg = FusionConfig(m=4, p=0.5)
        rng = np.random.default_rng(7)
        counts = np.zeros(4)
        draws = 10000
        for _ in range(draws):
            counts[sample_retained(cfg, rng)] += 1
        freq = counts / draws
        assert np.abs(freq - 0.5).max() < 0.02

    def test_expectation_matches_eval(self):
        ts = const_templates([1, 2, 3, 4], shape=(2, 2))
        cfg = FusionConfig(m=4, p=0.5)
        rng = np.random.default_rng(3)
        acc = np.zeros((2, 2))
        draws = 10000
        for _ in range(draws):
            acc += fuse_train(ts, cfg, rng).data
        mean = acc / draws
        ref = fuse_eval(ts, cfg).data
        assert np.abs(mean - ref).max() / np.abs(ref).max() < 0.02

    def test_gradient_only_through_retained(self):
        leaves = [Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True) for _ in range(4)]
        ts = TemplateSet([l * 2.0 for l in leaves])
        cfg = FusionConfig(m=4, p=0.5)
        rng = np.random.default_rng(11)
        keep = set(sample_retained(cfg, np.random.default_rng(11)).tolist())
        out = fuse_train(ts, cfg, rng)
        out.sum().backward()
        for i, leaf in enumerate(leaves):
            if i in keep:
                assert leaf.grad is not None and np.all(leaf.grad == 2.0)
            else:
                assert leaf.grad is None or np.all(leaf.grad == 0.0)

    def test_lazy_variant_skips_dropped_builders(self):
        cfg = FusionConfig(m=4, p=0.5)
        calls = []

        def builder(i):
            def run():
                calls.append(i)
                return Tensor(np.full((1,), float(i)))

            return run

        out = fuse_train_lazy([builder(i) for i in range(4)], cfg, np.random.default_rng(5))
        assert len(calls) == 2
        assert float(out.data[0]) == sum(calls)


class TestFuseEval:
    def test_p_one_matches_train(self):
        ts = const_templates([1, 2, 3])
        cfg = FusionConfig(m=3, p=1.0)
        a = fuse_train(ts, cfg, np.random.default_rng(0)).data
        b = fuse_eval(ts, cfg).data
        assert np.array_equal(a, b)

    def test_two_identical_templates_halved(self):
        t = np.random.default_rng(0).standard_normal((3, 3)).astype(np.float32)
        ts = TemplateSet([Tensor(t.copy()), Tensor(t.copy())])
        out = fuse_eval(ts, FusionConfig(m=2, p=0.5))
        assert np.abs(out.data - t).max() < 1e-6

    def test_deterministic_and_permutation_invariant(self):
        vals = [1.5, -2.0, 0.25, 4.0]
        cfg = FusionConfig(m=4, p=0.5)
        base = fuse_eval(const_templates(vals), cfg).data
        again = fuse_eval(const_templates(vals), cfg).data
        perm = fuse_eval(const_templates(vals[::-1]), cfg).data
        assert np.array_equal(base, again)
        assert np.allclose(base, perm)

"""Multi-view template fusion.

A template set holds m feature maps produced by morphologically distinct
kernels over the same input. During training a uniformly random subset of
exactly floor(m*p) templates is summed (dropped templates get no gradient);
at evaluation time the deterministic expectation p * sum(all templates) is
used instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class FusionConfig:
    m: int = 4
    p: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ShapeError(f"fusion probability must be in (0, 1], got {self.p}")
        if self.m < 1:
            raise ShapeError(f"fusion needs at least one template, got m={self.m}")
        if self.kept == 0:
            raise ShapeError(
                f"floor(m*p) = floor({self.m}*{self.p}) is zero; fusion would emit nothing"
            )

    @property
    def kept(self):
        return math.floor(self.m * self.p)

    def to_dict(self):
        return {"m": self.m, "p": self.p, "seed": self.seed}

    @staticmethod
    def from_dict(d):
        return FusionConfig(m=int(d["m"]), p=float(d["p"]), seed=int(d.get("seed", 0)))


class TemplateSet:
    """m same-shaped feature maps awaiting fusion."""

    def __init__(self, templates):
        self.templates = list(templates)
        if not self.templates:
            raise ShapeError("template set cannot be empty")
        shape = self.templates[0].shape
        for i, t in enumerate(self.templates):
            if t.shape != shape:
                raise ShapeError(
                    f"template {i} has shape {t.shape}, expected {shape} like template 0"
                )

    @property
    def m(self):
        return len(self.templates)


def build_templates(x: Tensor, layers) -> TemplateSet:
    """Apply each kernel template to x independently.

    Layers must have pairwise distinct configurations (axis / length / kind)
    and agree on the input channel count; their outputs must share one shape.
    """
    keys = [layer.config_key() for layer in layers]
    if len(set(keys)) != len(keys):
        raise ShapeError(f"template layers must have distinct configurations, got {keys}")
    return TemplateSet([layer(x) for layer in layers])


def sample_retained(cfg: FusionConfig, rng) -> np.ndarray:
    """Indices of the exactly floor(m*p) templates kept for one forward pass."""
    return np.sort(rng.choice(cfg.m, size=cfg.kept, replace=False))


def _sum(tensors):
    out = tensors[0]
    for t in tensors[1:]:
        out = out + t
    return out


def fuse_train(ts: TemplateSet, cfg: FusionConfig, rng) -> Tensor:
    """Sum a uniformly random size-floor(m*p) subset of the templates."""
    if ts.m != cfg.m:
        raise ShapeError(f"template set has {ts.m} entries, fusion config expects {cfg.m}")
    keep = sample_retained(cfg, rng)
    return _sum([ts.templates[i] for i in keep])


def fuse_train_lazy(builders, cfg: FusionConfig, rng) -> Tensor:
    """fuse_train without materializing dropped templates: builders is a list
    of m zero-argument callables, and only the retained ones are invoked."""
    if len(builders) != cfg.m:
        raise ShapeError(f"{len(builders)} template builders, fusion config expects {cfg.m}")
    keep = sample_retained(cfg, rng)
    return _sum([builders[i]() for i in keep])


def fuse_eval(ts: TemplateSet, cfg: FusionConfig) -> Tensor:
    """Deterministic test-time fusion: p times the sum of all templates."""
    if ts.m != cfg.m:
        raise ShapeError(f"template set has {ts.m} entries, fusion config expects {cfg.m}")
    return _sum(ts.templates) * cfg.p

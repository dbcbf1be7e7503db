"""Fully dense 3-d classification network built from snake-conv fusion layers.

Every dense layer (and every transition) consumes the channel-concatenation
of ALL preceding node outputs, with higher-resolution sources average-pooled
down to the consumer's resolution. Growth rate doubles per stage. A
transition compresses the accumulated channels with a 1x1x1 convolution and
downsamples; its output joins the feature pool like any other node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .fusion import FusionConfig, TemplateSet, fuse_eval, sample_retained
from .nn import BatchNorm, avg_pool3d_cl, batch_norm_cl, conv3d_cl, he_init, linear
from .snake import SnakeAxis, SnakeConvLayer, SnakeKernelSpec
from .tensor import ShapeError, Tensor


class ConfigError(ValueError):
    """Invalid network configuration; the message names the failing constraint."""


@dataclass
class NetworkConfig:
    num_classes: int
    input_patch: tuple  # (M, N, L): spatial rows, spatial cols, bands
    stage_blocks: tuple = (4, 6, 8)
    k0: int = 8
    groups: int = 4
    compression: int = 16
    fusion: FusionConfig = field(default_factory=FusionConfig)
    snake_length: int = 9
    bottleneck_factor: int = 2
    stem_channels: int = 16
    stem_kernel: tuple = (7, 3, 3)
    stem_stride: tuple = (4, 2, 2)
    seed: int = 0

    @property
    def growth_rates(self):
        return tuple(self.k0 * 2 ** i for i in range(len(self.stage_blocks)))

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "input_patch": list(self.input_patch),
            "stage_blocks": list(self.stage_blocks),
            "k0": self.k0,
            "groups": self.groups,
            "compression": self.compression,
            "fusion": self.fusion.to_dict(),
            "snake_length": self.snake_length,
            "bottleneck_factor": self.bottleneck_factor,
            "stem_channels": self.stem_channels,
            "stem_kernel": list(self.stem_kernel),
            "stem_stride": list(self.stem_stride),
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d):
        return NetworkConfig(
            num_classes=int(d["num_classes"]),
            input_patch=tuple(d["input_patch"]),
            stage_blocks=tuple(d["stage_blocks"]),
            k0=int(d["k0"]),
            groups=int(d["groups"]),
            compression=int(d["compression"]),
            fusion=FusionConfig.from_dict(d["fusion"]),
            snake_length=int(d["snake_length"]),
            bottleneck_factor=int(d["bottleneck_factor"]),
            stem_channels=int(d["stem_channels"]),
            stem_kernel=tuple(d["stem_kernel"]),
            stem_stride=tuple(d["stem_stride"]),
            seed=int(d["seed"]),
        )


class StraightConvTemplate:
    """Axis-aligned grouped 3x3x3 kernel; the zero-offset member of the roster."""

    def __init__(self, in_channels, out_channels, groups, rng, dtype=np.float32):
        if in_channels % groups:
            raise ConfigError(
                f"straight template: {in_channels} input channels not divisible by groups {groups}"
            )
        self.groups = groups
        self.out_channels = out_channels
        fan_in = in_channels // groups * 27
        self.weight = he_init(rng, (out_channels, in_channels // groups, 3, 3, 3), fan_in, dtype)

    def config_key(self):
        return ("straight", 3, self.groups)

    def parameters(self):
        return [("weight", self.weight)]

    def forward_cl(self, x5):
        return conv3d_cl(x5, self.weight, stride=1, padding=1, groups=self.groups)


class DenseLayer:
    """norm -> relu -> grouped 1x1x1 bottleneck -> multi-view snake fusion."""

    def __init__(self, in_channels, growth, cfg: NetworkConfig, rng):
        if in_channels % cfg.groups:
            raise ConfigError(
                f"dense layer input channels {in_channels} not divisible by groups {cfg.groups}"
            )
        b = cfg.bottleneck_factor * growth
        if b % cfg.groups:
            raise ConfigError(
                f"bottleneck width {b} not divisible by groups {cfg.groups}"
            )
        self.bn = BatchNorm(in_channels)
        self.bott_w = he_init(
            rng, (b, in_channels // cfg.groups, 1, 1, 1), in_channels // cfg.groups
        )
        self.groups = cfg.groups
        self.fusion_cfg = cfg.fusion
        mk = lambda axis: SnakeConvLayer(
            SnakeKernelSpec(in_channels=b, out_channels=growth, length=cfg.snake_length, axis=axis),
            rng=rng,
            volumetric=True,
        )
        roster = [mk(SnakeAxis.X), mk(SnakeAxis.Y), mk(SnakeAxis.SPECTRAL)]
        roster.append(StraightConvTemplate(b, growth, cfg.groups, rng))
        if cfg.fusion.m != len(roster):
            raise ConfigError(
                f"fusion expects m={cfg.fusion.m} templates but the roster has {len(roster)}"
            )
        self.templates = roster
        self.out_channels = growth

    def parameters(self):
        out = [("bn.gamma", self.bn.gamma), ("bn.beta", self.bn.beta), ("bottleneck", self.bott_w)]
        for i, t in enumerate(self.templates):
            for name, p in t.parameters():
                out.append((f"template{i}.{name}", p))
        return out

    def buffers(self):
        return [("bn.running_mean", self.bn.running_mean), ("bn.running_var", self.bn.running_var)]

    def _apply_templates(self, hb, keep):
        """Run the kept templates, sharing a single merged offset-predictor
        convolution across every snake template in the subset."""
        snakes = [i for i in keep if isinstance(self.templates[i], SnakeConvLayer)]
        deltas = {}
        if snakes:
            w_cat = Tensor.cat([self.templates[i].offset_w for i in snakes], axis=0)
            b_cat = Tensor.cat([self.templates[i].offset_b for i in snakes], axis=0)
            pad = tuple(k // 2 for k in self.templates[snakes[0]]._pred_ksize)
            raw = conv3d_cl(hb, w_cat, bias=b_cat, stride=1, padding=pad).tanh()
            lo = 0
            for i in snakes:
                steps = self.templates[i].spec.length - 1
                deltas[i] = raw[..., lo : lo + steps]
                lo += steps
        outs = []
        for i in keep:
            t = self.templates[i]
            if isinstance(t, SnakeConvLayer):
                outs.append(t.forward_cl(hb, delta=deltas[i]))
            else:
                outs.append(t.forward_cl(hb))
        return outs

    def forward_cl(self, s, train, rng):
        h = batch_norm_cl(s, self.bn, train).relu()
        hb = conv3d_cl(h, self.bott_w, stride=1, padding=0, groups=self.groups)
        if train:
            keep = sample_retained(self.fusion_cfg, rng)
            outs = self._apply_templates(hb, list(keep))
            total = outs[0]
            for o in outs[1:]:
                total = total + o
            return total
        outs = self._apply_templates(hb, list(range(len(self.templates))))
        return fuse_eval(TemplateSet(outs), self.fusion_cfg)


class Transition:
    """Compress the accumulated channels, then average-pool down one level."""

    def __init__(self, in_channels, out_channels, window, rng):
        self.bn = BatchNorm(in_channels)
        self.conv_w = he_init(rng, (out_channels, in_channels, 1, 1, 1), in_channels)
        self.window = window
        self.out_channels = out_channels

    def parameters(self):
        return [("bn.gamma", self.bn.gamma), ("bn.beta", self.bn.beta), ("conv", self.conv_w)]

    def buffers(self):
        return [("bn.running_mean", self.bn.running_mean), ("bn.running_var", self.bn.running_var)]

    def forward_cl(self, s, train):
        h = batch_norm_cl(s, self.bn, train).relu()
        h = conv3d_cl(h, self.conv_w)
        return avg_pool3d_cl(h, self.window)


class Head:
    def __init__(self, in_channels, num_classes, rng):
        self.bn = BatchNorm(in_channels)
        self.w = he_init(rng, (in_channels, num_classes), in_channels)
        self.b = Tensor(np.zeros(num_classes, dtype=np.float32), requires_grad=True)

    def parameters(self):
        return [("bn.gamma", self.bn.gamma), ("bn.beta", self.bn.beta), ("w", self.w), ("b", self.b)]

    def buffers(self):
        return [("bn.running_mean", self.bn.running_mean), ("bn.running_var", self.bn.running_var)]

    def forward_cl(self, s, train):
        h = batch_norm_cl(s, self.bn, train).relu()
        pooled = h.mean(axis=(1, 2, 3))
        return linear(pooled, self.w, self.b)


@dataclass
class Node:
    index: int
    kind: str  # "stem" | "dense" | "transition"
    level: int
    out_channels: int
    sources: list
    module: object = None


def _pool_window(shape):
    return tuple(2 if e >= 2 else 1 for e in shape)


def _pooled_shape(shape, window):
    return tuple((e - k) // k + 1 for e, k in zip(shape, window))


class ModelParams:
    """All layer parameters plus the structural graph that built them."""

    def __init__(self, config, stem_w, nodes, head, level_shapes):
        self.config = config
        self.stem_w = stem_w
        self.nodes = nodes
        self.head = head
        self.level_shapes = level_shapes

    def parameters(self):
        out = [("stem.w", self.stem_w)]
        for node in self.nodes:
            if node.module is None:
                continue
            tag = f"{node.kind}{node.index:02d}"
            for name, p in node.module.parameters():
                out.append((f"{tag}.{name}", p))
        for name, p in self.head.parameters():
            out.append((f"head.{name}", p))
        return out

    def buffers(self):
        out = []
        for node in self.nodes:
            if node.module is None or not hasattr(node.module, "buffers"):
                continue
            tag = f"{node.kind}{node.index:02d}"
            for name, b in node.module.buffers():
                out.append((f"{tag}.{name}", b))
        for name, b in self.head.buffers():
            out.append((f"head.{name}", b))
        return out


def build_model(cfg: NetworkConfig) -> ModelParams:
    """Deterministically construct the network for cfg (seeded init)."""
    if cfg.num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {cfg.num_classes}")
    if len(cfg.stage_blocks) < 1:
        raise ConfigError("need at least one stage")
    if cfg.compression < 1:
        raise ConfigError(f"compression must be >= 1, got {cfg.compression}")
    m, n_cols, bands = cfg.input_patch
    rng = np.random.default_rng(cfg.seed)

    # Stem: strided convolution from the raw 1-channel patch.
    kd, kh, kw = cfg.stem_kernel
    pad = (kd // 2, kh // 2, kw // 2)
    stem_shape = []
    for ext, k, s, p, name in zip((bands, m, n_cols), cfg.stem_kernel, cfg.stem_stride, pad, ("bands", "rows", "cols")):
        o = (ext + 2 * p - k) // s + 1
        if o < 1:
            raise ConfigError(f"stem kernel {k}/stride {s} leaves no {name} extent from {ext}")
        stem_shape.append(o)
    stem_w = he_init(rng, (cfg.stem_channels, 1, kd, kh, kw), kd * kh * kw)

    nodes = [Node(index=0, kind="stem", level=0, out_channels=cfg.stem_channels, sources=[])]
    level_shapes = [tuple(stem_shape)]
    c_total = cfg.stem_channels
    growths = cfg.growth_rates
    idx = 1
    for s_i, (blocks, growth) in enumerate(zip(cfg.stage_blocks, growths)):
        for _ in range(blocks):
            layer = DenseLayer(c_total, growth, cfg, rng)
            nodes.append(
                Node(index=idx, kind="dense", level=s_i, out_channels=growth,
                     sources=list(range(idx)), module=layer)
            )
            c_total += growth
            idx += 1
        if s_i + 1 < len(cfg.stage_blocks):
            window = _pool_window(level_shapes[-1])
            t_out = max(c_total // cfg.compression, growths[s_i + 1])
            trans = Transition(c_total, t_out, window, rng)
            nodes.append(
                Node(index=idx, kind="transition", level=s_i + 1, out_channels=t_out,
                     sources=list(range(idx)), module=trans)
            )
            level_shapes.append(_pooled_shape(level_shapes[-1], window))
            c_total += t_out
            idx += 1
    head = Head(c_total, cfg.num_classes, rng)
    return ModelParams(cfg, stem_w, nodes, head, level_shapes)


def forward(model: ModelParams, batch: Tensor, train_mode=False, fusion_rng=None) -> Tensor:
    """Logits for a batch of patches shaped [N, 1, L, M, Ncols]."""
    cfg = model.config
    m, n_cols, bands = cfg.input_patch
    if batch.data.ndim != 5 or batch.data.shape[1] != 1:
        raise ShapeError(f"expected batch [N,1,L,M,N], got {batch.data.shape}")
    if batch.data.shape[2:] != (bands, m, n_cols):
        raise ShapeError(
            f"batch patch extents {batch.data.shape[2:]} do not match config {(bands, m, n_cols)}"
        )
    if train_mode and fusion_rng is None:
        fusion_rng = np.random.default_rng(cfg.fusion.seed)
    pad = tuple(k // 2 for k in cfg.stem_kernel)
    x_cl = batch.moveaxis(1, -1)
    state = conv3d_cl(x_cl, model.stem_w, stride=cfg.stem_stride, padding=pad)
    for node in model.nodes:
        if node.kind == "stem":
            continue
        if node.kind == "dense":
            y = node.module.forward_cl(state, train_mode, fusion_rng)
            state = Tensor.cat([state, y], axis=-1)
        else:  # transition: pool everything accumulated so far, append its output
            t_out = node.module.forward_cl(state, train_mode)
            pooled = avg_pool3d_cl(state, node.module.window)
            state = Tensor.cat([pooled, t_out], axis=-1)
    return model.head.forward_cl(state, train_mode)


def count_params(model) -> int:
    """Exact number of trainable scalars (running statistics excluded)."""
    if isinstance(model, ModelParams):
        return int(sum(p.size for _, p in model.parameters()))
    total = 0
    for item in model:
        p = item[1] if isinstance(item, tuple) else item
        total += p.size
    return int(total)


# ---------------------------------------------------------------------------
# Checkpoint container: 8-byte little-endian header length, JSON header with
# a tensor index (name -> dtype/shape/offset) and the full network config,
# then raw little-endian float32 payloads.
# ---------------------------------------------------------------------------


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: ModelParams, path, train_config=None, extra=None):
    entries = list(model.parameters()) + [
        (name, Tensor(buf)) for name, buf in model.buffers()
    ]
    index = {}
    offset = 0
    blobs = []
    for name, t in entries:
        arr = np.ascontiguousarray(t.data.astype("<f4"))
        index[name] = {"dtype": "f32le", "shape": list(arr.shape), "offset": offset,
                       "nbytes": arr.nbytes}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": 1,
        "network": model.config.to_dict(),
        "train": train_config,
        "extra": extra,
        "tensors": index,
    }
    hjson = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(len(hjson).to_bytes(8, "little"))
        f.write(hjson)
        for b in blobs:
            f.write(b)


def load_checkpoint(path):
    """Rebuild the model from its config echo and restore every tensor."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise CheckpointError(f"checkpoint truncated: {len(raw)} bytes")
    hlen = int.from_bytes(raw[:8], "little")
    if len(raw) < 8 + hlen:
        raise CheckpointError(f"checkpoint header truncated: needs {hlen} bytes")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"checkpoint header is not valid JSON: {err}") from err
    if header.get("format_version") != 1:
        raise CheckpointError(f"unknown checkpoint version {header.get('format_version')}")
    payload = raw[8 + hlen :]
    cfg = NetworkConfig.from_dict(header["network"])
    model = build_model(cfg)
    index = header["tensors"]
    live = dict(model.parameters())
    buffers = dict(model.buffers())
    for name, meta in index.items():
        start, nbytes = meta["offset"], meta["nbytes"]
        if start + nbytes > len(payload):
            raise CheckpointError(f"tensor {name} extends past payload end")
        arr = np.frombuffer(payload[start : start + nbytes], dtype="<f4").reshape(meta["shape"])
        if name in live:
            if tuple(live[name].data.shape) != tuple(meta["shape"]):
                raise CheckpointError(
                    f"tensor {name} shape {meta['shape']} does not match model {live[name].data.shape}"
                )
            live[name].data[...] = arr
        elif name in buffers:
            buffers[name][...] = arr
        else:
            raise CheckpointError(f"checkpoint tensor {name} has no place in the model")
    missing = set(live) - set(index)
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {sorted(missing)[:5]}")
    return model, header

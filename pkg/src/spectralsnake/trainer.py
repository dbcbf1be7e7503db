"""End-to-end training, evaluation, and classification-map rendering."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import hsidata, metrics
from .hsidata import DataError, PatchSpec, SplitSpec
from .network import (
    CheckpointError,
    NetworkConfig,
    build_model,
    forward,
    load_checkpoint,
    save_checkpoint,
)
from .nn import softmax_cross_entropy
from .optim import AdamState, adam_step
from .tensor import Tensor, no_grad


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    data: str
    patch: int = 11
    split: SplitSpec = field(default_factory=SplitSpec)
    epochs: int = 80
    batch_size: int = 32
    lr: float = 1e-3
    early_stop_patience: int = 15
    seed: int = 0
    subsample_bands: int = 1  # keep every k-th band; 1 = full spectrum
    network: dict = field(default_factory=dict)  # NetworkConfig overrides

    def to_dict(self):
        return {
            "data": self.data,
            "patch": self.patch,
            "split": {"train": self.split.train, "val": self.split.val,
                      "test": self.split.test, "seed": self.split.seed},
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "early_stop_patience": self.early_stop_patience,
            "seed": self.seed,
            "subsample_bands": self.subsample_bands,
            "network": dict(self.network),
        }

    @staticmethod
    def from_dict(d):
        s = d.get("split", {})
        return TrainConfig(
            data=d["data"],
            patch=int(d.get("patch", 11)),
            split=SplitSpec(int(s.get("train", 6)), int(s.get("val", 1)),
                            int(s.get("test", 3)), seed=int(s.get("seed", 0))),
            epochs=int(d.get("epochs", 80)),
            batch_size=int(d.get("batch_size", 32)),
            lr=float(d.get("lr", 1e-3)),
            early_stop_patience=int(d.get("early_stop_patience", 15)),
            seed=int(d.get("seed", 0)),
            subsample_bands=int(d.get("subsample_bands", 1)),
            network=dict(d.get("network", {})),
        )


@dataclass
class TrainResult:
    checkpoint_path: str
    log: list
    best_epoch: int
    best_val_oa: float


def _prepare(cfg: TrainConfig, want_split=True):
    cube = hsidata.load_cube(cfg.data)
    if cfg.subsample_bands > 1:
        cube = hsidata.HsiCube(
            reflectance=np.ascontiguousarray(cube.reflectance[:, :, :: cfg.subsample_bands]),
            labels=cube.labels,
            class_names=cube.class_names,
        )
    cube = hsidata.normalize(cube)
    spec = PatchSpec(cfg.patch, cfg.patch, cube.bands)
    padded = hsidata.pad_edges(cube, spec.margin)
    patches = hsidata.extract_patches(padded, spec)
    splits = None
    if want_split:
        splits = hsidata.stratified_split(patches.labels, cfg.split, num_classes=cube.num_classes)
    return cube, padded, patches, splits


def _network_config(cfg: TrainConfig, cube) -> NetworkConfig:
    overrides = dict(cfg.network)
    fusion = overrides.pop("fusion", None)
    net = NetworkConfig(
        num_classes=cube.num_classes,
        input_patch=(cfg.patch, cfg.patch, cube.bands),
        seed=cfg.seed,
        **{k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()},
    )
    if fusion is not None:
        from .fusion import FusionConfig

        net.fusion = FusionConfig.from_dict(fusion) if isinstance(fusion, dict) else fusion
    return net


def _predict(model, patches, indices, batch_size):
    """Eval-mode class predictions (1-based) for the given patch indices."""
    preds = np.empty(len(indices), dtype=np.int64)
    with no_grad():
        for lo in range(0, len(indices), batch_size):
            chunk = indices[lo : lo + batch_size]
            x = Tensor(patches.gather(chunk)[:, None])
            logits = forward(model, x, train_mode=False)
            preds[lo : lo + len(chunk)] = logits.data.argmax(axis=1) + 1
    return preds


def _split_oa(model, patches, indices, batch_size):
    preds = _predict(model, patches, indices, batch_size)
    return float((preds == patches.labels[indices]).mean())


def train(cfg: TrainConfig, checkpoint_path, log_path=None) -> TrainResult:
    """Train per cfg, keep the best-validation-OA parameters, write checkpoint.

    Fully reproducible given cfg.seed: initialization, shuffling, and fusion
    sampling all derive from it.
    """
    cube, _, patches, (tr_idx, va_idx, _) = _prepare(cfg)
    net_cfg = _network_config(cfg, cube)
    model = build_model(net_cfg)
    params = [p for _, p in model.parameters()]
    opt = AdamState(params, lr=cfg.lr)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    fusion_rng = np.random.default_rng(seeds[1])

    log = []
    # Snapshot prefers the latest epoch among equal validation scores; the
    # early-stop counter resets only on strict improvement.
    best = {"epoch": -1, "val_oa": -1.0, "params": None, "buffers": None}
    last_strict_gain = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.time()
        order = shuffle_rng.permutation(len(tr_idx))
        loss_sum = 0.0
        correct = 0
        for bi, lo in enumerate(range(0, len(order), cfg.batch_size)):
            bidx = tr_idx[order[lo : lo + cfg.batch_size]]
            x = Tensor(patches.gather(bidx)[:, None])
            labels0 = patches.labels[bidx] - 1
            logits = forward(model, x, train_mode=True, fusion_rng=fusion_rng)
            loss = softmax_cross_entropy(logits, labels0)
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise TrainingDiverged(epoch, bi, lval)
            opt.zero_grad()
            loss.backward()
            adam_step(opt)
            loss_sum += lval * len(bidx)
            correct += int((logits.data.argmax(axis=1) == labels0).sum())
        val_oa = _split_oa(model, patches, va_idx, cfg.batch_size) if len(va_idx) else float("nan")
        entry = {
            "epoch": epoch,
            "train_loss": loss_sum / len(tr_idx),
            "train_oa": correct / len(tr_idx),
            "val_oa": val_oa,
            "seconds": round(time.time() - t0, 3),
        }
        log.append(entry)
        score = val_oa if len(va_idx) else entry["train_oa"]
        if score > best["val_oa"]:
            last_strict_gain = epoch
        if score >= best["val_oa"]:
            best.update(
                epoch=epoch,
                val_oa=score,
                params={n: p.data.copy() for n, p in model.parameters()},
                buffers={n: b.copy() for n, b in model.buffers()},
            )
        if epoch - last_strict_gain >= cfg.early_stop_patience:
            break
    if best["params"] is not None:
        for n, p in model.parameters():
            p.data[...] = best["params"][n]
        for n, b in model.buffers():
            b[...] = best["buffers"][n]
    save_checkpoint(
        model,
        checkpoint_path,
        train_config=cfg.to_dict(),
        extra={"best_epoch": best["epoch"], "best_val_oa": best["val_oa"]},
    )
    if log_path:
        with open(log_path, "w") as f:
            json.dump({"config": cfg.to_dict(), "epochs": log,
                       "best_epoch": best["epoch"], "best_val_oa": best["val_oa"]}, f, indent=1)
    return TrainResult(checkpoint_path=str(checkpoint_path), log=log,
                       best_epoch=best["epoch"], best_val_oa=best["val_oa"])


def _reload(ckpt_path, data=None, want_split=True):
    model, header = load_checkpoint(ckpt_path)
    if header.get("train") is None:
        raise CheckpointError("checkpoint lacks the training config echo")
    cfg = TrainConfig.from_dict(header["train"])
    if data is not None:
        cfg.data = data
    cube, _, patches, splits = _prepare(cfg, want_split=want_split)
    m, n_cols, bands = model.config.input_patch
    if cube.bands != bands:
        raise CheckpointError(
            f"dataset has {cube.bands} bands, checkpoint was trained on {bands}"
        )
    if cube.num_classes != model.config.num_classes:
        raise CheckpointError(
            f"dataset has {cube.num_classes} classes, checkpoint expects {model.config.num_classes}"
        )
    return model, cfg, cube, patches, splits


def evaluate(ckpt_path, split="test", data=None, batch_size=None) -> dict:
    """Metrics report over the requested split; deterministic."""
    model, cfg, cube, patches, splits = _reload(ckpt_path, data)
    names = {"train": 0, "val": 1, "test": 2}
    if split == "all":
        indices = np.arange(len(patches))
    elif split in names:
        indices = splits[names[split]]
    else:
        raise DataError(f"unknown split {split!r}; use train/val/test/all")
    bs = batch_size or cfg.batch_size
    preds = _predict(model, patches, indices, bs)
    cm = metrics.ConfusionMatrix(cube.num_classes)
    cm.accumulate_batch(patches.labels[indices], preds)
    return metrics.report(cm)


# Fixed rendering palette: index 0 (unlabeled) is black.
PALETTE = [
    (0, 0, 0), (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60),
    (250, 190, 212), (0, 128, 128), (220, 190, 255), (170, 110, 40), (255, 250, 200),
    (128, 0, 0), (170, 255, 195), (128, 128, 0), (255, 215, 180), (0, 0, 128),
    (128, 128, 128),
]


def write_ppm(path, rgb):
    """Binary portable pixmap (P6) writer for an [H, W, 3] uint8 raster."""
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def predict_map(ckpt_path, out_path, data=None, batch_size=None):
    """Classify every labeled pixel and render the class raster as a PPM.

    Unlabeled pixels come out black. Returns the [H, W] class raster.
    """
    model, cfg, cube, patches, _ = _reload(ckpt_path, data, want_split=False)
    bs = batch_size or cfg.batch_size
    raster = np.zeros((cube.height, cube.width), dtype=np.int64)
    if len(patches):
        preds = _predict(model, patches, np.arange(len(patches)), bs)
        margin = PatchSpec(cfg.patch, cfg.patch, cube.bands).margin
        rows = patches.centers[:, 0] - margin
        cols = patches.centers[:, 1] - margin
        raster[rows, cols] = preds
    pal = np.array(PALETTE, dtype=np.uint8)
    rgb = pal[raster % len(PALETTE)]
    write_ppm(out_path, rgb)
    return raster

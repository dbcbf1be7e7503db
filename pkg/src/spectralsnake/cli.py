"""Command-line interface.

Subcommands: train, eval, map, selftest. Exit codes: 0 success, 2 usage or
configuration, 3 data, 4 training divergence, 5 checkpoint mismatch,
70 internal error.
"""

from __future__ import annotations

import argparse
import enum
import json
import sys

import numpy as np


class ExitCode(enum.IntEnum):
    OK = 0
    USAGE = 2
    DATA = 3
    TRAINING = 4
    CHECKPOINT = 5
    INTERNAL = 70


def _build_parser():
    p = argparse.ArgumentParser(prog="spectralsnake",
                                description="Hyperspectral patch classifier with snake convolution")
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("train", help="train a model and write the best checkpoint")
    t.add_argument("--data", help="container directory (header.json/cube.f32/labels.u16)")
    t.add_argument("--patch", type=int, default=None, help="odd neighboring-block size (default 11)")
    t.add_argument("--split", default=None, help="train:val:test ratios, e.g. 6:1:3")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--patience", type=int, default=None, help="early-stop patience on validation OA")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--subsample-bands", type=int, default=None,
                   help="keep every k-th band (smoke runs only)")
    t.add_argument("--config", help="JSON file mirroring the train configuration")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--log", help="JSON training-log output path")

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    e.add_argument("--data", help="override the data directory recorded in the checkpoint")
    e.add_argument("--json", help="write the metrics report here (default: stdout)")

    m = sub.add_parser("map", help="render the predicted classification map")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--data", help="override the data directory recorded in the checkpoint")
    m.add_argument("--out", required=True, help="output image (portable pixmap)")

    sub.add_parser("selftest", help="run the gradient-check and oracle suites")
    return p


def _train_config(args):
    from .hsidata import SplitSpec
    from .trainer import TrainConfig

    if args.config:
        with open(args.config) as f:
            cfg = TrainConfig.from_dict(json.load(f))
    else:
        if not args.data:
            raise SystemExit(ExitCode.USAGE)
        cfg = TrainConfig(data=args.data)
    if args.data:
        cfg.data = args.data
    if args.patch is not None:
        cfg.patch = args.patch
    if args.split is not None:
        cfg.split = SplitSpec.parse(args.split, seed=cfg.split.seed)
    for name, attr in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"),
                       ("patience", "early_stop_patience"), ("seed", "seed"),
                       ("subsample_bands", "subsample_bands")):
        v = getattr(args, name)
        if v is not None:
            setattr(cfg, attr, v)
    if args.seed is not None:
        cfg.split.seed = args.seed
    return cfg


def _cmd_train(args):
    from .trainer import train

    cfg = _train_config(args)
    result = train(cfg, args.out, log_path=args.log)
    last = result.log[-1]
    print(f"trained {last['epoch']} epochs; best val OA {result.best_val_oa:.4f} "
          f"at epoch {result.best_epoch}; checkpoint: {result.checkpoint_path}")
    return ExitCode.OK


def _cmd_eval(args):
    from .trainer import evaluate

    rep = evaluate(args.ckpt, split=args.split, data=args.data)
    text = json.dumps(rep, sort_keys=True, indent=1)
    if args.json:
        with open(args.json, "w") as f:
            f.write(text)
    else:
        print(text)
    print(f"OA {rep['oa']:.4f}  AA {rep['aa']:.4f}  kappa {rep['kappa']:.4f}", file=sys.stderr)
    return ExitCode.OK


def _cmd_map(args):
    from .trainer import predict_map

    raster = predict_map(args.ckpt, args.out, data=args.data)
    print(f"wrote {args.out} ({raster.shape[1]}x{raster.shape[0]})")
    return ExitCode.OK


def _cmd_selftest(_args):
    from .selftest import run_selftest

    return ExitCode.OK if run_selftest() else ExitCode.INTERNAL


def main(argv=None):
    args = _build_parser().parse_args(argv)
    from .hsidata import DataError
    from .network import CheckpointError, ConfigError
    from .tensor import ShapeError
    from .trainer import TrainingDiverged

    handlers = {"train": _cmd_train, "eval": _cmd_eval, "map": _cmd_map, "selftest": _cmd_selftest}
    try:
        return int(handlers[args.cmd](args))
    except (DataError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return int(ExitCode.DATA)
    except TrainingDiverged as err:
        print(f"training aborted: {err}", file=sys.stderr)
        return int(ExitCode.TRAINING)
    except CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return int(ExitCode.CHECKPOINT)
    except (ConfigError, ShapeError, ValueError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return int(ExitCode.USAGE)


if __name__ == "__main__":
    sys.exit(main())

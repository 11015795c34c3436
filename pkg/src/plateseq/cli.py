"""Command-line front end: generate / train / eval / predict.

Settings resolve in three layers: built-in defaults, then a flat key=value
config file (--config), then explicit command-line flags. Unknown config
keys are rejected outright.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure (non-finite values during training).
"""

import argparse
import os
import sys

import numpy as np

from .checkpoint import CheckpointError
from .cnn import CnnConfig
from .dataset import DatasetError, generate_dataset, load_dataset
from .layers import NonFiniteError, ShapeError, set_float_dtype
from .metrics import emit_report, evaluate
from .model import (
    Recognizer,
    TrainConfig,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    write_train_log,
)
from .pgm import read_pgm
from .render import AugmentConfig

_CONFIG_KEYS = {
    "data": str, "out": str, "count": int, "val": int, "seed": int,
    "epochs": int, "batch_size": int, "variant": str, "augment": str,
    "augment_config": str, "canvas": str, "float32": str, "log": str,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_config(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, "
                                 f"got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _CONFIG_KEYS[key](value)
    return values


def _resolve(args, key, default=None):
    """Flag value if given, else config-file value, else the default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    if key in args._config:
        return args._config[key]
    return default


def _parse_canvas(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ValueError(f"canvas must look like 32x64, got {text!r}") from None


def _parse_bool(text, what):
    if text in ("on", "true", "1", "yes"):
        return True
    if text in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"{what} must be on or off, got {text!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args):
    out = os.path.abspath(_resolve(args, "out"))
    rows = generate_dataset(
        out,
        n_total=_resolve(args, "count", 2713),
        val_count=_resolve(args, "val", 409),
        seed=_resolve(args, "seed", 0),
        canvas=_parse_canvas(_resolve(args, "canvas", "32x64")),
    )
    n_train = sum(1 for r in rows if r[2] == "train")
    n_val = len(rows) - n_train
    print(f"wrote {len(rows)} images to {out}")
    print(f"train\t{n_train}")
    print(f"val\t{n_val}")
    return 0


def cmd_train(args):
    if _parse_bool(_resolve(args, "float32", "off"), "float32"):
        set_float_dtype(np.float32)
    data = os.path.abspath(_resolve(args, "data"))
    out = os.path.abspath(_resolve(args, "out"))
    log_path = os.path.abspath(_resolve(args, "log", out + ".log.tsv"))
    variant = _resolve(args, "variant", "cnn_rnn")
    seed = _resolve(args, "seed", 0)

    aug_path = _resolve(args, "augment_config")
    aug_cfg = AugmentConfig.from_file(aug_path) if aug_path else AugmentConfig()
    cfg = TrainConfig(
        epochs=_resolve(args, "epochs", 30),
        batch_size=_resolve(args, "batch_size", 32),
        seed=seed,
        augment=_parse_bool(_resolve(args, "augment", "off"), "augment"),
        augment_cfg=aug_cfg,
    )

    train_images = load_dataset(data, split="train")
    val_images = load_dataset(data, split="val")
    if not train_images or not val_images:
        raise DatasetError(f"{data}: needs non-empty train and val splits")
    canvas = train_images[0].pixels.shape[1:]
    model = Recognizer.build(variant=variant,
                             cnn_cfg=CnnConfig(input_hw=canvas), seed=seed)

    def report(stats):
        print(f"epoch {stats.epoch}\tlr {stats.lr:.6g}\t"
              f"loss {stats.train_loss:.4f}\t"
              f"val {stats.val_perfect_pct:.2f}%")

    log = train(model, train_images, val_images, cfg, on_epoch=report)
    save_checkpoint(model, out)
    write_train_log(log_path, log)
    best = max(log, key=lambda s: (s.val_perfect_pct, -s.epoch))
    print(f"saved {out} (best val {best.val_perfect_pct:.2f}% "
          f"at epoch {best.epoch}); log at {log_path}")
    return 0


def cmd_eval(args):
    data = os.path.abspath(_resolve(args, "data"))
    out = os.path.abspath(_resolve(args, "out"))
    model = load_checkpoint(os.path.abspath(args.ckpt))
    val_images = load_dataset(data, split="val")
    if not val_images:
        raise DatasetError(f"{data}: validation split is empty")
    report = evaluate(model, val_images)
    emit_report(report, out)
    print(f"percentage_perfect\t{report.percentage_perfect:.6f}")
    print(f"avg_edit_distance\t{report.avg_edit_distance:.6f}")
    print(f"avg_ratio\t{report.avg_ratio:.6f}")
    return 0


def cmd_predict(args):
    model = load_checkpoint(os.path.abspath(args.ckpt))
    gray = read_pgm(os.path.abspath(args.image))
    expected = tuple(model.cnn.cfg.input_hw)
    if gray.shape != expected:
        raise ValueError(
            f"image is {gray.shape[0]}x{gray.shape[1]} but the checkpoint "
            f"expects {expected[0]}x{expected[1]}; resize or re-render the "
            f"image to {expected[0]}x{expected[1]}")
    pixels = (gray.astype(np.float64) / 255.0)[None]
    result = predict(model, pixels)
    print(f"{result.text}\tvalid={'true' if result.valid else 'false'}")
    if args.show_dist:
        for row in result.probs:
            # quantize to 1e-9 units and push the rounding residue onto the
            # largest entry so each printed row sums to exactly 1
            units = np.round(row * 1e9).astype(np.int64)
            units[units.argmax()] += 10 ** 9 - units.sum()
            print("\t".join(f"{u / 1e9:.9f}" for u in units))
    return 0


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------

def _build_parser():
    parser = _Parser(prog="plateseq",
                     description="Segmentation-free plate recognizer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic plate corpus")
    p.add_argument("--out", help="dataset directory")
    p.add_argument("--count", type=int, help="total images (default 2713)")
    p.add_argument("--val", type=int, help="validation images (default 409)")
    p.add_argument("--seed", type=int)
    p.add_argument("--canvas", help="image size as HxW (default 32x64)")
    p.add_argument("--config", help="key=value config file")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a recognizer on a corpus")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--variant", choices=("cnn_only", "cnn_rnn"))
    p.add_argument("--augment", choices=("on", "off"))
    p.add_argument("--augment-config", help="augmentation key=value file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--float32", choices=("on", "off"),
                   help="train in float32 (default float64)")
    p.add_argument("--log", help="training log TSV (default <out>.log.tsv)")
    p.add_argument("--config", help="key=value config file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the val split")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--out", help="report output directory")
    p.add_argument("--config", help="key=value config file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="read one plate image")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--image", required=True, help="PGM image path")
    p.add_argument("--show-dist", action="store_true",
                   help="print the 10x36 probability grid")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        args._config = {}
        if getattr(args, "config", None):
            args._config = _read_config(args.config)
        for key in ("data", "out"):
            if hasattr(args, key) and _resolve(args, key) is None:
                raise UsageError(f"plateseq {args.command}: --{key} is required "
                                 f"(flag or config file)")
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except NonFiniteError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (DatasetError, CheckpointError, ShapeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

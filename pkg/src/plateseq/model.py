"""Recognizer assembly, the training loop, greedy decoding, and persistence.

Two variants share one input/output contract: "cnn_rnn" feeds the CNN
feature vector into the recurrent sequencer, "cnn_only" reads the same
vector directly as 10 blocks of 36 class logits. Both emit a (10, 36) grid
of per-position class distributions, which keeps the ablation comparison
honest.

Training is plain SGD with the 0.1 / (10 * epoch) learning-rate schedule,
teacher forcing for the recurrent variant, and per-epoch shuffling plus
per-sample augmentation streams derived from (seed, epoch, index), so a run
is a pure function of (seed, config, dataset).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .cnn import CnnConfig, build_cnn
from .layers import (
    NonFiniteError,
    float_dtype,
    sgd_step,
    softmax,
    softmax_xent_grad,
)
from .metrics import edit_distance, ratio
from .plates import decode_indices, strip_padding, validate_plate
from .render import AugmentConfig, augment
from .rnn import RnnSequencer

VARIANTS = ("cnn_only", "cnn_rnn")


class Recognizer:
    """A built CNN (and, for cnn_rnn, the sequencer) plus decode metadata."""

    def __init__(self, cnn, rnn, variant, seq_len, n_classes):
        self.cnn = cnn
        self.rnn = rnn
        self.variant = variant
        self.seq_len = seq_len
        self.n_classes = n_classes

    @classmethod
    def build(cls, variant="cnn_rnn", cnn_cfg=None, seed=0, seq_len=10,
              n_classes=36, rnn_hidden=36):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if cnn_cfg is None:
            cnn_cfg = CnnConfig(out_dim=seq_len * n_classes)
        if cnn_cfg.out_dim != seq_len * n_classes:
            raise ValueError(f"cnn out_dim {cnn_cfg.out_dim} != "
                             f"seq_len * n_classes = {seq_len * n_classes}")
        cnn = build_cnn(cnn_cfg, seed=(seed, 0))
        rnn = None
        if variant == "cnn_rnn":
            rnn = RnnSequencer(hidden=rnn_hidden, input_dim=cnn_cfg.out_dim,
                               n_classes=n_classes, seq_len=seq_len,
                               seed=(seed, 1))
        return cls(cnn, rnn, variant, seq_len, n_classes)

    def all_params(self):
        params = self.cnn.all_params()
        if self.rnn is not None:
            params += self.rnn.all_params()
        return params

    def zero_grads(self):
        for p in self.all_params():
            p.zero_grads()

    def named_tensors(self):
        tensors = self.cnn.named_tensors()
        if self.rnn is not None:
            tensors += self.rnn.named_tensors()
        return tensors

    def config_dict(self):
        cfg = self.cnn.cfg
        return {
            "variant": self.variant,
            "input_hw": list(cfg.input_hw),
            "stages": [list(s) for s in cfg.stages],
            "head_widths": list(cfg.head_widths),
            "out_dim": cfg.out_dim,
            "seq_len": self.seq_len,
            "n_classes": self.n_classes,
            "rnn_hidden": self.rnn.hidden if self.rnn else 0,
            "dtype": float_dtype().name,
        }

    def snapshot(self):
        return {name: arr.copy() for name, arr in self.named_tensors()}

    def restore(self, snap):
        for name, arr in self.named_tensors():
            arr[...] = snap[name]


# ---------------------------------------------------------------------------
# loss and prediction
# ---------------------------------------------------------------------------

def forward_loss(model, batch, targets, mode="train"):
    """Mean-per-sample cross-entropy summed over the sequence positions.

    Returns (probs, loss, cache); probs is (N, seq_len, n_classes) and the
    cache feeds backward_from_probs. Teacher forcing drives the recurrent
    variant; cnn_only scores each 36-wide block independently.
    """
    targets = np.asarray(targets)
    n = batch.shape[0]
    if targets.shape != (n, model.seq_len):
        raise ValueError(f"targets shaped {targets.shape}, expected "
                         f"({n}, {model.seq_len})")
    feats = model.cnn.forward(batch, mode)
    if model.variant == "cnn_rnn":
        probs, _, rnn_cache = model.rnn.unroll(feats, "teacher", targets=targets)
    else:
        logits = feats.reshape(n, model.seq_len, model.n_classes)
        probs = softmax(logits.reshape(n * model.seq_len, model.n_classes))
        probs = probs.reshape(n, model.seq_len, model.n_classes)
        rnn_cache = None
    picked = np.take_along_axis(probs, targets[..., None], axis=2)[..., 0]
    loss = float(-np.log(np.maximum(picked, 1e-300)).sum() / n)
    return probs, loss, rnn_cache


def backward_from_probs(model, probs, targets, rnn_cache):
    """Backpropagate the forward_loss gradient into every parameter."""
    n, k, c = probs.shape
    grad = softmax_xent_grad(probs.reshape(n * k, c),
                             np.asarray(targets).reshape(n * k)) / n
    if model.variant == "cnn_rnn":
        dfeat = model.rnn.bptt(rnn_cache, grad.reshape(n, k, c))
    else:
        dfeat = grad.reshape(n, k * c)
    return model.cnn.backward(dfeat)


@dataclass
class PredictResult:
    text: str       # stripped raw string; may be empty
    valid: bool     # whether text parses as a plate
    probs: np.ndarray  # (seq_len, n_classes) per-position distributions


def predict_batch(model, batch):
    """Greedy decode a (N, 1, H, W) batch with the model frozen (infer mode).
    Argmax ties resolve to the lowest class index."""
    feats = model.cnn.forward(batch, "infer")
    n = batch.shape[0]
    if model.variant == "cnn_rnn":
        probs, preds, _ = model.rnn.unroll(feats, "greedy")
    else:
        logits = feats.reshape(n, model.seq_len, model.n_classes)
        flat = softmax(logits.reshape(n * model.seq_len, model.n_classes))
        probs = flat.reshape(n, model.seq_len, model.n_classes)
        preds = logits.argmax(axis=2)
    results = []
    for i in range(n):
        padded = decode_indices(preds[i])
        raw = strip_padding(padded)
        results.append(PredictResult(text=raw, valid=validate_plate(raw),
                                     probs=probs[i]))
    return results


def predict(model, image):
    """Predict one PlateImage or raw (1, H, W) pixel array."""
    pixels = image.pixels if hasattr(image, "pixels") else image
    if pixels.ndim != 3:
        raise ValueError(f"expected (1, H, W) pixels, got shape {pixels.shape}")
    return predict_batch(model, pixels[None].astype(float_dtype()))[0]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def lr_at(epoch, base_lr=0.1):
    """The published schedule: base_lr / (10 * epoch), epochs counted from 1."""
    if epoch < 1:
        raise ValueError(f"epochs are 1-based, got {epoch}")
    return base_lr / (10.0 * epoch)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    base_lr: float = 0.1
    seed: int = 0
    augment: bool = False
    augment_cfg: AugmentConfig = None
    stop_when_perfect: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")
        if self.augment_cfg is None:
            self.augment_cfg = AugmentConfig()


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_perfect_pct: float
    val_avg_edit: float
    val_avg_ratio: float


def _val_stats(model, images, batch_size=256):
    pairs = []
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        batch = np.stack([img.pixels for img in chunk]).astype(float_dtype())
        for res, img in zip(predict_batch(model, batch), chunk):
            pairs.append((res.text, img.label.raw))
    perfect = 100.0 * sum(p == t for p, t in pairs) / len(pairs)
    avg_edit = float(np.mean([edit_distance(p, t) for p, t in pairs]))
    avg_ratio = float(np.mean([ratio(p, t) for p, t in pairs]))
    return perfect, avg_edit, avg_ratio


def train(model, train_images, val_images, cfg, on_epoch=None):
    """SGD training with the fixed decay schedule.

    Shuffling, augmentation draws, and therefore the whole log are
    deterministic in cfg.seed. The model is left holding the parameters of
    the best-validation epoch (earliest epoch wins ties); the returned list
    holds one EpochStats per completed epoch.
    """
    if not train_images or not val_images:
        raise ValueError("training and validation sets must be non-empty")
    n = len(train_images)
    pixels = np.stack([img.pixels for img in train_images]).astype(float_dtype())
    targets = np.array([img.label.indices for img in train_images])

    best = None  # (perfect_pct, -epoch, snapshot)
    log = []
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(epoch, cfg.base_lr)
        order = np.random.default_rng((cfg.seed, epoch, 0, 0)).permutation(n)
        batches = [order[i:i + cfg.batch_size]
                   for i in range(0, n, cfg.batch_size)]
        if len(batches) > 1 and len(batches[-1]) == 1:
            # batchnorm needs >= 2 samples; fold the orphan into its neighbor
            batches[-2] = np.concatenate([batches[-2], batches[-1]])
            batches.pop()

        total_loss = 0.0
        for idx in batches:
            if cfg.augment:
                batch = np.stack([
                    augment(train_images[i],
                            np.random.default_rng((cfg.seed, epoch, int(i), 1)),
                            cfg.augment_cfg).pixels
                    for i in idx]).astype(float_dtype())
            else:
                batch = pixels[idx]
            model.zero_grads()
            probs, loss, cache = forward_loss(model, batch, targets[idx], "train")
            if not math.isfinite(loss):
                raise NonFiniteError(f"training loss became non-finite at "
                                     f"epoch {epoch}")
            backward_from_probs(model, probs, targets[idx], cache)
            sgd_step(model.all_params(), lr)
            total_loss += loss * len(idx)

        perfect, avg_edit, avg_ratio = _val_stats(model, val_images)
        stats = EpochStats(epoch=epoch, lr=lr, train_loss=total_loss / n,
                           val_perfect_pct=perfect, val_avg_edit=avg_edit,
                           val_avg_ratio=avg_ratio)
        log.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
        if best is None or perfect > best[0]:
            best = (perfect, epoch, model.snapshot())
        if cfg.stop_when_perfect and perfect >= 100.0:
            break

    model.restore(best[2])
    return log


def write_train_log(path, log):
    """One TSV row per epoch; lr is written with repr so it parses back to
    the exact float."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\tlr\ttrain_loss\tval_perfect_pct\tval_avg_edit\t"
                 "val_avg_ratio\n")
        for s in log:
            fh.write(f"{s.epoch}\t{s.lr!r}\t{s.train_loss:.6f}\t"
                     f"{s.val_perfect_pct:.6f}\t{s.val_avg_edit:.6f}\t"
                     f"{s.val_avg_ratio:.6f}\n")


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_checkpoint(model, path):
    write_checkpoint(path, model.config_dict(), model.named_tensors())


def load_checkpoint(path, expect_variant=None):
    """Rebuild a Recognizer from a checkpoint file.

    The restore is bit-exact when the runtime float dtype matches the saved
    one (the default everywhere); otherwise values are cast.
    """
    config, tensors = read_checkpoint(path)
    if expect_variant is not None and config["variant"] != expect_variant:
        raise CheckpointError(f"{path}: checkpoint holds a "
                              f"{config['variant']} model, expected "
                              f"{expect_variant}")
    cnn_cfg = CnnConfig(input_hw=tuple(config["input_hw"]),
                        stages=tuple(tuple(s) for s in config["stages"]),
                        head_widths=tuple(config["head_widths"]),
                        out_dim=config["out_dim"])
    model = Recognizer.build(variant=config["variant"], cnn_cfg=cnn_cfg,
                             seed=0, seq_len=config["seq_len"],
                             n_classes=config["n_classes"],
                             rnn_hidden=config["rnn_hidden"] or 36)
    expected = dict(model.named_tensors())
    missing = set(expected) - set(tensors)
    extra = set(tensors) - set(expected)
    if missing or extra:
        raise CheckpointError(f"{path}: tensor set mismatch "
                              f"(missing {sorted(missing)}, "
                              f"unexpected {sorted(extra)})")
    for name, arr in expected.items():
        if tensors[name].shape != arr.shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape "
                                  f"{tensors[name].shape}, expected {arr.shape}")
        arr[...] = tensors[name]
    return model

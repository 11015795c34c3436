"""Synthetic plate corpus generation and loading.

A dataset directory holds one `manifest.tsv` (UTF-8, header row, columns
file / raw_label / split) plus one binary PGM per plate. Generation is a
pure function of (n_total, val_count, seed, canvas): every image draws its
own rng streams keyed by (seed, index), so any generation schedule produces
identical bytes.
"""

import os

import numpy as np

from .layers import float_dtype
from .pgm import read_pgm, write_pgm
from .plates import PlateLabel, sample_plate
from .render import DEFAULT_CANVAS, PlateImage, render_plate

MANIFEST_NAME = "manifest.tsv"
_MANIFEST_HEADER = "file\traw_label\tsplit"

# rng stream tags so label sampling, rendering, and the split permutation
# never share a stream
_LABEL, _RENDER, _SPLIT = 0, 1, 2


class DatasetError(ValueError):
    """Malformed manifest, missing file, or unloadable image."""


def generate_dataset(out_dir, n_total=2713, val_count=409, seed=0,
                     canvas=DEFAULT_CANVAS):
    """Write n_total rendered plates and a manifest assigning the last
    val_count (in shuffled order under the seed) to the validation split.

    Returns the manifest rows as (file, raw_label, split) tuples.
    """
    if not 0 < val_count < n_total:
        raise ValueError(f"need 0 < val_count < n_total, got "
                         f"val_count={val_count}, n_total={n_total}")
    try:
        os.makedirs(out_dir, exist_ok=True)
        probe = os.path.join(out_dir, ".write_probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as e:
        raise DatasetError(f"cannot write to dataset directory {out_dir}: {e}") from e

    records = []
    for i in range(n_total):
        label_rng = np.random.default_rng((seed, i, _LABEL))
        s = sample_plate(label_rng)
        img = render_plate(s, seed=(seed, i, _RENDER), canvas=canvas)
        fname = f"plate_{i:05d}.pgm"
        write_pgm(os.path.join(out_dir, fname), img.pixels[0])
        records.append((fname, s))

    order = np.random.default_rng((seed, 0, _SPLIT)).permutation(n_total)
    rows = []
    for pos, idx in enumerate(order):
        split = "val" if pos >= n_total - val_count else "train"
        fname, s = records[idx]
        rows.append((fname, s, split))

    with open(os.path.join(out_dir, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write(_MANIFEST_HEADER + "\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")
    return rows


def read_manifest(dataset_dir):
    """Parse manifest.tsv, rejecting malformed rows with their line number."""
    path = os.path.join(dataset_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DatasetError(f"no {MANIFEST_NAME} in {dataset_dir}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != _MANIFEST_HEADER:
            raise DatasetError(f"{path}:1: bad header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DatasetError(f"{path}:{lineno}: expected 3 columns, "
                                   f"got {len(parts)}")
            fname, raw, split = parts
            if split not in ("train", "val"):
                raise DatasetError(f"{path}:{lineno}: unknown split {split!r}")
            rows.append((fname, raw, split, lineno))
    return rows


def load_dataset(dataset_dir, split=None):
    """Load every image (or a single split) in manifest order.

    Pixels come back in [0, 1] at the active float dtype; labels are
    re-validated so a hand-edited manifest cannot smuggle in a bad plate.
    """
    images = []
    for fname, raw, row_split, lineno in read_manifest(dataset_dir):
        if split is not None and row_split != split:
            continue
        try:
            label = PlateLabel(raw)
        except ValueError as e:
            raise DatasetError(
                f"{dataset_dir}/{MANIFEST_NAME}:{lineno}: {e}") from e
        path = os.path.join(dataset_dir, fname)
        if not os.path.exists(path):
            raise DatasetError(f"{dataset_dir}/{MANIFEST_NAME}:{lineno}: "
                               f"missing image file {fname}")
        try:
            gray = read_pgm(path)
        except ValueError as e:
            raise DatasetError(str(e)) from e
        pixels = (gray.astype(float_dtype()) / 255.0)[None]
        images.append(PlateImage(pixels=pixels, label=label, seed=None))
    return images

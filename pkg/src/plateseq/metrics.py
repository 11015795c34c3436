"""Sequence-level evaluation: exact-match rate, edit distance, length-
normalized ratio, and a per-character confusion matrix.

All comparisons run on stripped raw strings (padding removed); padded labels
are always 10 characters long, so comparing them would deflate distances and
defeat the confusion matrix's length-mismatch exclusion rule. Confusion
counts only accumulate over sample pairs whose predicted and target strings
have equal length, aligned position by position; everything else increments
excluded_count instead.
"""

import os
from dataclasses import dataclass

import numpy as np

from .pgm import write_pgm
from .plates import ALPHABET, ALPHABET_SIZE


def edit_distance(a, b):
    """Levenshtein distance with unit-cost insertions, deletions, and
    substitutions, computed with the classic two-row dynamic program."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1,          # delete from a
                         cur[j - 1] + 1,       # insert into a
                         prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def ratio(a, b):
    """Length-normalized similarity ((M + N) - distance) / (M + N).

    1.0 for equal strings, 0.0 when nothing aligns; two empty strings are
    defined as a perfect match (the formula is 0/0 there).
    """
    total = len(a) + len(b)
    if total == 0:
        return 1.0
    return (total - edit_distance(a, b)) / total


@dataclass
class EvalReport:
    percentage_perfect: float
    avg_edit_distance: float
    avg_ratio: float
    confusion: np.ndarray       # (36, 36) integer counts, rows = target class
    confusion_pct: np.ndarray   # rows normalized to sum to 100 (or all zero)
    char_accuracy: float
    excluded_count: int
    n_samples: int


def char_accuracy(confusion):
    """Diagonal mass of a confusion-count matrix, as a percentage."""
    total = confusion.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty, no included pairs")
    return 100.0 * np.trace(confusion) / total


def _normalize_rows(confusion):
    pct = np.zeros(confusion.shape, dtype=np.float64)
    sums = confusion.sum(axis=1)
    nz = sums > 0
    pct[nz] = 100.0 * confusion[nz] / sums[nz, None]
    return pct


def report_from_pairs(pairs):
    """Build the full report from (predicted_raw, target_raw) string pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("cannot evaluate an empty sample set")
    n = len(pairs)
    perfect = sum(p == t for p, t in pairs)
    distances = [edit_distance(p, t) for p, t in pairs]
    ratios = [ratio(p, t) for p, t in pairs]

    confusion = np.zeros((ALPHABET_SIZE, ALPHABET_SIZE), dtype=np.int64)
    excluded = 0
    for p, t in pairs:
        if len(p) != len(t):
            excluded += 1
            continue
        for pc, tc in zip(p, t):
            confusion[ALPHABET.index(tc), ALPHABET.index(pc)] += 1

    total = confusion.sum()
    acc = 100.0 * np.trace(confusion) / total if total else 0.0
    return EvalReport(
        percentage_perfect=100.0 * perfect / n,
        avg_edit_distance=float(np.mean(distances)),
        avg_ratio=float(np.mean(ratios)),
        confusion=confusion,
        confusion_pct=_normalize_rows(confusion),
        char_accuracy=acc,
        excluded_count=excluded,
        n_samples=n,
    )


def evaluate(model, images, batch_size=256):
    """Predict every image with the frozen model and report the metrics."""
    from .model import predict_batch  # local import, model depends on metrics

    pairs = []
    for start in range(0, len(images), batch_size):
        chunk = images[start:start + batch_size]
        batch = np.stack([img.pixels for img in chunk])
        for res, img in zip(predict_batch(model, batch), chunk):
            pairs.append((res.text, img.label.raw))
    return report_from_pairs(pairs)


def emit_report(report, out_dir):
    """Write metrics.tsv, confusion.tsv (exact counts), and confusion.pgm
    (row-normalized heatmap, 0 -> black, 100% -> white)."""
    os.makedirs(out_dir, exist_ok=True)
    try:
        metrics_path = os.path.join(out_dir, "metrics.tsv")
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write("percentage_perfect\tavg_edit_distance\tavg_ratio\t"
                     "char_accuracy\texcluded_count\n")
            fh.write(f"{report.percentage_perfect:.6f}\t"
                     f"{report.avg_edit_distance:.6f}\t"
                     f"{report.avg_ratio:.6f}\t"
                     f"{report.char_accuracy:.6f}\t"
                     f"{report.excluded_count}\n")

        with open(os.path.join(out_dir, "confusion.tsv"), "w",
                  encoding="utf-8") as fh:
            fh.write("\t".join(ALPHABET) + "\n")
            for row in report.confusion:
                fh.write("\t".join(str(int(v)) for v in row) + "\n")

        heat = np.clip(np.round(report.confusion_pct * 2.55), 0, 255)
        write_pgm(os.path.join(out_dir, "confusion.pgm"),
                  heat.astype(np.uint8))
    except OSError as e:
        raise ValueError(f"cannot write report to {out_dir}: {e}") from e

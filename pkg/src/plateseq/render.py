"""Rasterize plate strings onto a small grayscale canvas, plus the training
augmentations (scale / translate / rotate / blur / sharpen).

Rendering draws bright glyphs on a dark background. Glyphs come from the
embedded atlas and are scaled to the largest integer factor that leaves at
least a 2-pixel margin even after spacing jitter, so short plates render
large and 8-character plates render small, the way a fixed camera crop sees
them. Everything is a pure function of (string, seed, canvas).
"""

from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage

from .glyphs import GLYPH_H, GLYPH_W, glyph
from .plates import PlateLabel

DEFAULT_CANVAS = (32, 64)  # (H, W); both must survive four 2x2 poolings
_MARGIN = 2


@dataclass
class PlateImage:
    pixels: np.ndarray  # (1, H, W), values in [0, 1]
    label: PlateLabel
    seed: int


def _layout_scale(n_chars, canvas):
    """Largest integer glyph scale that fits n_chars with jittered gaps."""
    h, w = canvas
    # worst-case width: n glyphs of 5s plus (n-1) gaps of at most 2s
    s_w = (w - 2 * _MARGIN) // (7 * n_chars - 2)
    s_h = (h - 2 * _MARGIN) // GLYPH_H
    s = min(s_w, s_h)
    if s < 1:
        raise ValueError(f"canvas {canvas} too small for a {n_chars}-character plate")
    return s


def render_plate(s, seed, canvas=DEFAULT_CANVAS):
    """Render a validated plate string; deterministic in (s, seed, canvas)."""
    label = PlateLabel(s)
    rng = np.random.default_rng(seed)
    h, w = canvas
    scale = _layout_scale(len(s), canvas)

    bg = 0.10 + rng.uniform(-0.03, 0.03)
    fg = 0.90 + rng.uniform(-0.05, 0.05)
    img = np.full((h, w), bg)

    gaps = [scale + int(rng.integers(0, scale + 1)) for _ in range(len(s) - 1)]
    total_w = GLYPH_W * scale * len(s) + sum(gaps)
    glyph_h = GLYPH_H * scale

    x_jit = min(3, max((w - total_w) // 2 - _MARGIN, 0))
    y_jit = min(2, max((h - glyph_h) // 2 - _MARGIN, 0))
    x0 = (w - total_w) // 2 + int(rng.integers(-x_jit, x_jit + 1))
    y0 = (h - glyph_h) // 2 + int(rng.integers(-y_jit, y_jit + 1))

    x = x0
    for i, ch in enumerate(s):
        bitmap = np.kron(glyph(ch), np.ones((scale, scale), dtype=bool))
        img[y0:y0 + glyph_h, x:x + GLYPH_W * scale][bitmap] = fg
        if i < len(s) - 1:
            x += GLYPH_W * scale + gaps[i]

    sigma = rng.uniform(0.0, 0.08)
    img += rng.normal(0.0, sigma, size=img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    return PlateImage(pixels=img[None], label=label, seed=seed)


# ---------------------------------------------------------------------------
# augmentations
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    """Per-transform application probabilities and parameter ranges.

    Loadable from a flat key=value file; every key is optional and unknown
    keys are rejected.
    """

    p_scale: float = 0.35
    scale_lo: float = 0.85
    scale_hi: float = 1.15
    p_translate: float = 0.35
    translate_frac: float = 0.10
    p_rotate: float = 0.35
    rotate_deg: float = 7.0
    p_blur: float = 0.25
    blur_radius_lo: int = 1
    blur_radius_hi: int = 2
    p_sharpen: float = 0.25
    sharpen_lo: float = 0.5
    sharpen_hi: float = 1.5

    @classmethod
    def identity(cls):
        return cls(p_scale=0.0, p_translate=0.0, p_rotate=0.0,
                   p_blur=0.0, p_sharpen=0.0)

    @classmethod
    def from_file(cls, path):
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if key not in known:
                    raise ValueError(f"{path}:{lineno}: unknown augmentation key {key!r}")
                kwargs[key] = int(value) if known[key] is int else float(value)
        return cls(**kwargs)


def translate(pixels, dy, dx):
    """Shift a (H, W) image by whole pixels, replicating edge rows/columns."""
    h, w = pixels.shape
    out = pixels
    if dy > 0:
        out = np.pad(out, ((dy, 0), (0, 0)), mode="edge")[:h]
    elif dy < 0:
        out = np.pad(out, ((0, -dy), (0, 0)), mode="edge")[-h:]
    if dx > 0:
        out = np.pad(out, ((0, 0), (dx, 0)), mode="edge")[:, :w]
    elif dx < 0:
        out = np.pad(out, ((0, 0), (0, -dx)), mode="edge")[:, -w:]
    return out.copy() if out is pixels else out


def zoom_about_center(pixels, factor):
    """Rescale about the image center, keeping the canvas size (zoom-in crops,
    zoom-out extends the edges)."""
    h, w = pixels.shape
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = center * (1.0 - 1.0 / factor)
    return ndimage.affine_transform(
        pixels, np.diag([1.0 / factor, 1.0 / factor]), offset=offset,
        order=1, mode="nearest")


def rotate(pixels, degrees):
    """Rotate about the center with bilinear resampling; border pixels (the
    dark background) fill the exposed corners."""
    return ndimage.rotate(pixels, degrees, reshape=False, order=1, mode="nearest")


def box_blur(pixels, radius):
    return ndimage.uniform_filter(pixels, size=2 * radius + 1, mode="nearest")


def unsharp_sharpen(pixels, amount):
    return pixels + amount * (pixels - box_blur(pixels, 1))


def augment(img, rng, cfg):
    """Apply each configured transform with its own probability.

    The label is never touched and the result is clamped back to [0, 1].
    With all probabilities zero the pixels pass through unchanged.
    """
    out = img.pixels[0]
    h, w = out.shape
    if rng.random() < cfg.p_scale:
        out = zoom_about_center(out, rng.uniform(cfg.scale_lo, cfg.scale_hi))
    if rng.random() < cfg.p_translate:
        max_dy = int(round(cfg.translate_frac * h))
        max_dx = int(round(cfg.translate_frac * w))
        out = translate(out, int(rng.integers(-max_dy, max_dy + 1)),
                        int(rng.integers(-max_dx, max_dx + 1)))
    if rng.random() < cfg.p_rotate:
        out = rotate(out, rng.uniform(-cfg.rotate_deg, cfg.rotate_deg))
    if rng.random() < cfg.p_blur:
        out = box_blur(out, int(rng.integers(cfg.blur_radius_lo, cfg.blur_radius_hi + 1)))
    if rng.random() < cfg.p_sharpen:
        out = unsharp_sharpen(out, rng.uniform(cfg.sharpen_lo, cfg.sharpen_hi))
    out = np.clip(out, 0.0, 1.0)
    return PlateImage(pixels=out[None], label=img.label, seed=img.seed)

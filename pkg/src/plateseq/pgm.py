"""Binary (P5) PGM reading and writing.

8-bit PGM is the on-disk image format for corpora and reports: bit-exact,
codec-free, and readable by anything.
"""

import numpy as np


def write_pgm(path, gray):
    """Write a 2-D uint8 array (or a float array in [0, 1]) as binary PGM."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"PGM wants a 2-d array, got shape {gray.shape}")
    if gray.dtype != np.uint8:
        gray = np.clip(np.round(gray * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_pgm(path):
    """Read a binary PGM with maxval 255 into a (H, W) uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        # header tokens separated by whitespace; '#' starts a comment
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            eol = data.find(b"\n", pos)
            pos = len(data) if eol < 0 else eol + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {fields[0]!r})")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    pixels = data[pos:pos + w * h]
    if len(pixels) != w * h:
        raise ValueError(f"{path}: truncated pixel data "
                         f"({len(pixels)} of {w * h} bytes)")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)

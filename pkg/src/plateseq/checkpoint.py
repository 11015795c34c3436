"""Binary checkpoint format.

Layout, all little-endian:

    magic "SQPL" | u32 format version | u32 config length | config JSON
    | tensor records | u32 CRC-32

Each tensor record is u16 name length, the UTF-8 name, u8 dtype code
(0 = float64, 1 = float32), u8 ndim, u32 per dimension, then the raw
C-order payload. The CRC covers every byte between the magic and the
checksum, so a single flipped payload byte fails the load.
"""

import json
import struct
import zlib

import numpy as np

MAGIC = b"SQPL"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f8"): 0, np.dtype("<f4"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


def write_checkpoint(path, config, tensors):
    """Serialize a config dict plus (name, array) pairs."""
    body = bytearray()
    body += struct.pack("<I", VERSION)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    body += struct.pack("<I", len(cfg)) + cfg
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        nb = name.encode("utf-8")
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    crc = zlib.crc32(bytes(body))
    with open(path, "wb") as fh:
        fh.write(MAGIC + bytes(body) + struct.pack("<I", crc))


def read_checkpoint(path):
    """Return (config dict, {name: array}) after verifying magic, version,
    and checksum."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    body, stored = data[4:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != stored:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")

    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(body):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    version = struct.unpack("<I", take(4, "version"))[0]
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version} unsupported "
                              f"(expected {VERSION})")
    cfg_len = struct.unpack("<I", take(4, "config length"))[0]
    config = json.loads(take(cfg_len, "config").decode("utf-8"))

    tensors = {}
    while pos < len(body):
        name_len = struct.unpack("<H", take(2, "tensor name length"))[0]
        name = take(name_len, "tensor name").decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2, "tensor header"))
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: tensor {name!r} has unknown dtype "
                                  f"code {code}")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "tensor shape"))
        dtype = _CODE_DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        raw = take(count * dtype.itemsize, f"tensor {name!r} payload")
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return config, tensors

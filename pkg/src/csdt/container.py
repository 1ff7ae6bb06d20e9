"""Flat binary container for named float arrays, plus PGM image export.

Layout (all integers little-endian):

    magic  b"CSDT"
    u16    format version (currently 1)
    u32    entry count
    then per entry:
    u16    name length in bytes, followed by the UTF-8 name
    u8     dtype code (1 = float32, 2 = float64)
    u8     rank
    u64[]  one extent per rank dimension
    raw    row-major little-endian payload

Entries are written sorted by name so equal inputs produce identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"CSDT"
VERSION = 1

_DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}


def write_container(path, entries):
    """Write a dict of name -> float32/float64 ndarray."""
    blobs = []
    for name in sorted(entries):
        # asarray keeps rank-0 entries rank 0; ascontiguousarray would not
        arr = np.asarray(entries[name], order="C")
        if arr.dtype not in _DTYPE_CODES:
            raise ValueError(
                f"entry {name!r} has dtype {arr.dtype}; only float32/float64 are stored"
            )
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ValueError(f"entry name too long: {name!r}")
        head = struct.pack("<H", len(nb)) + nb
        head += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        head += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        blobs.append(head + payload)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(blobs)))
        for b in blobs:
            f.write(b)


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError(f"container {self.path} is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path):
    """Read a container back into a dict of name -> ndarray."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise ValueError(f"{path} is not a container file (bad magic)")
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise ValueError(f"{path} has unsupported container version {version}")
    entries = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in _CODE_DTYPES:
            raise ValueError(f"{path}: entry {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        dt = _CODE_DTYPES[code]
        n_items = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = r.take(n_items * dt.itemsize)
        arr = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
        entries[name] = arr
    if r.pos != len(data):
        raise ValueError(f"{path} has {len(data) - r.pos} trailing bytes")
    return entries


def write_pgm(path, image):
    """Export a 2D image as 8-bit binary PGM for eyeballing.

    The image is min-max normalized into 0..255; the window used is
    recorded in a JSON sidecar next to the file so values stay traceable.
    Quantitative work should read the binary container, not the PGM.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"PGM export needs a 2D image, got shape {img.shape}")
    lo = float(img.min())
    hi = float(img.max())
    scale = hi - lo if hi > lo else 1.0
    q = np.round((img - lo) / scale * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(q.tobytes())
    with open(str(path) + ".json", "w") as f:
        json.dump({"min": lo, "max": hi}, f, sort_keys=True)
        f.write("\n")

"""File formats: TNSR tensors, SMCK checkpoints, binary PGM images.

TNSR: b"TNSR", u32 rank, u32 dims[rank], float32 payload (all little-endian,
row-major).

SMCK: b"SMCK", u32 version, u32 entry count, then per entry u32 name length,
UTF-8 name, TNSR blob.
"""
import struct

import numpy as np

TNSR_MAGIC = b"TNSR"
SMCK_MAGIC = b"SMCK"
SMCK_VERSION = 1


class FormatError(ValueError):
    """Malformed or unsupported file contents."""


# -- TNSR ----------------------------------------------------------------------


def tnsr_bytes(array):
    a = np.asarray(array, dtype="<f4")
    head = TNSR_MAGIC + struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape)
    return head + np.ascontiguousarray(a).tobytes()


def tnsr_from_buffer(buf, offset=0):
    """Parse one TNSR blob at ``offset``; returns (array, next_offset)."""
    if bytes(buf[offset : offset + 4]) != TNSR_MAGIC:
        raise FormatError("missing TNSR magic")
    offset += 4
    if len(buf) < offset + 4:
        raise FormatError("truncated TNSR header")
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if len(buf) < offset + 4 * rank:
        raise FormatError("truncated TNSR dims")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    nbytes = 4 * count
    if len(buf) < offset + nbytes:
        raise FormatError(f"TNSR payload needs {nbytes} bytes, found {len(buf) - offset}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(dims)
    return data.astype(np.float32), offset + nbytes


def save_tnsr(path, array):
    with open(path, "wb") as fh:
        fh.write(tnsr_bytes(array))


def load_tnsr(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    data, end = tnsr_from_buffer(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after TNSR payload")
    return data


# -- SMCK ----------------------------------------------------------------------


def text_to_array(text):
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def array_to_text(array):
    return np.asarray(array).astype(np.uint8).tobytes().decode("utf-8")


def write_entries(path, entries):
    """Write an ordered mapping name -> array as an SMCK file."""
    parts = [SMCK_MAGIC, struct.pack("<II", SMCK_VERSION, len(entries))]
    for name, arr in entries.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(tnsr_bytes(arr))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_entries(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != SMCK_MAGIC:
        raise FormatError(f"{path}: not an SMCK checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != SMCK_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    entries = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        name = buf[offset : offset + n].decode("utf-8")
        offset += n
        entries[name], offset = tnsr_from_buffer(buf, offset)
    return entries


# -- PGM -------------------------------------------------------------------------


def _tokens(buf, count, pos):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        out.append(buf[start:pos])
    return out, pos


def read_pgm(path):
    """Raw 8-bit P5 pixels as a uint8 (H, W) array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    try:
        (w, h, maxval), pos = _tokens(buf, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM (maxval {maxval}) is not supported")
    if w <= 0 or h <= 0 or maxval <= 0:
        raise FormatError(f"{path}: invalid PGM dimensions")
    pos += 1  # single whitespace byte before the raster
    expected = w * h
    actual = len(buf) - pos
    if actual < expected:
        raise FormatError(f"{path}: PGM payload expected {expected} bytes, got {actual}")
    return np.frombuffer(buf, dtype=np.uint8, count=expected, offset=pos).reshape(h, w)


def write_pgm(path, array):
    a = np.asarray(array)
    if a.dtype != np.uint8:
        a = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(a.tobytes())


def pad_to_multiple(a, multiple=4):
    """Edge-replicate on the bottom/right; returns (padded, (top, bottom, left, right))."""
    h, w = a.shape[-2:]
    ph = -h % multiple
    pw = -w % multiple
    cfg = [(0, 0)] * (a.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(a, cfg, mode="edge"), (0, ph, 0, pw)


def unpad(a, pad):
    top, bottom, left, right = pad
    h, w = a.shape[-2:]
    return a[..., top : h - bottom, left : w - right]


def load_pgm(path, multiple=4):
    """(1, H, W) float image in [0, 1], padded to a multiple of 4, plus the pad record."""
    from .tensor import Tensor

    raw = read_pgm(path).astype(np.float32) / 255.0
    padded, pad = pad_to_multiple(raw, multiple)
    return Tensor(padded[None]), pad


def load_mask(path, multiple=4):
    """Integer label map (pixel value = label id), padded like :func:`load_pgm`."""
    raw = read_pgm(path).astype(np.int64)
    return pad_to_multiple(raw, multiple)

"""Binary file formats.

CIM1 (complex grid)::

    b"CIMGv1\\0\\0" | u32 H | u32 W | u8 domain (0 image, 1 kspace) | 3 pad bytes
    | H*W pairs of f32 (re, im), row-major

MSK1 (mask)::

    b"MASKv1\\0\\0" | u32 H | u32 W | H*W bytes in {0, 1}, row-major

Variance maps are raw little-endian f32 grids next to a ``.json`` sidecar
holding the shape. All integers are little-endian. Writes go through a
temporary file and ``os.replace`` so readers never see a partial file.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError
from .kspace import CARTESIAN, DENSE, Mask

CIM_MAGIC = b"CIMGv1\0\0"
MSK_MAGIC = b"MASKv1\0\0"
DOMAIN_IMAGE = 0
DOMAIN_KSPACE = 1

_CIM_HEADER = struct.Struct("<8sIIB3x")
_MSK_HEADER = struct.Struct("<8sII")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_cim(data: np.ndarray, domain: int = DOMAIN_IMAGE) -> bytes:
    a = np.asarray(data)
    if a.ndim != 2:
        raise FormatError(f"CIM1 holds 2D grids, got shape {a.shape}")
    if domain not in (DOMAIN_IMAGE, DOMAIN_KSPACE):
        raise FormatError(f"unknown CIM1 domain tag {domain}")
    h, w = a.shape
    pairs = np.empty((h, w, 2), dtype="<f4")
    pairs[..., 0] = a.real
    pairs[..., 1] = a.imag
    return _CIM_HEADER.pack(CIM_MAGIC, h, w, domain) + pairs.tobytes()


def decode_cim(buf: bytes) -> tuple[np.ndarray, int]:
    """Returns ``(complex64 grid, domain tag)``."""
    if len(buf) < _CIM_HEADER.size:
        raise FormatError("CIM1 file shorter than its header")
    magic, h, w, domain = _CIM_HEADER.unpack_from(buf)
    if magic != CIM_MAGIC:
        raise FormatError(f"bad CIM1 magic {magic!r}")
    if domain not in (DOMAIN_IMAGE, DOMAIN_KSPACE):
        raise FormatError(f"unknown CIM1 domain tag {domain}")
    expected = _CIM_HEADER.size + 8 * h * w
    if len(buf) != expected:
        raise FormatError(f"CIM1 payload size {len(buf)} does not match {h}x{w} (expected {expected})")
    pairs = np.frombuffer(buf, dtype="<f4", offset=_CIM_HEADER.size).reshape(h, w, 2)
    out = np.empty((h, w), dtype=np.complex64)
    out.real = pairs[..., 0]
    out.imag = pairs[..., 1]
    return out, domain


def write_cim(path, data, domain: int = DOMAIN_IMAGE) -> None:
    atomic_write_bytes(path, encode_cim(data, domain))


def read_cim(path) -> tuple[np.ndarray, int]:
    return decode_cim(_read(path))


def encode_msk(mask) -> bytes:
    e = mask.entries if isinstance(mask, Mask) else np.asarray(mask)
    if e.ndim != 2:
        raise FormatError(f"MSK1 holds 2D grids, got shape {e.shape}")
    h, w = e.shape
    return _MSK_HEADER.pack(MSK_MAGIC, h, w) + np.ascontiguousarray(e, dtype=np.uint8).tobytes()


def decode_msk(buf: bytes) -> Mask:
    """Decode a mask; column structure is re-derived when every column is uniform."""
    if len(buf) < _MSK_HEADER.size:
        raise FormatError("MSK1 file shorter than its header")
    magic, h, w = _MSK_HEADER.unpack_from(buf)
    if magic != MSK_MAGIC:
        raise FormatError(f"bad MSK1 magic {magic!r}")
    if len(buf) != _MSK_HEADER.size + h * w:
        raise FormatError(f"MSK1 payload size does not match {h}x{w}")
    e = np.frombuffer(buf, dtype=np.uint8, offset=_MSK_HEADER.size).reshape(h, w)
    if (e > 1).any():
        raise FormatError("MSK1 entries must be 0 or 1")
    cols = e.any(axis=0)
    if (e.astype(bool) == cols[None, :]).all():
        return Mask(e.copy(), CARTESIAN, tuple(int(c) for c in np.flatnonzero(cols)))
    return Mask(e.copy(), DENSE, None)


def write_msk(path, mask) -> None:
    atomic_write_bytes(path, encode_msk(mask))


def read_msk(path) -> Mask:
    return decode_msk(_read(path))


def write_f32_grid(path, grid: np.ndarray, **meta) -> None:
    """Raw f32 LE grid plus ``<path>.json`` sidecar with the shape."""
    g = np.asarray(grid, dtype="<f4")
    if g.ndim != 2:
        raise FormatError(f"expected a 2D grid, got shape {g.shape}")
    path = Path(path)
    sidecar = {"dtype": "float32-le", "height": g.shape[0], "width": g.shape[1], **meta}
    atomic_write_bytes(path, g.tobytes())
    atomic_write_text(path.with_name(path.name + ".json"), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_f32_grid(path) -> np.ndarray:
    path = Path(path)
    try:
        meta = json.loads(_read(path.with_name(path.name + ".json")))
        h, w = int(meta["height"]), int(meta["width"])
    except (KeyError, ValueError, TypeError) as e:
        raise FormatError(f"bad sidecar for {path}: {e}") from e
    buf = _read(path)
    if len(buf) != 4 * h * w:
        raise FormatError(f"{path} holds {len(buf)} bytes, expected {4 * h * w}")
    return np.frombuffer(buf, dtype="<f4").reshape(h, w).copy()


def _read(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


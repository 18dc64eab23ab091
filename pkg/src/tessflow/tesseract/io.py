"""Binary volume format shared by tesseracts, masks and flow fields.

Layout (little-endian)::

    16 B   magic b"TESSVOL\\0", u32 version, u32 flags (bit 0: generic channel axis)
    16 B   four u32 extents (C or D, R, A, E)
    96 B   twelve f64: the ten PolarGrid fields, frame id, Doppler extent
    ...    row-major f32 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..formats import FormatError, read_header, write_header
from .build import Tesseract
from .grid import PolarGrid

__all__ = ["VOLUME_MAGIC", "VOLUME_VERSION", "write_volume", "read_volume", "write_tesseract",
           "read_tesseract", "FLAG_CHANNELS"]

VOLUME_MAGIC = b"TESSVOL\x00"
VOLUME_VERSION = 1
FLAG_CHANNELS = 1
_META = 16 + 12 * 8


def write_volume(path, data: np.ndarray, grid: PolarGrid, frame_id: int = 0,
                 channels: bool = True) -> None:
    """Write a (C, R, A, E) or (R, A, E) array with grid metadata."""
    arr = np.asarray(data)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != grid.spatial_shape:
        raise ValueError(f"volume extents {arr.shape} do not match grid {grid.spatial_shape}")
    meta = np.concatenate([grid.to_array(), [float(frame_id), float(grid.num_doppler)]])
    with open(path, "wb") as fh:
        write_header(fh, VOLUME_MAGIC, VOLUME_VERSION, FLAG_CHANNELS if channels else 0)
        fh.write(struct.pack("<4I", *arr.shape))
        fh.write(meta.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_volume(path) -> tuple:
    """Return (data float64 (C, R, A, E), grid, frame_id, flags)."""
    raw = Path(path).read_bytes()
    off = read_header(raw, VOLUME_MAGIC, VOLUME_VERSION)
    if len(raw) < off + _META:
        raise FormatError("truncated volume metadata")
    flags = struct.unpack_from("<I", raw, 12)[0]
    ext = struct.unpack_from("<4I", raw, off)
    if min(ext) < 1:
        raise FormatError(f"invalid extents {ext}")
    meta = np.frombuffer(raw, dtype="<f8", count=12, offset=off + 16)
    count = int(np.prod(ext))
    payload = off + _META
    if len(raw) != payload + 4 * count:
        raise FormatError(f"payload has {len(raw) - payload} bytes, expected {4 * count}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=payload).reshape(ext)
    try:
        num_doppler = ext[0] if not flags & FLAG_CHANNELS else int(meta[11])
        grid = PolarGrid.from_array(meta[:10], (num_doppler,) + ext[1:])
    except (ValueError, OverflowError) as exc:
        raise FormatError(f"invalid grid metadata: {exc}") from exc
    return data.astype(np.float64), grid, int(meta[10]), flags


def write_tesseract(path, t: Tesseract) -> None:
    write_volume(path, t.power, t.grid, t.frame_id, channels=False)


def read_tesseract(path) -> Tesseract:
    data, grid, frame_id, flags = read_volume(path)
    if flags & FLAG_CHANNELS:
        raise FormatError("file holds a generic volume, not a tesseract")
    if np.any(~np.isfinite(data)) or np.any(data < 0):
        raise FormatError("tesseract power must be finite and non-negative")
    return Tesseract(data, grid, frame_id)


"""Binary checkpoint format for network weights.

Layout (little-endian)::

    16 B   magic b"TFCKPT\\0\\0", u32 version, u32 flags
    4 B    u32 length n of the JSON metadata, then n bytes of UTF-8 JSON
           (model config, spatial extents, free-form extras)
    4 B    u32 parameter count
    per parameter: u16 name length, name bytes, u8 ndim, ndim x u32 shape
    ...    all parameters as contiguous f64 in the order listed
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from ..formats import FormatError, read_header, write_header
from .config import ModelConfig

__all__ = ["CHECKPOINT_MAGIC", "CHECKPOINT_VERSION", "CheckpointMismatch", "save_checkpoint",
           "load_checkpoint", "read_checkpoint"]

CHECKPOINT_MAGIC = b"TFCKPT\x00\x00"
CHECKPOINT_VERSION = 1


class CheckpointMismatch(ValueError):
    """A checkpoint does not fit the network it is loaded into."""


def save_checkpoint(path, net, extra: Optional[dict] = None) -> None:
    params = list(net.named_parameters())
    for name, p in params:
        if not np.all(np.isfinite(p.data)):
            raise ValueError(f"refusing to save non-finite parameter {name}")
    meta = {"config": net.cfg.to_dict(), "spatial": list(net.spatial), "extra": extra or {}}
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        write_header(fh, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params:
            enc = name.encode()
            fh.write(struct.pack("<H", len(enc)) + enc)
            fh.write(struct.pack("<B", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple:
    """Return (metadata dict, {name: array}) without building a network."""
    raw = Path(path).read_bytes()
    off = read_header(raw, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    try:
        (n,) = struct.unpack_from("<I", raw, off)
        off += 4
        meta = json.loads(raw[off: off + n].decode())
        off += n
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        entries = []
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", raw, off)
            name = raw[off + 2: off + 2 + ln].decode()
            off += 2 + ln
            (nd,) = struct.unpack_from("<B", raw, off)
            shape = struct.unpack_from(f"<{nd}I", raw, off + 1)
            off += 1 + 4 * nd
            entries.append((name, shape))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint index: {exc}") from exc
    total = sum(int(np.prod(s)) for _, s in entries)
    if len(raw) != off + 8 * total:
        raise FormatError(f"checkpoint payload has {len(raw) - off} bytes, expected {8 * total}")
    flat = np.frombuffer(raw, dtype="<f8", count=total, offset=off)
    state, pos = {}, 0
    for name, shape in entries:
        size = int(np.prod(shape))
        state[name] = flat[pos: pos + size].reshape(shape).astype(np.float64)
        pos += size
    return meta, state


def load_checkpoint(path, net=None):
    """Load weights into ``net``, or build a fresh network from the stored config."""
    meta, state = read_checkpoint(path)
    if net is None:
        from .network import RadarFlowNet

        try:
            cfg = ModelConfig.from_dict(meta["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointMismatch(f"checkpoint config is invalid: {exc}") from exc
        net = RadarFlowNet(cfg, tuple(meta["spatial"]))
    try:
        net.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointMismatch(str(exc)) from exc
    return net

"""Shared helpers for the little-endian binary file formats.

Every file starts with a 16-byte header: an 8-byte magic string, a u32
format version and a u32 flags word (currently always zero).
"""

from __future__ import annotations

import struct

__all__ = ["FormatError", "write_header", "read_header", "HEADER_SIZE"]

HEADER_SIZE = 16


class FormatError(ValueError):
    """A binary file is corrupt, truncated or of the wrong kind."""


def write_header(fh, magic: bytes, version: int, flags: int = 0) -> None:
    assert len(magic) == 8
    fh.write(magic + struct.pack("<II", version, flags))


def read_header(raw: bytes, magic: bytes, version: int) -> int:
    """Validate the header and return the payload offset."""
    if len(raw) < HEADER_SIZE:
        raise FormatError("file shorter than its header")
    if raw[:8] != magic:
        raise FormatError(f"bad magic {raw[:8]!r}, expected {magic!r}")
    got, _flags = struct.unpack_from("<II", raw, 8)
    if got != version:
        raise FormatError(f"unsupported format version {got} (expected {version})")
    return HEADER_SIZE

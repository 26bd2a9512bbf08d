"""Bitstream container: fixed header plus length-prefixed coded chunks.

Layout (little-endian): magic ``3DWC``, version byte, wavelet id byte,
spatial-levels byte, profile id byte, original width u32, original height
u32, lambda-index byte, model checksum u64 — 25 bytes total — followed by
the hyper-latent chunk and one chunk per slice, each framed as a u32
payload length plus payload bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import ParseError

MAGIC = b"3DWC"
VERSION = 1
HEADER_LEN = 25
_HEADER_FMT = "<4sBBBBIIBQ"
assert struct.calcsize(_HEADER_FMT) == HEADER_LEN


@dataclass(frozen=True)
class BitstreamHeader:
    wavelet_id: int
    spatial_levels: int
    profile_id: int
    width: int
    height: int
    lambda_index: int
    model_checksum: int


def serialize_header(h: BitstreamHeader) -> bytes:
    return struct.pack(_HEADER_FMT, MAGIC, VERSION, h.wavelet_id,
                       h.spatial_levels, h.profile_id, h.width, h.height,
                       h.lambda_index, h.model_checksum)


def parse_header(data: bytes) -> BitstreamHeader:
    if len(data) < HEADER_LEN:
        raise ParseError(f"bitstream shorter than the {HEADER_LEN}-byte header")
    magic, version, wav, levels, profile, w, h, lam, checksum = \
        struct.unpack_from(_HEADER_FMT, data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ParseError(f"unsupported bitstream version {version}")
    if w < 1 or h < 1:
        raise ParseError(f"invalid image dims {w}x{h}")
    return BitstreamHeader(wav, levels, profile, w, h, lam, checksum)


def write_chunks(chunks: list[bytes]) -> bytes:
    out = bytearray()
    for c in chunks:
        out += struct.pack("<I", len(c))
        out += c
    return bytes(out)


def read_chunks(data: bytes, offset: int, count: int) -> list[bytes]:
    chunks = []
    pos = offset
    for i in range(count):
        if pos + 4 > len(data):
            raise ParseError(f"chunk {i}: truncated length prefix")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise ParseError(f"chunk {i}: payload truncated ({n} bytes declared)")
        chunks.append(data[pos:pos + n])
        pos += n
    if pos != len(data):
        raise ParseError(f"{len(data) - pos} trailing bytes after the last chunk")
    return chunks

"""Bit-exact wire format for one compressed packet.

Layout (all multi-byte header fields big-endian):

    byte 0      version (currently 1)
    byte 1      quantizer kind: 0 = PQ, 1 = QSGD
    byte 2      s   (position-ID bits)
    byte 3      y   (centroid-ID bits)
    bytes 4-7   count (u32, number of entries)
    bytes 8-15  centroid metadata, 64 bits:
                  PQ:   binary32 lo, binary32 hi
                  QSGD: binary32 l2_norm, 32 zero bits
    bytes 16-   payload: count * (s + y) bits, MSB-first, each entry packed
                as position ID then centroid ID, zero-padded to a byte
                boundary

The 16-byte header is the whole per-packet overhead; the payload length
follows from the header, so packets are self-delimiting.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptPacket,
    FieldOverflow,
    InvalidBits,
    InvalidInput,
    PacketOverflow,
    UnsupportedVersion,
)
from .quantizer import CentroidMeta, PqMeta, QsgdMeta, QuantizerKind

VERSION = 1
HEADER_BYTES = 16
HEADER_BITS = 8 * HEADER_BYTES


@dataclass(frozen=True)
class PacketEntry:
    pid: int
    cid: int


@dataclass(frozen=True)
class DecodedPacket:
    entries: list[PacketEntry]
    y: int
    s: int
    kind: QuantizerKind
    meta: CentroidMeta


def packet_size_bytes(count: int, s: int, y: int) -> int:
    return HEADER_BYTES + (count * (s + y) + 7) // 8


def _check_widths(s: int, y: int) -> None:
    if not 1 <= s <= 32:
        raise InvalidBits(f"position-ID width must be in [1, 32], got {s}")
    if not 1 <= y <= 32:
        raise InvalidBits(f"centroid-ID width must be in [1, 32], got {y}")


def _pack_meta(kind: QuantizerKind, meta: CentroidMeta) -> bytes:
    if kind is QuantizerKind.PQ:
        if not isinstance(meta, PqMeta):
            raise InvalidInput("PQ packet needs PqMeta")
        return struct.pack(">ff", meta.lo, meta.hi)
    if not isinstance(meta, QsgdMeta):
        raise InvalidInput("QSGD packet needs QsgdMeta")
    return struct.pack(">f", meta.l2_norm) + b"\x00\x00\x00\x00"


def encode_packet(entries, y: int, s: int, kind: QuantizerKind, meta: CentroidMeta,
                  max_bits: int | None = None) -> bytes:
    """Serialize one packet.  ``max_bits`` enforces the packet-size budget."""
    _check_widths(s, y)
    count = len(entries)
    if count == 0:
        raise InvalidInput("packet must carry at least one entry")
    if count >= 1 << 32:
        raise FieldOverflow("entry count does not fit 32 bits")

    acc = 0
    for e in entries:
        pid, cid = int(e.pid), int(e.cid)
        if not 0 <= pid < 1 << s:
            raise FieldOverflow(f"pid {pid} does not fit {s} bits")
        if not 0 <= cid < 1 << y:
            raise FieldOverflow(f"cid {cid} does not fit {y} bits")
        acc = (acc << s) | pid
        acc = (acc << y) | cid
    payload_bits = count * (s + y)
    pad = (-payload_bits) % 8
    acc <<= pad

    size = packet_size_bytes(count, s, y)
    if max_bits is not None and size * 8 > max_bits:
        raise PacketOverflow(f"packet needs {size * 8} bits, budget is {max_bits}")

    header = struct.pack(">BBBBI", VERSION, kind.value, s, y, count)
    return header + _pack_meta(kind, meta) + acc.to_bytes(size - HEADER_BYTES, "big")


def decode_packet(data: bytes) -> DecodedPacket:
    """Parse one packet; the buffer must be exactly one packet long."""
    if len(data) < HEADER_BYTES:
        raise CorruptPacket("packet shorter than its header")
    version, kind_code, s, y, count = struct.unpack_from(">BBBBI", data, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"unknown packet version {version}")
    if kind_code not in (QuantizerKind.PQ.value, QuantizerKind.QSGD.value):
        raise CorruptPacket(f"unknown quantizer code {kind_code}")
    kind = QuantizerKind(kind_code)
    if not (1 <= s <= 32 and 1 <= y <= 32):
        raise CorruptPacket("field widths outside [1, 32]")
    if count < 1:
        raise CorruptPacket("packet must carry at least one entry")
    if len(data) != packet_size_bytes(count, s, y):
        raise CorruptPacket("payload length inconsistent with header")

    if kind is QuantizerKind.PQ:
        lo, hi = struct.unpack_from(">ff", data, 8)
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
            raise CorruptPacket("bad PQ centroid range")
        meta: CentroidMeta = PqMeta(lo=float(lo), hi=float(hi))
    else:
        (norm,) = struct.unpack_from(">f", data, 8)
        if not np.isfinite(norm) or norm < 0:
            raise CorruptPacket("bad QSGD norm")
        meta = QsgdMeta(l2_norm=float(norm))

    payload_bits = count * (s + y)
    acc = int.from_bytes(data[HEADER_BYTES:], "big") >> ((-payload_bits) % 8)
    entries = []
    y_mask = (1 << y) - 1
    s_mask = (1 << s) - 1
    for i in range(count):
        shift = (count - 1 - i) * (s + y)
        chunk = acc >> shift
        entries.append(PacketEntry(pid=(chunk >> y) & s_mask, cid=chunk & y_mask))
    return DecodedPacket(entries=entries, y=y, s=s, kind=kind, meta=meta)


def write_packets(path, packets: list[bytes]) -> None:
    """Write packets to a file: u32 (big-endian) packet count, then packets."""
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", len(packets)))
        for p in packets:
            fh.write(p)


def read_packets(path) -> list[bytes]:
    """Split a packet file back into individual packet byte strings."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise CorruptPacket("packet file shorter than its count prefix")
    (n,) = struct.unpack_from(">I", blob, 0)
    packets = []
    offset = 4
    for _ in range(n):
        if offset + HEADER_BYTES > len(blob):
            raise CorruptPacket("packet file truncated inside a header")
        _, _, s, y, count = struct.unpack_from(">BBBBI", blob, offset)
        size = packet_size_bytes(count, s, y)
        if offset + size > len(blob):
            raise CorruptPacket("packet file truncated inside a payload")
        packets.append(blob[offset:offset + size])
        offset += size
    if offset != len(blob):
        raise CorruptPacket("trailing bytes after the last packet")
    return packets

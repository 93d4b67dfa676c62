"""QUIC long-header probes and Version Negotiation packets (RFC 9000 / 8999)."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass

MIN_INITIAL_SIZE = 1200
MAX_CID_LEN = 20
QUIC_V1 = 0x00000001
DRAFT_MASK = 0xFFFFFF00
DRAFT_BASE = 0xFF000000


class QuicParseError(ValueError):
    pass


def version_name(code: int) -> str:
    """``v1``, ``draft-NN`` for 0xff0000NN, otherwise the hex code."""
    if code == QUIC_V1:
        return "v1"
    if code & DRAFT_MASK == DRAFT_BASE:
        return f"draft-{code & 0xFF}"
    return f"0x{code:08x}"


def version_code(name: str) -> int:
    if name == "v1":
        return QUIC_V1
    if name.startswith("draft-"):
        return DRAFT_BASE | int(name[6:])
    return int(name, 16)


@dataclass(frozen=True)
class VersionNegotiation:
    dcid: bytes
    scid: bytes
    versions: tuple

    @property
    def version_names(self) -> list[str]:
        return [version_name(v) for v in self.versions]


def _varint(value: int) -> bytes:
    if value < 1 << 6:
        return bytes([value])
    if value < 1 << 14:
        return struct.pack("!H", 0x4000 | value)
    if value < 1 << 30:
        return struct.pack("!I", 0x80000000 | value)
    return struct.pack("!Q", 0xC000000000000000 | value)


def _check_cid(cid: bytes, what: str, limit: int = MAX_CID_LEN):
    if len(cid) > limit:
        raise ValueError(f"{what} is {len(cid)} bytes, limit is {limit}")


def build_vn_probe(dcid: bytes, scid: bytes, unknown_version: int,
                   size: int = MIN_INITIAL_SIZE) -> bytes:
    """An Initial-shaped datagram carrying ``unknown_version``.

    Servers that do not support the version answer with Version
    Negotiation; the body is zero padding so the datagram meets the
    1200-byte minimum that servers enforce before responding.
    """
    _check_cid(dcid, "destination connection ID")
    _check_cid(scid, "source connection ID")
    if size < MIN_INITIAL_SIZE:
        raise ValueError("Initial datagrams must be at least 1200 bytes")
    # 0xc0: long header, fixed bit, type Initial, 1-byte packet number
    head = (bytes([0xC0]) + struct.pack("!I", unknown_version)
            + bytes([len(dcid)]) + dcid + bytes([len(scid)]) + scid + _varint(0))
    # Length covers packet number + payload; reserve 2 bytes for its varint
    remaining = size - len(head) - 2
    return head + _varint(remaining) + bytes(remaining)


@dataclass(frozen=True)
class LongHeader:
    first_byte: int
    version: int
    dcid: bytes
    scid: bytes
    rest: bytes


def parse_long_header(data: bytes) -> LongHeader:
    """Version-independent long-header fields (RFC 8999 section 5.1)."""
    if len(data) < 7 or not data[0] & 0x80:
        raise QuicParseError("not a long-header packet")
    version = struct.unpack("!I", data[1:5])[0]
    i = 5
    dlen = data[i]
    dcid = data[i + 1:i + 1 + dlen]
    i += 1 + dlen
    if len(dcid) != dlen or i >= len(data):
        raise QuicParseError("truncated destination connection ID")
    slen = data[i]
    scid = data[i + 1:i + 1 + slen]
    i += 1 + slen
    if len(scid) != slen:
        raise QuicParseError("truncated source connection ID")
    return LongHeader(data[0], version, bytes(dcid), bytes(scid), bytes(data[i:]))


def build_vn(dcid: bytes, scid: bytes, versions, unused_bits: int | None = None) -> bytes:
    """Version Negotiation packet; ``dcid``/``scid`` are as sent by the server."""
    versions = list(versions)
    if not versions:
        raise ValueError("version list must not be empty")
    _check_cid(dcid, "destination connection ID", 255)
    _check_cid(scid, "source connection ID", 255)
    if unused_bits is None:
        unused_bits = os.urandom(1)[0]
    first = 0x80 | (unused_bits & 0x7F)
    return (bytes([first]) + b"\x00\x00\x00\x00" + bytes([len(dcid)]) + dcid
            + bytes([len(scid)]) + scid + b"".join(struct.pack("!I", v) for v in versions))


def parse_vn(data: bytes) -> VersionNegotiation:
    hdr = parse_long_header(data)
    if hdr.version != 0:
        raise QuicParseError(f"version field is {hdr.version:#010x}, not a version negotiation")
    if not hdr.rest or len(hdr.rest) % 4:
        raise QuicParseError("supported-version list empty or not a multiple of 4 bytes")
    versions = struct.unpack(f"!{len(hdr.rest) // 4}I", hdr.rest)
    return VersionNegotiation(hdr.dcid, hdr.scid, tuple(versions))

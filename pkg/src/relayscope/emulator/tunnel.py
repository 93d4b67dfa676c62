"""Plaintext framing for the emulated relay tunnel.

Each frame is a 4-byte big-endian length followed by that many bytes: one
kind byte and the payload. The length counts the kind byte.
"""
from __future__ import annotations

import asyncio
import ipaddress
import struct
from dataclasses import dataclass
from enum import IntEnum

MAX_FRAME = 1 << 20


class FrameKind(IntEnum):
    CONNECT = 0
    DATA = 1
    EGRESS_STAMP = 2
    # client -> ingress only: which virtual ingress address the client dialled
    DIAL = 3


class FrameError(ValueError):
    pass


@dataclass(frozen=True)
class TunnelFrame:
    kind: FrameKind
    payload: bytes = b""

    @classmethod
    def connect(cls, host: str, port: int) -> "TunnelFrame":
        h = f"[{host}]" if ":" in host else host
        return cls(FrameKind.CONNECT, f"{h}:{port}".encode())

    @classmethod
    def data(cls, payload: bytes) -> "TunnelFrame":
        return cls(FrameKind.DATA, bytes(payload))

    @classmethod
    def stamp(cls, addr) -> "TunnelFrame":
        return cls(FrameKind.EGRESS_STAMP, ipaddress.ip_address(addr).packed)

    @classmethod
    def dial(cls, addr) -> "TunnelFrame":
        return cls(FrameKind.DIAL, ipaddress.ip_address(addr).packed)

    def target(self) -> tuple[str, int]:
        text = self.payload.decode()
        host, sep, port = text.rpartition(":")
        if not sep or not port.isdigit() or not host:
            raise FrameError(f"bad Connect target {text!r}")
        return host.strip("[]"), int(port)

    def address(self):
        if len(self.payload) not in (4, 16):
            raise FrameError("address payload must be 4 or 16 bytes")
        return ipaddress.ip_address(self.payload)

    def encode(self) -> bytes:
        return struct.pack("!IB", len(self.payload) + 1, self.kind) + self.payload


def decode_frame(data: bytes) -> tuple[TunnelFrame, int]:
    """Parse one frame from the front of ``data``; returns (frame, bytes used)."""
    if len(data) < 5:
        raise FrameError("truncated frame header")
    length, kind = struct.unpack("!IB", data[:5])
    if length < 1 or length > MAX_FRAME:
        raise FrameError(f"bad frame length {length}")
    if len(data) < 4 + length:
        raise FrameError("truncated frame")
    try:
        kind = FrameKind(kind)
    except ValueError:
        raise FrameError(f"unknown frame kind {kind}") from None
    return TunnelFrame(kind, bytes(data[5:4 + length])), 4 + length


async def read_frame(reader: asyncio.StreamReader):
    """Next frame, or None on a clean EOF at a frame boundary."""
    try:
        head = await reader.readexactly(5)
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise FrameError("truncated frame header") from None
    length, kind = struct.unpack("!IB", head)
    if length < 1 or length > MAX_FRAME:
        raise FrameError(f"bad frame length {length}")
    try:
        kind = FrameKind(kind)
    except ValueError:
        raise FrameError(f"unknown frame kind {kind}") from None
    try:
        payload = await reader.readexactly(length - 1)
    except asyncio.IncompleteReadError:
        raise FrameError("truncated frame") from None
    return TunnelFrame(kind, payload)


def write_frame(writer: asyncio.StreamWriter, frame: TunnelFrame) -> None:
    writer.write(frame.encode())

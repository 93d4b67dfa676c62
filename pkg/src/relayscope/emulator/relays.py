"""Ingress and egress relays, the egress address pool and the echo service."""
from __future__ import annotations

import asyncio
import ipaddress
import logging
import random
from dataclasses import dataclass
from typing import Optional

from ..netcore.quic import MIN_INITIAL_SIZE, QUIC_V1, QuicParseError, build_vn, parse_long_header
from .deployment import RotationPolicy
from .tunnel import FrameError, FrameKind, TunnelFrame, read_frame, write_frame

log = logging.getLogger(__name__)

ADVERTISED_VERSIONS = (QUIC_V1, 0xFF00001D, 0xFF00001C, 0xFF00001B)
_PUMP_CHUNK = 65536


class EgressPool:
    """Per-connection egress address selection.

    ``uniform`` draws independently for every connection; ``sticky`` keeps
    an address for ``k`` connections and then moves to a different one.
    Draws are serialised by the event loop, the pool's only shared state.
    """

    def __init__(self, addresses, policy: Optional[RotationPolicy] = None, seed: Optional[int] = None):
        self.addresses = [ipaddress.ip_address(a) for a in addresses]
        if not self.addresses:
            raise ValueError("egress pool is empty")
        self.policy = policy or RotationPolicy()
        self.rng = random.Random(seed)
        self.count = 0
        self.current = None

    def select(self):
        if self.policy.kind == "uniform":
            choice = self.rng.choice(self.addresses)
        elif self.current is None:
            choice = self.rng.choice(self.addresses)
        elif self.count % self.policy.k == 0:
            others = [a for a in self.addresses if a != self.current]
            choice = self.rng.choice(others) if others else self.current
        else:
            choice = self.current
        self.current = choice
        self.count += 1
        return choice


class VnResponder(asyncio.DatagramProtocol):
    """UDP side of the ingress: answers unknown-version Initials with a VN."""

    def __init__(self, versions=ADVERTISED_VERSIONS, known=(QUIC_V1,)):
        self.versions = tuple(versions)
        self.known = set(known)
        self.transport = None
        self.log: list[dict] = []

    def connection_made(self, transport):
        self.transport = transport

    def datagram_received(self, data, addr):
        try:
            hdr = parse_long_header(data)
        except QuicParseError:
            return
        if len(data) < MIN_INITIAL_SIZE or hdr.version == 0:
            outcome = "ignored"
        elif hdr.version in self.known:
            # no QUIC stack behind the ingress: a known version just times out
            outcome = "silent"
        else:
            self.transport.sendto(build_vn(hdr.scid, hdr.dcid, self.versions), addr)
            outcome = "vn"
        self.log.append({"peer": addr[0], "version": hdr.version, "outcome": outcome})


async def _pump(reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
    try:
        while True:
            chunk = await reader.read(_PUMP_CHUNK)
            if not chunk:
                break
            writer.write(chunk)
            await writer.drain()
    except ConnectionError:
        pass
    finally:
        try:
            if writer.can_write_eof():
                writer.write_eof()
        except (OSError, RuntimeError):
            pass


async def _close(writer: Optional[asyncio.StreamWriter]):
    if writer is None:
        return
    writer.close()
    try:
        await writer.wait_closed()
    except (ConnectionError, OSError):
        pass


@dataclass
class IngressConnection:
    peer: str
    ingress: Optional[str]
    target: Optional[str]
    error: Optional[str] = None


class IngressRelay:
    """TCP side of the ingress: accepts tunnels and hands them to the egress.

    A single listening socket stands in for every virtual ingress address;
    the client names the one it dialled in a leading Dial frame.
    """

    def __init__(self, egress_endpoint: tuple[str, int], ingress_addresses=None):
        self.egress_endpoint = egress_endpoint
        self.known = {ipaddress.ip_address(a) for a in ingress_addresses} if ingress_addresses else None
        self.log: list[IngressConnection] = []

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        peer = writer.get_extra_info("peername")
        conn = IngressConnection(peer[0] if peer else "?", None, None)
        self.log.append(conn)
        upstream = None
        try:
            frame = await read_frame(reader)
            if frame is not None and frame.kind == FrameKind.DIAL:
                addr = frame.address()
                if self.known is not None and addr not in self.known:
                    raise FrameError(f"{addr} is not an ingress address of this deployment")
                conn.ingress = str(addr)
                frame = await read_frame(reader)
            if frame is None or frame.kind != FrameKind.CONNECT:
                raise FrameError("first frame is not Connect")
            host, port = frame.target()
            conn.target = f"{host}:{port}"
            up_reader, upstream = await asyncio.open_connection(*self.egress_endpoint)
            write_frame(upstream, frame)
            await upstream.drain()
            await asyncio.gather(_pump(reader, upstream), _pump(up_reader, writer))
        except (FrameError, UnicodeDecodeError) as exc:
            conn.error = str(exc)
            log.info("ingress closing tunnel from %s: %s", conn.peer, exc)
        except OSError as exc:
            conn.error = f"egress unreachable: {exc}"
        finally:
            await _close(upstream)
            await _close(writer)


@dataclass
class EgressConnection:
    target: Optional[str]
    egress: Optional[str]
    error: Optional[str] = None


class EgressRelay:
    """Opens the connection to the target on behalf of the tunnel.

    The selected address reaches the client as an EgressStamp frame and the
    target as a leading stamp frame, in place of binding it as source.
    """

    def __init__(self, pool: EgressPool):
        self.pool = pool
        self.log: list[EgressConnection] = []

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        conn = EgressConnection(None, None)
        self.log.append(conn)
        target_writer = None
        try:
            frame = await read_frame(reader)
            if frame is None or frame.kind != FrameKind.CONNECT:
                raise FrameError("first frame is not Connect")
            host, port = frame.target()
            conn.target = f"{host}:{port}"
            addr = self.pool.select()
            conn.egress = str(addr)
            write_frame(writer, TunnelFrame.stamp(addr))
            await writer.drain()
            t_reader, target_writer = await asyncio.open_connection(host, port)
            write_frame(target_writer, TunnelFrame.stamp(addr))
            await target_writer.drain()
            await asyncio.gather(self._tunnel_to_target(reader, target_writer),
                                 self._target_to_tunnel(t_reader, writer))
        except (FrameError, UnicodeDecodeError) as exc:
            conn.error = str(exc)
            log.info("egress closing tunnel: %s", exc)
        except OSError as exc:
            conn.error = f"target unreachable: {exc}"
        finally:
            await _close(target_writer)
            await _close(writer)

    @staticmethod
    async def _tunnel_to_target(reader, target_writer):
        try:
            while True:
                frame = await read_frame(reader)
                if frame is None:
                    break
                if frame.kind != FrameKind.DATA:
                    raise FrameError(f"unexpected {frame.kind.name} frame inside tunnel")
                target_writer.write(frame.payload)
                await target_writer.drain()
        except ConnectionError:
            pass
        finally:
            try:
                if target_writer.can_write_eof():
                    target_writer.write_eof()
            except (OSError, RuntimeError):
                pass

    @staticmethod
    async def _target_to_tunnel(t_reader, writer):
        try:
            while True:
                chunk = await t_reader.read(_PUMP_CHUNK)
                if not chunk:
                    break
                write_frame(writer, TunnelFrame.data(chunk))
                await writer.drain()
        except ConnectionError:
            pass
        finally:
            try:
                if writer.can_write_eof():
                    writer.write_eof()
            except (OSError, RuntimeError):
                pass


class EchoServer:
    """Plain-text address mirror: replies with the address it sees.

    A tunnel's leading stamp frame stands for the connection's source
    address; without one the literal peer address is returned.
    """

    def __init__(self, read_timeout: float = 5.0):
        self.read_timeout = read_timeout

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        peer = writer.get_extra_info("peername")
        seen = peer[0] if peer else "?"
        try:
            head = await asyncio.wait_for(reader.read(5), self.read_timeout)
            while 0 < len(head) < 5:
                more = await asyncio.wait_for(reader.read(5 - len(head)), self.read_timeout)
                if not more:
                    break
                head += more
            if len(head) == 5 and head[4] == FrameKind.EGRESS_STAMP and head[:4] in (b"\0\0\0\x05",
                                                                                       b"\0\0\0\x11"):
                payload = await asyncio.wait_for(reader.readexactly(head[3] - 1), self.read_timeout)
                seen = str(ipaddress.ip_address(payload))
                request = b""
            else:
                request = head
            while b"\r\n\r\n" not in request:
                chunk = await asyncio.wait_for(reader.read(4096), self.read_timeout)
                if not chunk:
                    break
                request += chunk
            body = seen.encode()
            writer.write(b"HTTP/1.0 200 OK\r\nContent-Type: text/plain\r\nContent-Length: "
                         + str(len(body)).encode() + b"\r\n\r\n" + body)
            await writer.drain()
        except (asyncio.TimeoutError, asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            await _close(writer)


def http_body(response: bytes) -> bytes:
    _, sep, body = response.partition(b"\r\n\r\n")
    if not sep:
        raise ValueError("incomplete HTTP response")
    return body

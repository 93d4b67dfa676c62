"""Blocking single-shot UDP helpers for DNS queries and QUIC probes."""
from __future__ import annotations

import os
import random
import socket
from typing import Optional

from .dns import DnsMessage, DnsParseError, EcsOption, decode_dns, encode_dns, make_query
from .quic import QuicParseError, VersionNegotiation, build_vn_probe, parse_vn


def _family(host: str) -> int:
    return socket.AF_INET6 if ":" in host else socket.AF_INET


def dns_query(server: tuple[str, int], name: str, qtype: int, *, ecs: Optional[EcsOption] = None,
              timeout: float = 2.0, rng: Optional[random.Random] = None) -> Optional[DnsMessage]:
    """Send one query; None on timeout. Responses with a foreign id are ignored."""
    qid = (rng or random).randrange(1 << 16)
    wire = encode_dns(make_query(name, qtype, id=qid, ecs=ecs))
    with socket.socket(_family(server[0]), socket.SOCK_DGRAM) as sock:
        sock.settimeout(timeout)
        sock.connect(server)
        sock.send(wire)
        while True:
            try:
                data = sock.recv(65535)
            except socket.timeout:
                return None
            try:
                msg = decode_dns(data)
            except DnsParseError:
                continue
            if msg.id == qid and msg.qr:
                return msg


def vn_probe(server: tuple[str, int], version: int = 0x1A2A3A4A,
             timeout: float = 2.0) -> Optional[VersionNegotiation]:
    """Probe ``server`` with an unknown version; None when it stays silent."""
    dcid, scid = os.urandom(8), os.urandom(8)
    with socket.socket(_family(server[0]), socket.SOCK_DGRAM) as sock:
        sock.settimeout(timeout)
        sock.connect(server)
        sock.send(build_vn_probe(dcid, scid, version))
        while True:
            try:
                data = sock.recv(65535)
            except (socket.timeout, ConnectionRefusedError):
                return None
            try:
                vn = parse_vn(data)
            except QuicParseError:
                continue
            # the server swaps IDs: its DCID is our SCID
            if vn.dcid == scid and vn.scid == dcid:
                return vn

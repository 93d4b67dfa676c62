"""ECS-aware authoritative DNS server for an emulated deployment."""
from __future__ import annotations

import asyncio
import ipaddress
import logging
import random
from dataclasses import dataclass, field
from typing import Optional

from ..netcore.dns import (
    DnsMessage, DnsParseError, EcsOption, Edns, QType, Rcode, ResourceRecord, decode_dns,
    encode_dns,
)
from ..netcore.prefix import IpPrefix
from .deployment import CONTROL_ANSWER, DeploymentSpec

log = logging.getLogger(__name__)


@dataclass
class QueryLogEntry:
    source: str
    name: str
    qtype: int
    client: Optional[str]
    rcode: int
    scope: Optional[int]
    operator: Optional[str]
    answers: list = field(default_factory=list)


def _client_prefix(ecs: Optional[EcsOption], source: str) -> IpPrefix:
    if ecs is not None:
        net = ecs.network
        return IpPrefix(net.version, int(net.network_address), net.prefixlen)
    addr = ipaddress.ip_address(source.split("%")[0])
    if isinstance(addr, ipaddress.IPv6Address) and addr.ipv4_mapped:
        addr = addr.ipv4_mapped
    return IpPrefix.from_address(addr, 24 if addr.version == 4 else 56)


class AuthServer(asyncio.DatagramProtocol):
    """Answers queries for the zone of a :class:`DeploymentSpec`.

    ``jitter`` delays each reply by a uniform random time up to that many
    seconds, which reorders replies under concurrent load.
    """

    def __init__(self, spec: DeploymentSpec, jitter: float = 0.0, seed: Optional[int] = None,
                 keep_log: bool = True):
        self.spec = spec
        self.jitter = jitter
        self.rng = random.Random(seed)
        self.keep_log = keep_log
        self.log: list[QueryLogEntry] = []
        self.transport = None

    def respond(self, query: DnsMessage, source: str) -> Optional[DnsMessage]:
        """Build the reply for ``query``; None means stay silent."""
        q = query.question
        if query.qr or q is None:
            return None
        zone = self.spec.zone
        name = q.name.lower()
        ecs = query.ecs
        client = _client_prefix(ecs, source)
        base = dict(id=query.id, qr=True, aa=True, rd=query.rd, question=q)
        relay_names = (zone.quic_domain.lower(), zone.fallback_domain.lower())
        persona = self.spec.persona_for(client)
        entry = QueryLogEntry(source, name, int(q.qtype), str(client), 0, None, None)

        def finish(rcode=Rcode.NOERROR, answers=(), scope=None):
            edns = None
            if query.edns is not None:
                opts = ()
                if ecs is not None:
                    s = 0 if scope is None else min(scope, 128 if ecs.family == 2 else 32)
                    opts = (EcsOption(ecs.family, ecs.source_len, s, ecs.address),)
                edns = Edns(options=opts)
            entry.rcode, entry.scope = int(rcode), scope
            entry.answers = [str(r.rdata) for r in answers]
            if self.keep_log:
                self.log.append(entry)
            return DnsMessage(rcode=rcode, answers=tuple(answers), edns=edns, **base)

        def records(addresses, qtype):
            ttl = self.spec.answer_policy.ttl
            return [ResourceRecord(q.name, qtype, ttl, a) for a in addresses]

        if persona is not None and (name in relay_names or persona.kind == "refused_all"):
            kind = persona.kind
            if kind == "drop":
                entry.rcode = -1
                if self.keep_log:
                    self.log.append(entry)
                return None
            if kind == "nxdomain":
                return finish(Rcode.NXDOMAIN)
            if kind == "empty":
                return finish(Rcode.NOERROR)
            if kind in ("refused", "refused_all"):
                return finish(Rcode.REFUSED)
            if kind == "servfail":
                return finish(Rcode.SERVFAIL)
            if kind == "formerr":
                return finish(Rcode.FORMERR)
            if kind == "hijack":
                target = ipaddress.ip_address(persona.hijack_to)
                qt = QType.A if target.version == 4 else QType.AAAA
                if q.qtype != qt:
                    return finish(Rcode.NOERROR)
                return finish(Rcode.NOERROR, records([target], qt), scope=24)

        if name in relay_names:
            if q.qtype not in (QType.A, QType.AAAA):
                return finish(Rcode.NOERROR)
            fam = 4 if q.qtype == QType.A else 6
            ans = self.spec.answer(client, fam, fallback=name == relay_names[1])
            entry.operator = ans.operator
            return finish(Rcode.NOERROR, records(ans.addresses, q.qtype), scope=ans.scope)
        if name == zone.whoami_domain.lower():
            addr = ipaddress.ip_address(source.split("%")[0])
            want = QType.A if addr.version == 4 else QType.AAAA
            return finish(Rcode.NOERROR, records([addr], want) if q.qtype == want else [], scope=0)
        if name == zone.control_domain.lower():
            if q.qtype != QType.A:
                return finish(Rcode.NOERROR)
            return finish(Rcode.NOERROR, records([CONTROL_ANSWER], QType.A), scope=0)
        return finish(Rcode.NXDOMAIN)

    # --- asyncio plumbing ------------------------------------------------------

    def connection_made(self, transport):
        self.transport = transport

    def datagram_received(self, data, addr):
        try:
            query = decode_dns(data)
        except DnsParseError as exc:
            log.debug("dropping malformed query from %s: %s", addr, exc)
            return
        reply = self.respond(query, addr[0])
        if reply is None:
            return
        wire = encode_dns(reply)
        if self.jitter:
            asyncio.get_running_loop().call_later(self.rng.uniform(0, self.jitter),
                                                  self._send, wire, addr)
        else:
            self._send(wire, addr)

    def _send(self, wire, addr):
        if self.transport is not None and not self.transport.is_closing():
            self.transport.sendto(wire, addr)

    def error_received(self, exc):
        log.debug("dns server socket error: %s", exc)

    def connection_lost(self, exc):
        self.transport = None


async def serve_auth_dns(spec: DeploymentSpec, host: str = "127.0.0.1", port: int = 0,
                         **kwargs) -> AuthServer:
    """Start the server; the bound port is ``server.transport.get_extra_info('sockname')``."""
    server = AuthServer(spec, **kwargs)
    loop = asyncio.get_running_loop()
    try:
        await loop.create_datagram_endpoint(lambda: server, local_addr=(host, port))
    except OSError as exc:
        raise RuntimeError(f"cannot bind DNS server to {host}:{port}: {exc}") from exc
    return server

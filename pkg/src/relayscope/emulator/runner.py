"""Start and stop a complete emulated deployment on loopback."""
from __future__ import annotations

import asyncio
import contextlib
import socket
import threading
from dataclasses import dataclass
from typing import Optional

from .deployment import DeploymentSpec
from .dns_server import AuthServer
from .relays import EchoServer, EgressPool, EgressRelay, IngressRelay, VnResponder


@dataclass
class Endpoints:
    dns: tuple
    ingress: tuple
    egress: tuple
    echo: tuple

    def to_dict(self) -> dict:
        return {k: f"{v[0]}:{v[1]}" for k, v in self.__dict__.items()}


class Emulator:
    """DNS, ingress (TCP and UDP on one port), egress and echo servers.

    Ports of 0 pick free ports; the ingress UDP socket reuses the TCP port.
    """

    def __init__(self, spec: DeploymentSpec, host: str = "127.0.0.1", *, dns_port: int = 0,
                 ingress_port: int = 0, egress_port: int = 0, echo_port: int = 0,
                 dns_jitter: float = 0.0, egress_pool=None, keep_dns_log: bool = True):
        self.spec = spec
        self.host = host
        self.ports = dict(dns=dns_port, ingress=ingress_port, egress=egress_port, echo=echo_port)
        self.dns = AuthServer(spec, jitter=dns_jitter, seed=spec.seed, keep_log=keep_dns_log)
        pool = egress_pool if egress_pool is not None else spec.egress_pool
        self.pool = EgressPool(pool, spec.rotation_policy, seed=spec.seed)
        self.egress = EgressRelay(self.pool)
        self.vn = VnResponder()
        self.ingress: Optional[IngressRelay] = None
        self.echo = EchoServer()
        self.endpoints: Optional[Endpoints] = None
        self._servers = []
        self._transports = []
        self._tasks: set = set()

    def _tracked(self, handler):
        async def run(reader, writer):
            task = asyncio.current_task()
            self._tasks.add(task)
            try:
                await handler(reader, writer)
            finally:
                self._tasks.discard(task)
        return run

    async def start(self) -> Endpoints:
        loop = asyncio.get_running_loop()
        try:
            echo = await asyncio.start_server(self._tracked(self.echo.handle), self.host,
                                              self.ports["echo"])
            self._servers.append(echo)
            egress = await asyncio.start_server(self._tracked(self.egress.handle), self.host,
                                                self.ports["egress"])
            self._servers.append(egress)
            egress_ep = egress.sockets[0].getsockname()[:2]
            addrs = list(self.spec.ingress_v4 | self.spec.ingress_v6)
            for op in self.spec.operators:
                addrs += op.fallback_v4
            self.ingress = IngressRelay(egress_ep, addrs)
            ingress, udp = await self._bind_ingress()
            self._servers.append(ingress)
            self._transports.append(udp)
            dns, _ = await loop.create_datagram_endpoint(lambda: self.dns,
                                                         local_addr=(self.host, self.ports["dns"]))
            self._transports.append(dns)
        except OSError as exc:
            await self.stop()
            raise RuntimeError(f"emulator failed to bind: {exc}") from exc
        self.endpoints = Endpoints(
            dns=dns.get_extra_info("sockname")[:2],
            ingress=ingress.sockets[0].getsockname()[:2],
            egress=egress_ep,
            echo=echo.sockets[0].getsockname()[:2],
        )
        return self.endpoints

    async def _bind_ingress(self):
        loop = asyncio.get_running_loop()
        want = self.ports["ingress"]
        for _ in range(20):
            tcp = await asyncio.start_server(self._tracked(self.ingress.handle), self.host, want)
            port = tcp.sockets[0].getsockname()[1]
            try:
                udp, _ = await loop.create_datagram_endpoint(lambda: self.vn,
                                                             local_addr=(self.host, port))
                return tcp, udp
            except OSError:
                tcp.close()
                await tcp.wait_closed()
                if want:
                    raise
        raise OSError("no port free for both TCP and UDP ingress")

    async def stop(self):
        for t in self._transports:
            t.close()
        for s in self._servers:
            s.close()
        for task in list(self._tasks):
            task.cancel()
        if self._tasks:
            await asyncio.gather(*self._tasks, return_exceptions=True)
        for s in self._servers:
            with contextlib.suppress(Exception):
                await s.wait_closed()
        self._servers, self._transports = [], []


class EmulatorThread:
    """Runs an :class:`Emulator` on its own event loop in a daemon thread."""

    def __init__(self, spec: DeploymentSpec, **kwargs):
        self.emulator = Emulator(spec, **kwargs)
        self.loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self.loop.run_forever, daemon=True)

    @property
    def endpoints(self) -> Endpoints:
        return self.emulator.endpoints

    def call(self, coro, timeout: float = 30.0):
        return asyncio.run_coroutine_threadsafe(coro, self.loop).result(timeout)

    def start(self) -> Endpoints:
        self._thread.start()
        return self.call(self.emulator.start())

    def stop(self):
        if not self._thread.is_alive():
            return
        self.call(self.emulator.stop())
        self.loop.call_soon_threadsafe(self.loop.stop)
        self._thread.join(10)
        self.loop.close()

    def __enter__(self) -> "EmulatorThread":
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()


def parse_endpoint(text: str, default_port: Optional[int] = None) -> tuple[str, int]:
    """'host:port', '[v6]:port' or a bare host when a default port is given."""
    text = text.strip()
    if text.startswith("["):
        host, _, rest = text[1:].partition("]")
        port = rest.lstrip(":")
    elif text.count(":") == 1:
        host, port = text.split(":")
    else:
        host, port = text, ""
    if not port:
        if default_port is None:
            raise ValueError(f"endpoint {text!r} needs a port")
        port = str(default_port)
    if not port.isdigit() or not 0 < int(port) < 65536:
        raise ValueError(f"bad port in endpoint {text!r}")
    socket.getaddrinfo(host, None)  # raises for unusable hosts
    return host, int(port)

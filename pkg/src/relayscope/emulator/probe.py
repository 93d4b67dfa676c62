"""Probe client: repeated echo requests through the relay on parallel channels."""
from __future__ import annotations

import asyncio
import ipaddress
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..analytics.rotation import Observation, RotationTrace
from ..netcore.client import dns_query
from ..netcore.dns import QType, Rcode, answer_addresses
from .relays import http_body
from .tunnel import FrameError, FrameKind, TunnelFrame, read_frame, write_frame


@dataclass
class ProbeConfig:
    dns: tuple
    ingress: tuple
    echo: tuple
    domain: str = "mask.icloud.com"
    rounds: int = 10
    interval: float = 0.0
    channels: tuple = ("curl", "safari")
    override: dict = field(default_factory=dict)
    timeout: float = 5.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.channels:
            raise ValueError("need at least one channel")


async def _resolve(cfg: ProbeConfig, rng: random.Random):
    forced = cfg.override.get(cfg.domain) or cfg.override.get(cfg.domain.lower())
    if forced:
        return ipaddress.ip_address(forced)
    msg = await asyncio.to_thread(dns_query, cfg.dns, cfg.domain, QType.A,
                                  timeout=cfg.timeout, rng=rng)
    if msg is None:
        raise LookupError("resolution timed out")
    if msg.rcode != Rcode.NOERROR:
        raise LookupError(f"resolution failed with rcode {msg.rcode}")
    addrs = answer_addresses(msg)
    if not addrs:
        raise LookupError("resolution returned no addresses")
    return addrs[0]


async def _fetch(cfg: ProbeConfig, ingress) -> tuple[str, str]:
    reader, writer = await asyncio.open_connection(*cfg.ingress)
    try:
        write_frame(writer, TunnelFrame.dial(ingress))
        write_frame(writer, TunnelFrame.connect(*cfg.echo))
        write_frame(writer, TunnelFrame.data(b"GET / HTTP/1.0\r\nHost: echo\r\n\r\n"))
        await writer.drain()
        stamp, response = None, b""
        while True:
            frame = await read_frame(reader)
            if frame is None:
                break
            if frame.kind == FrameKind.EGRESS_STAMP:
                if stamp is not None:
                    raise FrameError("second EgressStamp on one tunnel")
                stamp = str(frame.address())
            elif frame.kind == FrameKind.DATA:
                response += frame.payload
        if stamp is None:
            raise FrameError("tunnel closed without an EgressStamp")
        return stamp, http_body(response).decode().strip()
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except OSError:
            pass


async def _observe(cfg: ProbeConfig, channel: str, ts: int, rng: random.Random) -> Observation:
    try:
        ingress = await _resolve(cfg, rng)
    except (LookupError, OSError) as exc:
        return Observation(ts, channel, None, None, f"resolve: {exc}")
    try:
        stamp, seen = await asyncio.wait_for(_fetch(cfg, ingress), cfg.timeout)
    except asyncio.TimeoutError:
        return Observation(ts, channel, str(ingress), None, "tunnel: timed out")
    except (OSError, FrameError, ValueError) as exc:
        return Observation(ts, channel, str(ingress), None, f"tunnel: {exc or type(exc).__name__}")
    if seen != stamp:
        return Observation(ts, channel, str(ingress), seen, f"echo saw {seen}, stamp said {stamp}")
    return Observation(ts, channel, str(ingress), seen)


async def run_probe_async(cfg: ProbeConfig, clock: Callable[[], float] = time.time,
                          seed: Optional[int] = None) -> RotationTrace:
    """One row per round and channel; failed attempts are rows with an error."""
    rng = random.Random(seed)
    rows = []
    for r in range(cfg.rounds):
        ts = int(clock() * 1000)
        rows += await asyncio.gather(*(_observe(cfg, ch, ts, rng) for ch in cfg.channels))
        if cfg.interval and r + 1 < cfg.rounds:
            await asyncio.sleep(cfg.interval)
    return RotationTrace(rows)


def run_probe(cfg: ProbeConfig, **kwargs) -> RotationTrace:
    return asyncio.run(run_probe_async(cfg, **kwargs))

"""ECS enumeration of relay ingress addresses.

The scanner walks a :class:`ScanPlan` of client /24 subnets, sending one A
query per unit with the subnet in an ECS option. When an answer's scope is
shorter than /24 the rest of the scope prefix is not queried.
"""
from __future__ import annotations

import asyncio
import ipaddress
import json
import logging
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..netcore.dns import (
    DnsParseError, EcsOption, QType, Rcode, answer_addresses, decode_dns, encode_dns, make_query,
    rcode_name,
)
from .catalog import IngressCatalog
from .plan import ScanPlan, plan_scan, unit_prefix
from .ratelimit import SlidingWindowLimiter

log = logging.getLogger(__name__)


@dataclass
class ScanConfig:
    target_domain: str
    server: tuple
    routable: list = field(default_factory=list)
    sparse_stride: Optional[int] = 12
    blocklist: list = field(default_factory=list)
    qtype: str = "A"
    rate_qps: float = 20.0
    max_inflight: int = 100
    timeout_ms: int = 2000
    retries: int = 1
    # consecutive ICMP-unreachable errors before the scan is abandoned
    abort_after: int = 50
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.qtype != "A":
            raise ValueError("ECS enumeration supports A queries only")
        if self.rate_qps <= 0:
            raise ValueError("rate_qps must be positive")
        if self.sparse_stride is not None and not 0 <= self.sparse_stride <= 24:
            raise ValueError("sparse_stride must be at most 24")
        if self.max_inflight < 1 or self.retries < 0 or self.timeout_ms <= 0:
            raise ValueError("max_inflight, retries and timeout_ms must be positive")
        host, port = self.server
        self.server = (str(host), int(port))


@dataclass
class ScanStats:
    planned_units: int = 0
    plan_size: int = 0
    queries_sent: int = 0
    queries_skipped_by_scope: int = 0
    queries_skipped_unrouted: int = 0
    not_attempted: int = 0
    timeouts: int = 0
    retries_used: int = 0
    errors: int = 0
    aborted: bool = False

    def conserved(self) -> bool:
        return self.planned_units == (self.queries_sent + self.queries_skipped_by_scope
                                      + self.queries_skipped_unrouted + self.not_attempted)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class _Reply:
    rcode: int
    scope: int
    answers: list


class _Coverage:
    """Set of ECS scope prefixes shorter than /24, queried per /24 index."""

    def __init__(self):
        self._sets: dict[int, set] = {}
        self._lengths: list[int] = []

    def add(self, idx: int, length: int):
        if length not in self._sets:
            self._sets[length] = set()
            self._lengths = sorted(self._sets)
        self._sets[length].add(idx >> (24 - length))

    def covers(self, idx: int) -> bool:
        return any((idx >> (24 - n)) in self._sets[n] for n in self._lengths)


class _Protocol(asyncio.DatagramProtocol):
    def __init__(self, scanner: "_Scanner"):
        self.scanner = scanner

    def datagram_received(self, data, addr):
        self.scanner.on_datagram(data)

    def error_received(self, exc):
        self.scanner.on_error(exc)


class _Scanner:
    def __init__(self, config: ScanConfig, plan: ScanPlan, clock: Callable[[], float], sink):
        self.cfg = config
        self.plan = plan
        self.stats = ScanStats(planned_units=plan.unrouted_skipped + len(plan), plan_size=len(plan),
                               queries_skipped_unrouted=plan.unrouted_skipped)
        self.limiter = SlidingWindowLimiter(config.rate_qps)
        self.coverage = _Coverage()
        self.replies: dict[int, _Reply] = {}
        self.failed: set[int] = set()
        self.pending: dict[int, tuple[int, asyncio.Future]] = {}
        self.wall0 = clock()
        self.mono0 = time.monotonic()
        self.sink = sink
        self.rng = random.Random()
        self.consecutive_errors = 0
        self.abort = asyncio.Event()
        self.transport = None

    def ts_ms(self, mono: float) -> int:
        return int((self.wall0 + (mono - self.mono0)) * 1000)

    def _next_id(self) -> int:
        while True:
            qid = self.rng.getrandbits(16)
            if qid not in self.pending:
                return qid

    def on_datagram(self, data: bytes):
        try:
            msg = decode_dns(data)
        except DnsParseError:
            return
        slot = self.pending.get(msg.id)
        if slot is None or not msg.qr:
            return
        idx, fut = slot
        q = msg.question
        if q is None or q.name.lower() != self.cfg.target_domain.lower().rstrip("."):
            return
        ecs = msg.ecs
        if ecs is not None and (ecs.family != 1 or ecs.address != unit_prefix(idx).packed[:3]):
            return
        self.consecutive_errors = 0
        if not fut.done():
            fut.set_result(msg)

    def on_error(self, exc: Exception):
        self.stats.errors += 1
        self.consecutive_errors += 1
        if self.consecutive_errors >= self.cfg.abort_after:
            self.abort.set()

    async def query(self, idx: int, sem: asyncio.Semaphore):
        try:
            await self._query(idx)
        finally:
            sem.release()

    async def _query(self, idx: int):
        subnet = unit_prefix(idx)
        ecs = EcsOption.for_subnet(subnet)
        loop = asyncio.get_running_loop()
        for attempt in range(self.cfg.retries + 1):
            if self.abort.is_set():
                self.failed.add(idx)
                return
            sent_at = await self.limiter.acquire()
            if attempt:
                self.stats.retries_used += 1
            qid = self._next_id()
            fut = loop.create_future()
            self.pending[qid] = (idx, fut)
            record = {"ts": self.ts_ms(sent_at), "subnet": str(subnet), "attempt": attempt}
            try:
                self.transport.sendto(encode_dns(make_query(self.cfg.target_domain, QType.A,
                                                            id=qid, ecs=ecs)))
                msg = await asyncio.wait_for(fut, self.cfg.timeout_ms / 1000)
            except asyncio.TimeoutError:
                record.update(outcome="timeout", scope=None, answers=[])
                self.sink(record)
                continue
            finally:
                self.pending.pop(qid, None)
            if msg.tc:
                # UDP only: a truncated answer cannot be completed
                record.update(outcome="truncated", scope=None, answers=[])
                self.sink(record)
                self.failed.add(idx)
                return
            scope = msg.ecs.scope_len if msg.ecs is not None else 24
            answers = answer_addresses(msg) if msg.rcode == Rcode.NOERROR else []
            answers = [a for a in answers if isinstance(a, ipaddress.IPv4Address)]
            record.update(outcome="answered" if msg.rcode == Rcode.NOERROR else rcode_name(msg.rcode),
                          scope=scope, answers=[str(a) for a in answers])
            self.sink(record)
            self.replies[idx] = _Reply(int(msg.rcode), scope, answers)
            if scope < 24:
                self.coverage.add(idx, scope)
            return
        self.stats.timeouts += 1
        self.failed.add(idx)

    async def run(self):
        loop = asyncio.get_running_loop()
        self.transport, _ = await loop.create_datagram_endpoint(
            lambda: _Protocol(self), remote_addr=self.cfg.server)
        sem = asyncio.Semaphore(self.cfg.max_inflight)
        tasks = []
        try:
            order = self.plan.interleaved()
            for idx in order:
                if self.abort.is_set():
                    self.stats.not_attempted += 1
                    continue
                if self.coverage.covers(idx):
                    self.stats.queries_skipped_by_scope += 1
                    continue
                await sem.acquire()
                # the scope that covers this unit may have arrived while waiting
                if self.coverage.covers(idx):
                    sem.release()
                    self.stats.queries_skipped_by_scope += 1
                    continue
                if self.abort.is_set():
                    sem.release()
                    self.stats.not_attempted += 1
                    continue
                self.stats.queries_sent += 1
                tasks.append(asyncio.ensure_future(self.query(idx, sem)))
                if len(tasks) > 4 * self.cfg.max_inflight:
                    tasks = [t for t in tasks if not t.done()]
            if tasks:
                await asyncio.gather(*tasks)
        finally:
            self.transport.close()
        self.stats.aborted = self.abort.is_set()


def build_catalog(domain: str, replies: dict, failed, scanned_at: int,
                  complete: bool = True) -> IngressCatalog:
    """Fold replies into a catalog, independent of the order they arrived in.

    Replies are visited in ascending unit order. A reply whose unit lies in
    the scope of an already accepted reply is redundant and dropped; an
    accepted reply with scope shorter than /24 is keyed by the first /24 of
    its scope prefix. Given answers that are consistent within each returned
    scope (what the scope promises), the result equals a sequential scan.
    """
    catalog = IngressCatalog(domain, "A", scanned_at, complete=complete)
    accepted = _Coverage()
    for idx in sorted(replies):
        if accepted.covers(idx):
            continue
        reply = replies[idx]
        key = idx
        if reply.scope < 24:
            key = (idx >> (24 - reply.scope)) << (24 - reply.scope)
            accepted.add(idx, reply.scope)
        catalog.add_answer(str(unit_prefix(key)), reply.answers, scope=reply.scope)
    catalog.unanswered = [str(unit_prefix(i)) for i in sorted(failed) if not accepted.covers(i)]
    return catalog


async def enumerate_ingress_async(config: ScanConfig, *, plan: Optional[ScanPlan] = None,
                                  clock: Callable[[], float] = time.time):
    if plan is None:
        plan = plan_scan(config.routable, config.sparse_stride, config.blocklist)
    if len(plan) == 0:
        raise ValueError("scan plan is empty")
    log_file = open(config.log_path, "w") if config.log_path else None

    def sink(record):
        if log_file:
            log_file.write(json.dumps(record, sort_keys=True) + "\n")

    scanner = _Scanner(config, plan, clock, sink)
    try:
        await scanner.run()
    finally:
        if log_file:
            log_file.close()
    stats = scanner.stats
    if stats.aborted:
        log.error("scan aborted after %d consecutive unreachable errors", config.abort_after)
    catalog = build_catalog(config.target_domain, scanner.replies, scanner.failed,
                            int(scanner.wall0 * 1000), complete=not stats.aborted)
    return catalog, stats


def enumerate_ingress(config: ScanConfig, **kwargs) -> tuple[IngressCatalog, ScanStats]:
    """Run an ECS enumeration to completion; returns (catalog, stats)."""
    return asyncio.run(enumerate_ingress_async(config, **kwargs))

"""Distributed-probe DNS results: parsing, blocking verdicts and resolver stats.

Input is a simplified Atlas-style schema, one object per probe response,
either as a JSON array or as JSON lines::

    {"prb_id": 17, "target": "mask.icloud.com", "qtype": "A", "rcode": "NOERROR",
     "answers": ["17.0.0.1"], "resolver": "192.0.2.53", "rt": 12.5,
     "asn": 3320, "cc": "DE"}
    {"prb_id": 18, "target": "mask.icloud.com", "timeout": true}

An object may instead carry a ``resultset`` list of per-resolver responses
that inherit the outer fields.
"""
from __future__ import annotations

import csv
import io
import ipaddress
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from .ecs.catalog import IngressCatalog
from .netcore.dns import Rcode, rcode_name
from .netcore.prefix import IpPrefix, PrefixTable, ip

log = logging.getLogger(__name__)

KNOWN_FIELDS = {"prb_id", "target", "qtype", "rcode", "answers", "resolver", "rt", "asn", "cc",
                "timeout", "resultset"}
_RCODES = {rcode_name(c): int(c) for c in Rcode}


@dataclass(frozen=True)
class ProbeResult:
    probe_id: int
    target: str
    timeout: bool = False
    rcode: Optional[int] = None
    answers: tuple = ()
    resolver: Optional[str] = None
    rt_ms: Optional[float] = None
    asn: Optional[int] = None
    cc: Optional[str] = None
    qtype: str = "A"

    def __post_init__(self):
        if self.timeout and (self.answers or self.rcode is not None):
            raise ValueError("a timeout carries no rcode or answers")
        if not self.timeout and self.rcode is None:
            raise ValueError("a response needs an rcode")


def _rcode(value) -> int:
    if isinstance(value, bool):
        raise ValueError("rcode must be a name or number")
    if isinstance(value, int):
        return value
    code = _RCODES.get(str(value).upper())
    if code is None:
        raise ValueError(f"unknown rcode {value!r}")
    return code


def _result(obj: dict, strict: bool) -> list[ProbeResult]:
    if not isinstance(obj, dict):
        raise ValueError("entry is not an object")
    unknown = set(obj) - KNOWN_FIELDS
    if strict and unknown:
        raise ValueError(f"unknown fields {sorted(unknown)}")
    if "resultset" in obj:
        outer = {k: v for k, v in obj.items() if k != "resultset"}
        out = []
        for sub in obj["resultset"]:
            out += _result({**outer, **sub}, strict)
        return out
    timeout = bool(obj.get("timeout", False))
    answers = tuple(str(ip(a)) for a in obj.get("answers", ()) or ())
    return [ProbeResult(
        probe_id=int(obj["prb_id"]),
        target=str(obj["target"]).rstrip(".").lower(),
        timeout=timeout,
        rcode=None if timeout else _rcode(obj["rcode"]),
        answers=answers,
        resolver=str(ip(obj["resolver"])) if obj.get("resolver") else None,
        rt_ms=float(obj["rt"]) if obj.get("rt") is not None else None,
        asn=int(obj["asn"]) if obj.get("asn") is not None else None,
        cc=obj.get("cc"),
        qtype=str(obj.get("qtype", "A")).upper(),
    )]


def parse_results(path, strict: bool = False) -> list[ProbeResult]:
    """Parse a results file; malformed entries are skipped with a warning.

    In strict mode any malformed entry or unknown field raises ValueError.
    """
    return parse_results_text(Path(path).read_text(), strict)


def parse_results_text(text: str, strict: bool = False) -> list[ProbeResult]:
    stripped = text.lstrip()
    if stripped.startswith("["):
        entries = json.loads(text)
    else:
        entries = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                if strict:
                    raise ValueError(f"line {n}: {exc}") from None
                log.warning("skipping line %d: %s", n, exc)
    out = []
    for i, obj in enumerate(entries):
        try:
            out += _result(obj, strict)
        except (KeyError, ValueError, TypeError) as exc:
            if strict:
                raise ValueError(f"entry {i}: {exc}") from None
            log.warning("skipping entry %d: %s", i, exc)
    return out


class VerdictKind(str, Enum):
    BLOCKED = "Blocked"
    REACHABLE = "Reachable"
    INCONCLUSIVE = "Inconclusive"
    RESOLVER_BROKEN = "ResolverBroken"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    reason: str = ""

    def __str__(self):
        return f"{self.kind.value}({self.reason})" if self.reason else self.kind.value


def _control_ok(control: Optional[ProbeResult]) -> bool:
    return control is not None and not control.timeout and control.rcode == Rcode.NOERROR \
        and bool(control.answers)


def classify(target: ProbeResult, control: Optional[ProbeResult], known_relays=None,
             hijack_list=None) -> Verdict:
    """Blocking verdict for one probe's relay-domain lookup.

    ``control`` is the same probe and resolver resolving an unrelated domain;
    it only matters for REFUSED. Hijack detection needs ``known_relays`` (a
    set of relay addresses) or ``hijack_list`` (addresses known to be
    injected); without either, an answered lookup is Reachable.
    """
    if control is not None and control.probe_id != target.probe_id:
        raise ValueError(f"probe ids differ: {target.probe_id} vs {control.probe_id}")
    if target.timeout:
        return Verdict(VerdictKind.INCONCLUSIVE, "Timeout")
    rc = target.rcode
    if rc == Rcode.NXDOMAIN:
        return Verdict(VerdictKind.BLOCKED, "NXDOMAIN")
    if rc == Rcode.NOERROR:
        if not target.answers:
            return Verdict(VerdictKind.BLOCKED, "EmptyNOERROR")
        answers = {ip(a) for a in target.answers}
        if hijack_list and answers & {ip(a) for a in hijack_list}:
            return Verdict(VerdictKind.BLOCKED, "Hijack")
        if known_relays is not None and answers - {ip(a) for a in known_relays}:
            return Verdict(VerdictKind.BLOCKED, "Hijack")
        return Verdict(VerdictKind.REACHABLE)
    if rc == Rcode.REFUSED:
        if _control_ok(control):
            return Verdict(VerdictKind.BLOCKED, "VerifiedREFUSED")
        return Verdict(VerdictKind.RESOLVER_BROKEN, "REFUSED")
    return Verdict(VerdictKind.RESOLVER_BROKEN, rcode_name(rc))


def pair_results(results: Iterable[ProbeResult], target_domain: str,
                 control_domain: Optional[str] = None) -> list[tuple]:
    """Match each relay-domain result with the same probe+resolver's control result."""
    target_domain = target_domain.rstrip(".").lower()
    control_domain = control_domain.rstrip(".").lower() if control_domain else None
    controls = {}
    targets = []
    for r in results:
        if r.target == target_domain:
            targets.append(r)
        elif control_domain and r.target == control_domain:
            controls.setdefault((r.probe_id, r.resolver), r)
    return [(t, controls.get((t.probe_id, t.resolver))) for t in targets]


@dataclass
class BlockingReport:
    rows: list = field(default_factory=list)     # (probe_id, resolver, Verdict)
    counts: dict = field(default_factory=dict)   # verdict kind -> n
    reasons: dict = field(default_factory=dict)  # "Kind(reason)" -> n

    @property
    def total(self) -> int:
        return len(self.rows)

    @property
    def blocked(self) -> int:
        return self.counts.get(VerdictKind.BLOCKED.value, 0)

    @property
    def counted(self) -> int:
        return self.total - self.counts.get(VerdictKind.INCONCLUSIVE.value, 0)

    @property
    def blocked_share(self) -> float:
        """Blocked / (total - Inconclusive); 0 when everything timed out."""
        return self.blocked / self.counted if self.counted else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["probe_id", "resolver", "verdict", "reason"])
        for pid, res, v in self.rows:
            w.writerow([pid, res or "", v.kind.value, v.reason])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "schema": 1,
            "total": self.total,
            "counted": self.counted,
            "blocked": self.blocked,
            "blocked_share": round(self.blocked_share, 6),
            "counts": dict(sorted(self.counts.items())),
            "reasons": dict(sorted(self.reasons.items())),
        }


def blocking_report(pairs, known_relays=None, hijack_list=None) -> BlockingReport:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no results to classify")
    relays = {ip(a) for a in known_relays} if known_relays is not None else None
    rows = []
    for target, control in pairs:
        rows.append((target.probe_id, target.resolver,
                     classify(target, control, relays, hijack_list)))
    rows.sort(key=lambda r: (r[0], r[1] or ""))
    kinds = Counter(v.kind.value for _, _, v in rows)
    reasons = Counter(str(v) for _, _, v in rows)
    return BlockingReport(rows, dict(kinds), dict(reasons))


def _resolver_address(r: ProbeResult, whoami: bool):
    if whoami:
        return ip(r.answers[0]) if r.answers else None
    return ip(r.resolver) if r.resolver else None


def resolver_stats(results: Iterable[ProbeResult], table: PrefixTable,
                   public_prefixes: Iterable = (), whoami: bool = True) -> dict:
    """Resolver spread over ASes and the share of probes using a public resolver.

    With ``whoami`` the resolver is the address in the answer (a whoami-style
    lookup); otherwise it is the ``resolver`` field. A probe counts once,
    with the first resolver seen for it.
    """
    public = PrefixTable((p if isinstance(p, IpPrefix) else IpPrefix.parse(str(p)), True)
                         for p in public_prefixes)
    per_as: dict = defaultdict(set)
    first_by_probe = {}
    unknown = set()
    for r in results:
        if r.timeout:
            continue
        addr = _resolver_address(r, whoami)
        if addr is None:
            continue
        first_by_probe.setdefault(r.probe_id, addr)
        attr = table.lookup(addr)
        if attr is None:
            unknown.add(addr)
        else:
            per_as[getattr(attr, "asn", attr)].add(addr)
    probes = len(first_by_probe)
    on_public = sum(1 for a in first_by_probe.values() if public.lookup(a))
    resolvers = sum(len(v) for v in per_as.values())
    return {
        "schema": 1,
        "probes": probes,
        "resolvers": resolvers,
        "unknown_resolvers": len(unknown),
        "as_count": len(per_as),
        "per_as": {str(k): len(per_as[k]) for k in sorted(per_as, key=str)},
        "as_share": {str(k): len(per_as[k]) / resolvers for k in sorted(per_as, key=str)}
        if resolvers else {},
        "public_share": on_public / probes if probes else 0.0,
    }


def ipv6_catalog_from_results(results: Iterable[ProbeResult], domain: Optional[str] = None,
                              scanned_at: int = 0) -> IngressCatalog:
    """Catalog of IPv6 answers, keyed by ``probe:<id>`` instead of ECS subnets."""
    results = list(results)
    if domain is None:
        domain = results[0].target if results else ""
    cat = IngressCatalog(domain, "AAAA", scanned_at)
    for r in sorted(results, key=lambda r: r.probe_id):
        if r.timeout or r.target != domain.rstrip(".").lower():
            continue
        v6 = [a for a in r.answers if isinstance(ip(a), ipaddress.IPv6Address)]
        if v6:
            cat.add_answer(f"probe:{r.probe_id}", v6)
    return cat

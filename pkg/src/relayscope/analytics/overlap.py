"""Ingress/egress co-location: shared prefixes, ASes and last-hop routers."""
from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..netcore.prefix import PrefixTable, ip
from .ingress import _label

log = logging.getLogger(__name__)


@dataclass
class OverlapReport:
    announced: int
    ingress_prefixes: set = field(default_factory=set)
    egress_prefixes: set = field(default_factory=set)
    as_roles: dict = field(default_factory=dict)   # label -> {"has_ingress", "has_egress"}

    @property
    def both(self) -> set:
        return self.ingress_prefixes & self.egress_prefixes

    @property
    def disjoint(self) -> bool:
        return not self.both

    @property
    def used(self) -> int:
        return len(self.ingress_prefixes) + len(self.egress_prefixes) - len(self.both)

    @property
    def used_share(self) -> float:
        return self.used / self.announced if self.announced else 0.0

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "announced": self.announced,
            "ingress_bearing": len(self.ingress_prefixes),
            "egress_bearing": len(self.egress_prefixes),
            "both": len(self.both),
            "disjoint": self.disjoint,
            "used": self.used,
            "used_share": self.used_share,
            "as_roles": {k: self.as_roles[k] for k in sorted(self.as_roles)},
            "shared_prefixes": [str(p) for p in sorted(self.both)],
        }


def overlap_report(ingress_addresses: Iterable, egress_records: Iterable,
                   announced: PrefixTable) -> OverlapReport:
    """Which announced prefixes carry ingress relays, egress subnets, or both.

    ``announced`` should hold only the prefixes of the AS(es) under study.
    An egress subnet belongs to the longest announced prefix covering all
    of it; an ingress address to the longest covering its address.
    """
    if hasattr(ingress_addresses, "addresses"):
        ingress_addresses = ingress_addresses.addresses
    report = OverlapReport(len(announced))
    roles: dict = defaultdict(lambda: {"has_ingress": False, "has_egress": False})
    for addr in ingress_addresses:
        hit = announced.match(ip(addr))
        if hit is not None:
            report.ingress_prefixes.add(hit[0])
            roles[_label(hit[1])[1]]["has_ingress"] = True
    for rec in egress_records:
        hit = announced.match(rec.prefix)
        if hit is not None:
            report.egress_prefixes.add(hit[0])
            roles[_label(hit[1])[1]]["has_egress"] = True
    report.as_roles = dict(roles)
    return report


def _is_hop(h) -> bool:
    return h not in (None, "", "*")


def last_hop_correlation(paths: dict, roles: dict) -> dict:
    """Group targets by their last responding hop before the target itself.

    A group whose targets include both ingress and egress relays means one
    router sees both sides of the relay system; it is flagged. Targets
    without any responding hop are excluded and listed.
    """
    groups: dict = defaultdict(list)
    excluded = []
    for target in sorted(paths, key=str):
        t = str(ip(target)) if _is_hop(target) else target
        hops = [str(h) for h in paths[target] if _is_hop(h) and str(h) != t]
        if not hops:
            log.warning("no responding hop towards %s; excluded", target)
            excluded.append(target)
            continue
        groups[hops[-1]].append(target)
    out = []
    for hop in sorted(groups, key=lambda h: (ip(h).version, int(ip(h)))):
        members = groups[hop]
        kinds = sorted({str(roles.get(m, "unknown")).lower() for m in members})
        out.append({"last_hop": hop, "targets": members, "roles": kinds,
                    "flagged": "ingress" in kinds and "egress" in kinds})
    return {"groups": out, "flagged": sum(g["flagged"] for g in out), "excluded": excluded}


def parse_paths(text: str) -> tuple[dict, dict]:
    """Traceroute JSON: a list of ``{"target", "role", "hops": [...]}`` objects."""
    paths, roles = {}, {}
    for entry in json.loads(text):
        paths[entry["target"]] = list(entry.get("hops", []))
        roles[entry["target"]] = entry.get("role", "unknown")
    return paths, roles


def restrict_table(table: PrefixTable, asns: Optional[Iterable[int]]) -> PrefixTable:
    if asns is None:
        return table
    keep = set(asns)
    return table.filter(lambda p, v: getattr(v, "asn", v) in keep)

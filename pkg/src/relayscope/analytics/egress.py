"""Egress list parsing and per-AS / per-country statistics."""
from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from ..netcore.prefix import IpPrefix, PrefixTable
from .ingress import UNKNOWN, _label

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EgressRecord:
    prefix: IpPrefix
    cc: str
    region: str = ""
    city: Optional[str] = None

    def __post_init__(self):
        if len(self.cc) != 2 or not self.cc.isalpha():
            raise ValueError(f"country code {self.cc!r} is not two letters")


class EgressList(list):
    problems: list

    def __init__(self, records=(), problems=None):
        super().__init__(records)
        self.problems = list(problems or [])

    @property
    def prefixes(self) -> set:
        return {r.prefix for r in self}

    def table(self) -> PrefixTable:
        return PrefixTable((r.prefix, r) for r in self)


def parse_egress_list(text: str) -> EgressList:
    """Parse ``prefix,cc,region,city`` lines.

    A blank city stays absent, a trailing comma is tolerated. Lines that do
    not parse are skipped, logged and kept in ``problems``.
    """
    out = EgressList()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        try:
            if len(parts) < 2:
                raise ValueError("expected prefix,cc,region,city")
            prefix = IpPrefix.parse(parts[0])
            region = parts[2] if len(parts) > 2 else ""
            city = parts[3] if len(parts) > 3 and parts[3] else None
            out.append(EgressRecord(prefix, parts[1].upper(), region, city))
        except ValueError as exc:
            log.warning("egress list line %d rejected: %s", n, exc)
            out.problems.append((n, line, str(exc)))
    return out


def load_egress_list(path) -> EgressList:
    return parse_egress_list(Path(path).read_text())


def _owner(record: EgressRecord, table: PrefixTable):
    hit = table.match(record.prefix)
    if hit is None:
        return None, UNKNOWN, None
    asn, label = _label(hit[1])
    return asn, label, hit[0]


def egress_stats(records: Iterable[EgressRecord], table: PrefixTable) -> list[dict]:
    """Table-3 style rows: subnets, covering BGP prefixes and IPv4 addresses per AS.

    The covering prefix of a subnet is the longest announced prefix that
    contains the whole subnet. IPv6 subnets get no address total.
    """
    rows: dict = {}
    for r in records:
        asn, label, announced = _owner(r, table)
        row = rows.get(label)
        if row is None:
            row = rows[label] = {"label": label, "asn": asn, "v4_subnets": 0, "v4_prefixes": set(),
                                 "v4_addresses": 0, "v6_subnets": 0, "v6_prefixes": set(),
                                 "ccs": set()}
        if r.prefix.family == 4:
            row["v4_subnets"] += 1
            row["v4_addresses"] += r.prefix.size
            if announced is not None:
                row["v4_prefixes"].add(announced)
        else:
            row["v6_subnets"] += 1
            if announced is not None:
                row["v6_prefixes"].add(announced)
        row["ccs"].add(r.cc)
    out = []
    for row in sorted(rows.values(), key=lambda x: (x["asn"] is None, x["asn"] or 0, x["label"])):
        out.append({
            "label": row["label"], "asn": row["asn"],
            "v4_subnets": row["v4_subnets"], "v4_bgp_prefixes": len(row["v4_prefixes"]),
            "v4_addresses": row["v4_addresses"],
            "v6_subnets": row["v6_subnets"], "v6_bgp_prefixes": len(row["v6_prefixes"]),
            "cc_count": len(row["ccs"]),
        })
    return out


def geo_distribution(records: Iterable[EgressRecord], table: Optional[PrefixTable] = None) -> dict:
    """Per-CC subnet shares and per-AS country and city coverage.

    Cities are distinct (cc, city) pairs after trimming; blank cities are
    not cities. Without a table every record falls in one 'unknown' AS.
    """
    records = list(records)
    per_cc: Counter = Counter(r.cc for r in records)
    total = len(records)
    as_ccs: dict = defaultdict(set)
    cities: dict = defaultdict(lambda: {4: set(), 6: set()})
    blank = 0
    for r in records:
        label = _owner(r, table)[1] if table is not None else UNKNOWN
        as_ccs[label].add(r.cc)
        if r.city is None or not r.city.strip():
            blank += 1
        else:
            cities[label][r.prefix.family].add((r.cc, r.city.strip()))
    holders: dict = defaultdict(set)
    for label, ccs in as_ccs.items():
        for cc in ccs:
            holders[cc].add(label)
    unique = {label: sorted(cc for cc in ccs if len(holders[cc]) == 1)
              for label, ccs in sorted(as_ccs.items())}
    cc_rows = sorted(per_cc.items(), key=lambda kv: (-kv[1], kv[0]))
    return {
        "subnets": total,
        "blank_city_share": blank / total if total else 0.0,
        "per_cc": [{"cc": cc, "subnets": n, "share": n / total} for cc, n in cc_rows],
        "cc_count": {label: len(ccs) for label, ccs in sorted(as_ccs.items())},
        "unique_ccs": unique,
        "cities": {label: {"v4": len(c[4]), "v6": len(c[6]), "total": len(c[4] | c[6])}
                   for label, c in sorted(cities.items())},
        "ccs_under_50_subnets": sum(1 for n in per_cc.values() if n < 50),
    }


def diff_egress_lists(old: Iterable[EgressRecord], new: Iterable[EgressRecord]) -> dict:
    o = {r.prefix for r in old}
    n = {r.prefix for r in new}
    if o:
        growth = (len(n) - len(o)) / len(o)
    else:
        growth = float("inf") if n else 0.0
    return {"added": sorted(n - o), "removed": sorted(o - n), "kept": sorted(o & n),
            "old_size": len(o), "new_size": len(n), "growth": growth}

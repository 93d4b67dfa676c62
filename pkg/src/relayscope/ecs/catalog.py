"""Ingress catalogs: the addresses an enumeration found and where they came from."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..netcore.prefix import IpPrefix, address_key, ip

SCHEMA_VERSION = 1


def source_key(source: str):
    """Sort key for catalog source labels: /24 prefixes numerically, then others."""
    if "/" in source:
        p = IpPrefix.parse(source)
        return (0, p.family, p.network, p.length, "")
    return (1, 0, 0, 0, source)


@dataclass
class Entry:
    first_seen: int
    sources: set = field(default_factory=set)


@dataclass
class IngressCatalog:
    """Result of an enumeration.

    ``entries`` maps each relay address to the scan time (epoch ms) it was
    first seen and the client sources whose answers carried it. Sources are
    client /24 prefixes for ECS scans, or ``probe:<id>`` labels for catalogs
    built from distributed probe results. ``subnet_answers`` keeps the ordered
    answer set per source and ``scopes`` the ECS scope returned for it.
    """

    domain: str
    qtype: str = "A"
    scanned_at: int = 0
    entries: dict = field(default_factory=dict)
    subnet_answers: dict = field(default_factory=dict)
    scopes: dict = field(default_factory=dict)
    complete: bool = True
    unanswered: list = field(default_factory=list)

    def add_answer(self, source: str, answers, scope: Optional[int] = None, seen: Optional[int] = None):
        seen = self.scanned_at if seen is None else seen
        ordered = list(self.subnet_answers.get(source, ()))
        for a in answers:
            a = ip(a)
            if a not in ordered:
                ordered.append(a)
            entry = self.entries.get(a)
            if entry is None:
                self.entries[a] = Entry(seen, {source})
            else:
                entry.first_seen = min(entry.first_seen, seen)
                entry.sources.add(source)
        self.subnet_answers[source] = tuple(ordered)
        if scope is not None:
            self.scopes[source] = scope

    @property
    def addresses(self) -> set:
        return set(self.entries)

    def __len__(self):
        return len(self.entries)

    def check(self) -> None:
        """Raise ValueError when the catalog's structural invariants do not hold."""
        answered = {a for answers in self.subnet_answers.values() for a in answers}
        missing = [a for a in self.entries if a not in answered]
        if missing:
            raise ValueError(f"{len(missing)} entries appear in no answer set, e.g. {missing[0]}")
        for src in self.subnet_answers:
            if "/" in src:
                p = IpPrefix.parse(src)
                if p.family == 4 and p.length != 24:
                    raise ValueError(f"source {src} is not a /24")

    # --- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "domain": self.domain,
            "qtype": self.qtype,
            "scanned_at": self.scanned_at,
            "complete": self.complete,
            "entries": [
                {"address": str(a), "first_seen": self.entries[a].first_seen,
                 "sources": sorted(self.entries[a].sources, key=source_key)}
                for a in sorted(self.entries, key=address_key)
            ],
            "subnets": [
                {"subnet": s, "scope": self.scopes.get(s),
                 "answers": [str(a) for a in self.subnet_answers[s]]}
                for s in sorted(self.subnet_answers, key=source_key)
            ],
            "unanswered": sorted(self.unanswered, key=source_key),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, d: dict) -> "IngressCatalog":
        if d.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported catalog schema {d.get('schema')!r}")
        cat = cls(d["domain"], d.get("qtype", "A"), d.get("scanned_at", 0),
                  complete=d.get("complete", True), unanswered=list(d.get("unanswered", [])))
        for e in d["entries"]:
            cat.entries[ip(e["address"])] = Entry(e["first_seen"], set(e["sources"]))
        for s in d["subnets"]:
            cat.subnet_answers[s["subnet"]] = tuple(ip(a) for a in s["answers"])
            if s.get("scope") is not None:
                cat.scopes[s["subnet"]] = s["scope"]
        return cat

    @classmethod
    def load(cls, path) -> "IngressCatalog":
        return cls.from_dict(json.loads(Path(path).read_text()))


def merge_catalogs(a: IngressCatalog, b: IngressCatalog) -> IngressCatalog:
    """Union of two scans of the same domain.

    Entries are united and keep the earliest first_seen. For a source present
    in both, the answer set and scope of the more recent scan win, so an
    address may survive in ``entries`` (with its sources) after the answer
    set that carried it was replaced.
    """
    if a.domain.lower() != b.domain.lower():
        raise ValueError(f"cannot merge catalogs for {a.domain!r} and {b.domain!r}")

    def empty(c):
        return not c.entries and not c.subnet_answers

    if empty(a) or empty(b):
        # an empty catalog is the identity, whatever its scan time
        if empty(b) and (not empty(a) or a.scanned_at > b.scanned_at):
            a, b = b, a
        out = IngressCatalog.from_dict(b.to_dict())
        out.complete = a.complete and b.complete
        out.unanswered = sorted(set(a.unanswered) | set(b.unanswered), key=source_key)
        return out
    old, new = (a, b) if a.scanned_at <= b.scanned_at else (b, a)
    out = IngressCatalog(new.domain, new.qtype, old.scanned_at,
                         complete=a.complete and b.complete)
    for cat in (old, new):
        for addr, e in cat.entries.items():
            cur = out.entries.get(addr)
            if cur is None:
                out.entries[addr] = Entry(e.first_seen, set(e.sources))
            else:
                cur.first_seen = min(cur.first_seen, e.first_seen)
                cur.sources |= e.sources
        out.subnet_answers.update(cat.subnet_answers)
        out.scopes.update(cat.scopes)
    answered = set(out.subnet_answers)
    out.unanswered = sorted((set(a.unanswered) | set(b.unanswered)) - answered, key=source_key)
    return out


@dataclass
class CatalogDiff:
    added: set
    removed: set
    kept: set
    old_size: int
    new_size: int

    @property
    def growth(self) -> float:
        """Relative change in catalog size, (|new| - |old|) / |old|."""
        if self.old_size == 0:
            return float("inf") if self.new_size else 0.0
        return (self.new_size - self.old_size) / self.old_size


def diff_catalogs(old: IngressCatalog, new: IngressCatalog) -> CatalogDiff:
    if old.domain.lower() != new.domain.lower():
        raise ValueError(f"cannot diff catalogs for {old.domain!r} and {new.domain!r}")
    o, n = old.addresses, new.addresses
    return CatalogDiff(n - o, o - n, o & n, len(o), len(n))

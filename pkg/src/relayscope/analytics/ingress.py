"""Who runs the ingress layer and whom each operator serves."""
from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..ecs.catalog import IngressCatalog
from ..netcore.prefix import Attribution, IpPrefix, PrefixTable, ip

log = logging.getLogger(__name__)

UNKNOWN = "unknown"
BOTH = "Both"


def _label(value) -> tuple[Optional[int], str]:
    if value is None:
        return None, UNKNOWN
    if isinstance(value, Attribution):
        return value.asn, value.name
    if isinstance(value, int):
        return value, f"AS{value}"
    return None, str(value)


@dataclass(frozen=True)
class ShareRow:
    label: str
    asn: Optional[int]
    count: int
    share: float


def ingress_shares(catalog: IngressCatalog, table: PrefixTable) -> list[ShareRow]:
    """Catalog addresses per attributed AS, sorted by ASN; unattributed last as 'unknown'."""
    if not len(catalog):
        raise ValueError("catalog is empty")
    counts: Counter = Counter()
    asns = {}
    for addr in catalog.addresses:
        asn, label = _label(table.lookup(addr))
        counts[label] += 1
        asns[label] = asn
    total = sum(counts.values())
    rows = [ShareRow(lbl, asns[lbl], n, n / total) for lbl, n in counts.items()]
    rows.sort(key=lambda r: (r.asn is None, r.asn or 0, r.label))
    return rows


@dataclass
class SubnetAttribution:
    """Client /24 subnets per client AS and the ingress operators serving them.

    ``per_as`` maps a client AS to a Counter of operator -> /24 subnets; a
    subnet served by several operators is counted under each of them and
    under ``BOTH`` in ``subnet_buckets``.
    """

    per_as: dict = field(default_factory=dict)
    as_subnets: dict = field(default_factory=dict)   # distinct /24s per AS
    subnet_buckets: Counter = field(default_factory=Counter)
    unattributed_subnets: int = 0

    def bucket(self, asn) -> str:
        ops = [o for o, n in self.per_as[asn].items() if n]
        return ops[0] if len(ops) == 1 else BOTH


def _operators_of(answers, relay_table: PrefixTable) -> set:
    return {_label(relay_table.lookup(a))[1] for a in answers}


def _expand(source: str, scope: Optional[int]) -> list[IpPrefix]:
    p = IpPrefix.parse(source)
    if p.family != 4 or scope is None or scope >= 24:
        return [p]
    if scope < 8:
        log.warning("scope /%d on %s too coarse to expand; counted as one subnet", scope, source)
        return [p]
    return list(p.supernet(scope).subnets(24))


def subnet_attribution(catalogs: Iterable[IngressCatalog], relay_table: PrefixTable,
                       client_table: PrefixTable) -> SubnetAttribution:
    """Attribute every client /24 seen in ``catalogs`` to its ingress operator(s).

    Sources answered under a shorter ECS scope stand for every /24 of the
    scope prefix. A /24 whose operators disagree across scans or records
    lands in the both bucket.
    """
    served: dict = defaultdict(set)
    for cat in catalogs:
        for source, answers in cat.subnet_answers.items():
            if "/" not in source or not answers:
                continue
            ops = _operators_of(answers, relay_table)
            for sub in _expand(source, cat.scopes.get(source)):
                served[sub] |= ops
    out = SubnetAttribution()
    per_as: dict = defaultdict(Counter)
    as_subnets: Counter = Counter()
    for sub, ops in served.items():
        out.subnet_buckets[next(iter(ops)) if len(ops) == 1 else BOTH] += 1
        asn, label = _label(client_table.lookup(sub))
        if asn is None and label == UNKNOWN:
            out.unattributed_subnets += 1
            continue
        key = asn if asn is not None else label
        as_subnets[key] += 1
        for op in ops:
            per_as[key][op] += 1
    out.per_as = dict(per_as)
    out.as_subnets = dict(as_subnets)
    return out


@dataclass(frozen=True)
class PopulationRow:
    bucket: str
    ases: int
    population: int
    subnets: int
    operator_subnets: tuple = ()   # (operator, subnets) inside the bucket


def population_attribution(attribution: SubnetAttribution, population: dict) -> list[PopulationRow]:
    """Client ASes and their user population per serving operator.

    An AS served by exactly one operator counts towards it; an AS served by
    several cannot be split at AS granularity and goes to the Both row.
    The subnet column counts /24s inside each bucket's ASes.
    """
    if not population:
        log.warning("population table is empty; all totals will be 0")
    ases: Counter = Counter()
    pop: Counter = Counter()
    subnets: Counter = Counter()
    per_op: dict = defaultdict(Counter)
    for asn, ops in attribution.per_as.items():
        b = attribution.bucket(asn)
        ases[b] += 1
        pop[b] += int(population.get(asn, 0))
        per_op[b].update(ops)
        subnets[b] += attribution.as_subnets.get(asn, sum(ops.values()))
    rows = []
    for b in sorted(ases, key=lambda x: (x == BOTH, x)):
        rows.append(PopulationRow(b, ases[b], pop[b], subnets[b], tuple(sorted(per_op[b].items()))))
    return rows


def parse_population(text: str) -> dict:
    """``asn,population`` CSV (header optional) into {asn: population}."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        asn, _, value = line.partition(",")
        asn = asn.strip().upper().removeprefix("AS")
        if not asn.isdigit():
            if n == 1:
                continue
            raise ValueError(f"line {n}: bad AS number {asn!r}")
        pop = int(float(value))
        if pop < 0:
            raise ValueError(f"line {n}: negative population")
        out[int(asn)] = pop
    return out


def catalog_operator_split(catalog: IngressCatalog, relay_table: PrefixTable) -> dict:
    """Address count per operator label, for quick cross-checks."""
    return dict(Counter(_label(relay_table.lookup(ip(a)))[1] for a in catalog.addresses))

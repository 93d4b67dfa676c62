"""Ground-truth description of an emulated relay deployment."""
from __future__ import annotations

import ipaddress
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..netcore.prefix import IpPrefix, PrefixTable, address_key, ip

# Documentation and benchmarking space only, so nothing routes anywhere real.
INGRESS_V4_SPACE = IpPrefix.parse("198.18.0.0/15")
INGRESS_V6_SPACE = IpPrefix.parse("2001:db8::/40")
EGRESS_V4_SPACE = (IpPrefix.parse("192.0.2.0/24"), IpPrefix.parse("198.51.100.0/24"),
                   IpPrefix.parse("203.0.113.0/25"))
CONTROL_ANSWER = ipaddress.IPv4Address("203.0.113.200")

PERSONAS = ("nxdomain", "empty", "refused", "refused_all", "servfail", "formerr", "drop", "hijack")


@dataclass
class EgressSubnet:
    prefix: IpPrefix
    pool: list
    cc: str = "US"
    region: str = "US-CA"
    city: str = ""


@dataclass
class Operator:
    label: str
    asn: int
    ingress_v4: list = field(default_factory=list)
    ingress_v6: list = field(default_factory=list)
    fallback_v4: list = field(default_factory=list)
    egress: list = field(default_factory=list)

    @property
    def egress_addresses(self) -> list:
        return [a for sub in self.egress for a in sub.pool]


@dataclass
class Zone:
    quic_domain: str = "mask.icloud.com"
    fallback_domain: str = "mask-h2.icloud.com"
    whoami_domain: str = "whoami.relay.test"
    control_domain: str = "control.relay.test"


@dataclass
class AnswerPolicy:
    max_records: int = 8
    scope_policy: list = field(default_factory=list)      # [(IpPrefix, scope_len)]
    operator_policy: list = field(default_factory=list)   # [(IpPrefix, label)]
    default_scope: int = 24
    aaaa_scope_zero: bool = True
    ttl: int = 60

    def __post_init__(self):
        if not 1 <= self.max_records <= 8:
            raise ValueError("max_records must be between 1 and 8")


@dataclass
class RotationPolicy:
    kind: str = "uniform"
    k: int = 1

    def __post_init__(self):
        if self.kind not in ("uniform", "sticky"):
            raise ValueError(f"unknown rotation policy {self.kind!r}")
        if self.k < 1:
            raise ValueError("sticky k must be >= 1")


@dataclass
class Persona:
    """Resolver behaviour for the relay domains, used to emulate blocking."""

    kind: str
    hijack_to: Optional[str] = None

    def __post_init__(self):
        if self.kind not in PERSONAS:
            raise ValueError(f"unknown persona {self.kind!r}")
        if self.kind == "hijack" and not self.hijack_to:
            raise ValueError("hijack persona needs an address")


@dataclass
class Answer:
    operator: str
    scope: int
    addresses: list


@dataclass
class DeploymentSpec:
    seed: int
    operators: list
    zone: Zone = field(default_factory=Zone)
    answer_policy: AnswerPolicy = field(default_factory=AnswerPolicy)
    rotation_policy: RotationPolicy = field(default_factory=RotationPolicy)
    personas: list = field(default_factory=list)           # [(IpPrefix, Persona)]
    correlation_scenario: bool = False

    def __post_init__(self):
        self.validate()
        self._build_tables()

    def _build_tables(self):
        self._ops = {op.label: op for op in self.operators}
        self._scope = PrefixTable(self.answer_policy.scope_policy)
        self._op_table = PrefixTable(self.answer_policy.operator_policy)
        self._personas = PrefixTable(self.personas)
        self._labels = sorted(self._ops)

    def validate(self):
        if not self.operators:
            raise ValueError("deployment needs at least one operator")
        labels = [op.label for op in self.operators]
        if len(set(labels)) != len(labels):
            raise ValueError("operator labels must be unique")
        ingress = [a for op in self.operators for a in (*op.ingress_v4, *op.ingress_v6)]
        egress = [a for op in self.operators for a in op.egress_addresses]
        if len(set(ingress)) != len(ingress):
            raise ValueError("an ingress address is assigned twice")
        if not self.correlation_scenario and set(ingress) & set(egress):
            raise ValueError("ingress and egress addresses overlap "
                             "(set correlation_scenario to allow it)")
        scopes = PrefixTable(self.answer_policy.scope_policy)
        for prefix, label in self.answer_policy.operator_policy:
            if label not in labels:
                raise ValueError(f"operator policy names unknown operator {label!r}")
            scope = scopes.lookup(prefix)
            scope = self.answer_policy.default_scope if scope is None else scope
            if prefix.family == 4 and prefix.length > scope:
                # answers are per scope block; a finer operator split would break the scope
                raise ValueError(f"operator policy for {prefix} is finer than the /{scope} "
                                 "scope returned there")

    # --- derived views -------------------------------------------------------

    def operator(self, label: str) -> Operator:
        return self._ops[label]

    @property
    def ingress_v4(self) -> set:
        return {a for op in self.operators for a in op.ingress_v4}

    @property
    def ingress_v6(self) -> set:
        return {a for op in self.operators for a in op.ingress_v6}

    @property
    def egress_pool(self) -> list:
        return sorted({a for op in self.operators for a in op.egress_addresses}, key=address_key)

    def persona_for(self, client: IpPrefix) -> Optional[Persona]:
        return self._personas.lookup(client)

    def relay_table(self) -> PrefixTable:
        """Host-route attribution of every relay address to its operator."""
        from ..netcore.prefix import Attribution
        table = PrefixTable()
        for op in self.operators:
            for a in (*op.ingress_v4, *op.ingress_v6, *op.fallback_v4):
                a = ip(a)
                table.insert(IpPrefix.from_address(a, a.max_prefixlen), Attribution(op.asn, op.label))
            for sub in op.egress:
                table.insert(sub.prefix, Attribution(op.asn, op.label))
        return table

    def answer(self, client: IpPrefix, family: int = 4, fallback: bool = False) -> Answer:
        """The relay records served to ``client`` (an ECS subnet or source /24).

        The answer depends only on the client's scope block, so every /24
        inside a returned scope prefix receives the same records.
        """
        pol = self.answer_policy
        if client.family == 4:
            scope = self._scope.lookup(client)
            scope = pol.default_scope if scope is None else scope
            block = client.supernet(min(scope, client.length, 24))
        else:
            scope = pol.default_scope
            block = client.supernet(min(client.length, 48))
        label = self._op_table.lookup(block)
        if label is None:
            label = self._labels[(block.network >> (block.width - 16)) % len(self._labels)]
        op = self._ops[label]
        if family == 6:
            pool = op.ingress_v6
            if pol.aaaa_scope_zero:
                scope = 0
        else:
            pool = (op.fallback_v4 or op.ingress_v4) if fallback else op.ingress_v4
        if not pool:
            return Answer(label, scope, [])
        k = min(pol.max_records, len(pool))
        unit = block.network >> (block.width - 24) if block.family == 4 else block.network >> 80
        start = (unit * k) % len(pool)
        return Answer(label, scope, [pool[(start + i) % len(pool)] for i in range(k)])

    # --- (de)serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "operators": [{
                "label": op.label, "asn": op.asn,
                "ingress_v4": [str(a) for a in op.ingress_v4],
                "ingress_v6": [str(a) for a in op.ingress_v6],
                "fallback_v4": [str(a) for a in op.fallback_v4],
                "egress": [{"prefix": str(s.prefix), "pool": [str(a) for a in s.pool],
                            "cc": s.cc, "region": s.region, "city": s.city} for s in op.egress],
            } for op in self.operators],
            "zone": dict(self.zone.__dict__),
            "answer_policy": {
                "max_records": self.answer_policy.max_records,
                "scope_policy": [[str(p), s] for p, s in self.answer_policy.scope_policy],
                "operator_policy": [[str(p), o] for p, o in self.answer_policy.operator_policy],
                "default_scope": self.answer_policy.default_scope,
                "aaaa_scope_zero": self.answer_policy.aaaa_scope_zero,
                "ttl": self.answer_policy.ttl,
            },
            "rotation_policy": {"kind": self.rotation_policy.kind, "k": self.rotation_policy.k},
            "personas": [[str(p), {"kind": per.kind, "hijack_to": per.hijack_to}]
                         for p, per in self.personas],
            "correlation_scenario": self.correlation_scenario,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DeploymentSpec":
        ops = [Operator(
            o["label"], int(o["asn"]),
            [ip(a) for a in o.get("ingress_v4", [])],
            [ip(a) for a in o.get("ingress_v6", [])],
            [ip(a) for a in o.get("fallback_v4", [])],
            [EgressSubnet(IpPrefix.parse(s["prefix"]), [ip(a) for a in s["pool"]],
                          s.get("cc", "US"), s.get("region", ""), s.get("city", ""))
             for s in o.get("egress", [])],
        ) for o in d["operators"]]
        ap = d.get("answer_policy", {})
        policy = AnswerPolicy(
            max_records=ap.get("max_records", 8),
            scope_policy=[(IpPrefix.parse(p), int(s)) for p, s in ap.get("scope_policy", [])],
            operator_policy=[(IpPrefix.parse(p), o) for p, o in ap.get("operator_policy", [])],
            default_scope=ap.get("default_scope", 24),
            aaaa_scope_zero=ap.get("aaaa_scope_zero", True),
            ttl=ap.get("ttl", 60),
        )
        rp = d.get("rotation_policy", {})
        return cls(
            seed=d.get("seed", 0), operators=ops, zone=Zone(**d.get("zone", {})),
            answer_policy=policy,
            rotation_policy=RotationPolicy(rp.get("kind", "uniform"), rp.get("k", 1)),
            personas=[(IpPrefix.parse(p), Persona(**per)) for p, per in d.get("personas", [])],
            correlation_scenario=d.get("correlation_scenario", False),
        )

    @classmethod
    def load(cls, path) -> "DeploymentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def _overlaps(a: IpPrefix, b: IpPrefix) -> bool:
    return a.family == b.family and (a.contains(b) or b.contains(a))


def generate_deployment(seed: int, operators: list, zone: Optional[Zone] = None,
                        **spec_kwargs) -> DeploymentSpec:
    """Draw a deployment from documentation/benchmark address space.

    ``operators`` is a list of dicts with ``label``, ``asn``, ``n_ingress``
    and optionally ``n_ingress_v6``, ``n_fallback``, ``n_egress_subnets``,
    ``pool_size`` and an explicit ``ingress_range``. Each operator draws from
    its own slice of the space; the same seed always yields the same spec.
    """
    if not operators:
        raise ValueError("need at least one operator")
    rng = random.Random(seed)
    n_ops = len(operators)
    if n_ops > 8:
        raise ValueError("at most 8 operators fit the default address partition")
    v4_slices = list(INGRESS_V4_SPACE.subnets(18))
    v6_slices = list(INGRESS_V6_SPACE.subnets(48))
    ranges = []
    for i, params in enumerate(operators):
        r = IpPrefix.parse(params["ingress_range"]) if params.get("ingress_range") else v4_slices[i]
        for other in ranges:
            if _overlaps(r, other):
                raise ValueError(f"ingress ranges {r} and {other} overlap")
        ranges.append(r)

    egress_subnets = [s for space in EGRESS_V4_SPACE for s in space.subnets(29)]
    egress_cursor = 0
    built = []
    for i, params in enumerate(operators):
        n4 = params.get("n_ingress", 0)
        n6 = params.get("n_ingress_v6", 0)
        nfb = params.get("n_fallback", 0)
        if n4 < 1:
            raise ValueError(f"operator {params.get('label')!r}: n_ingress must be >= 1")
        if n6 < 0 or nfb < 0:
            raise ValueError("address counts must be non-negative")
        r = ranges[i]
        if n4 + nfb > r.size - 2:
            raise ValueError(f"ingress range {r} too small for {n4 + nfb} addresses")
        # skip network and broadcast-like ends of the slice
        drawn = rng.sample(range(r.network + 1, r.last), n4 + nfb)
        v4 = sorted(ipaddress.IPv4Address(x) for x in drawn[:n4])
        fb = sorted(ipaddress.IPv4Address(x) for x in drawn[n4:])
        v6base = v6_slices[i]
        v6 = sorted(ipaddress.IPv6Address(v6base.network | x)
                    for x in rng.sample(range(1, 1 << 32), n6))
        egress = []
        for _ in range(params.get("n_egress_subnets", 0)):
            if egress_cursor >= len(egress_subnets):
                raise ValueError("egress address space exhausted")
            sub = egress_subnets[egress_cursor]
            egress_cursor += 1
            pool_size = min(params.get("pool_size", 1), sub.size)
            pool = [ipaddress.IPv4Address(sub.network + j) for j in range(pool_size)]
            egress.append(EgressSubnet(sub, pool, params.get("cc", "US"), params.get("region", "US-CA"),
                                       params.get("city", "")))
        built.append(Operator(params["label"], int(params["asn"]), v4, v6, fb, egress))
    return DeploymentSpec(seed=seed, operators=built, zone=zone or Zone(), **spec_kwargs)

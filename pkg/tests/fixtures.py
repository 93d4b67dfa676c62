"""Synthetic data sets shaped like the published measurements.

Every generator builds its data from explicit per-group counts, so tests
can compare analysis output against the counts used to construct it.
"""
import ipaddress
import itertools
import string

from relayscope.analytics.egress import EgressRecord
from relayscope.analytics.ingress import SubnetAttribution
from relayscope.ecs.catalog import IngressCatalog
from relayscope.ingest import ProbeResult
from relayscope.netcore.prefix import Attribution, IpPrefix, PrefixTable

APPLE, AKAMAI_PR, AKAMAI_EST, CLOUDFLARE, FASTLY = 714, 36183, 20940, 13335, 54113
LABELS = {APPLE: "Apple", AKAMAI_PR: "Akamai_PR", AKAMAI_EST: "Akamai_Est",
          CLOUDFLARE: "Cloudflare", FASTLY: "Fastly"}

# --- ingress catalogs per month ------------------------------------------------

INGRESS_BLOCKS = {APPLE: IpPrefix.parse("17.0.0.0/16"), AKAMAI_PR: IpPrefix.parse("172.224.0.0/16")}
TABLE1 = {
    # month: (default Apple, default Akamai_PR, fallback Apple, fallback Akamai_PR)
    "Jan": (365, 823, 0, 0),
    "Feb": (355, 845, 356, 0),
    "Mar": (347, 945, 334, 25),
    "Apr": (349, 1237, 336, 1062),
}


def ingress_pfx2as() -> str:
    return "".join(f"{p} {asn}\n" for asn, p in INGRESS_BLOCKS.items())


def ingress_table() -> PrefixTable:
    return PrefixTable((p, Attribution(asn, LABELS[asn])) for asn, p in INGRESS_BLOCKS.items())


def _addresses(asn: int, n: int, offset: int = 0) -> list:
    base = INGRESS_BLOCKS[asn].network
    return [ipaddress.IPv4Address(base + 1 + offset + i) for i in range(n)]


def month_catalog(month: str, fallback: bool = False) -> IngressCatalog:
    apple, akamai, fb_apple, fb_akamai = TABLE1[month]
    domain = "mask-h2.icloud.com" if fallback else "mask.icloud.com"
    if fallback:
        # fallback relays live after the default ones in each block
        addrs = _addresses(APPLE, fb_apple, 4000) + _addresses(AKAMAI_PR, fb_akamai, 4000)
    else:
        addrs = _addresses(APPLE, apple) + _addresses(AKAMAI_PR, akamai)
    cat = IngressCatalog(domain, "A", scanned_at=1_640_995_200_000)
    for i in range(0, len(addrs), 8):
        cat.add_answer(str(IpPrefix(4, (0x64400000 + (i // 8 << 8)), 24)), addrs[i:i + 8], scope=24)
    return cat


# --- client AS attribution (population table) ----------------------------------

TABLE2 = {
    # bucket: (ASes, population, /24 subnets, Apple's subnets within the bucket)
    "Akamai_PR": (34627, 994_000_000, 1_100_000, 0),
    "Apple": (20807, 105_000_000, 200_000, 200_000),
    "Both": (17301, 2_373_000_000, 10_600_000, 8_056_000),
}


def _split(total: int, parts: int) -> list:
    q, r = divmod(total, parts)
    return [q + (i < r) for i in range(parts)]


def table2_attribution() -> tuple:
    """(SubnetAttribution, population table) reproducing the per-bucket totals."""
    attr = SubnetAttribution()
    population = {}
    asn = 100_000
    for bucket, (n_as, pop, subnets, apple_subnets) in TABLE2.items():
        pops = _split(pop, n_as)
        subs = _split(subnets, n_as)
        apple = _split(apple_subnets, n_as)
        for i in range(n_as):
            asn += 1
            population[asn] = pops[i]
            if bucket == "Both":
                ops = {"Apple": apple[i], "Akamai_PR": subs[i] - apple[i]}
            else:
                ops = {bucket: subs[i]}
            attr.per_as[asn] = ops
            attr.as_subnets[asn] = subs[i]
    return attr, population


# --- egress list -----------------------------------------------------------------

def cc_labels(n: int = 248) -> list:
    """US, DE, then other two-letter labels; CCs are opaque labels here."""
    out = ["US", "DE"]
    for a, b in itertools.product(string.ascii_uppercase, repeat=2):
        if len(out) == n:
            break
        if a + b not in out:
            out.append(a + b)
    return out


CCS = cc_labels()
CC_SETS = {
    AKAMAI_PR: list(range(236)),
    AKAMAI_EST: list(range(24)),
    CLOUDFLARE: list(range(248)),
    FASTLY: list(range(235)) + [236],
}
CORE_CCS = 24  # indices every AS covers; city-bearing records use only these

# (lengths and counts of v4 subnets, v4 announced prefixes, v6 subnets, v6 prefixes)
TABLE3 = {
    AKAMAI_PR: ([(27, 1538), (29, 3), (32, 8349)], 301, 142826, 1172),
    AKAMAI_EST: ([(30, 1166), (32, 436)], 1, 23495, 1),
    CLOUDFLARE: ([(32, 18218)], 112, 26988, 2),
    FASTLY: ([(31, 8530)], 81, 8530, 81),
}
TABLE3_EXPECTED = {
    # v4 subnets, v4 BGP prefixes, v4 addresses, v6 subnets, v6 BGP prefixes, CCs
    AKAMAI_PR: (9890, 301, 57589, 142826, 1172, 236),
    AKAMAI_EST: (1602, 1, 5100, 23495, 1, 24),
    CLOUDFLARE: (18218, 112, 18218, 26988, 2, 248),
    FASTLY: (8530, 81, 17060, 8530, 81, 236),
}
V4_BASE = {AKAMAI_PR: ("172.224.0.0", 20), AKAMAI_EST: ("23.32.0.0", 18),
           CLOUDFLARE: ("104.16.0.0", 20), FASTLY: ("140.248.0.0", 20)}
V6_BASE = {AKAMAI_PR: ("2a02:26f7::", 48), AKAMAI_EST: ("2a02:26f0::", 40),
           CLOUDFLARE: ("2a09:bac0::", 44), FASTLY: ("2a04:4e41::", 48)}

# city pairs per version: (v4 pairs, v6 pairs, pairs shared by both)
TABLE5 = {
    AKAMAI_PR: (853, 14085, 850),
    AKAMAI_EST: (455, 7507, 455),
    CLOUDFLARE: (1134, 5228, 1134),
    FASTLY: (848, 848, 848),
}
TABLE5_EXPECTED = {AKAMAI_PR: (14088, 853, 14085), AKAMAI_EST: (7507, 455, 7507),
                   CLOUDFLARE: (5228, 1134, 5228), FASTLY: (848, 848, 848)}
# blank-city records per (AS, family): they also carry every non-core CC
BLANKS = {(AKAMAI_PR, 6): 1912, (AKAMAI_EST, 6): 400, (CLOUDFLARE, 4): 824, (CLOUDFLARE, 6): 300,
          (FASTLY, 4): 212, (FASTLY, 6): 193}


def _allocate(family: int, base: str, plen: int, n_prefixes: int, lengths: list):
    """Pack subnets into ``n_prefixes`` consecutive announced prefixes, round-robin."""
    width = 32 if family == 4 else 128
    start = int(ipaddress.ip_address(base))
    announced = [IpPrefix(family, start + (i << (width - plen)), plen) for i in range(n_prefixes)]
    cursor = [p.network for p in announced]
    out = []
    for k, length in enumerate(sorted(lengths)):
        i = k % n_prefixes
        size = 1 << (width - length)
        net = -(-cursor[i] // size) * size
        sub = IpPrefix(family, net, length)
        assert announced[i].contains(sub), "announced prefix overflow"
        cursor[i] = net + size
        out.append(sub)
    return announced, out


def _pair_cc(j: int) -> str:
    r = j % 1000
    if r < 600:
        return "US"
    if r < 637:
        return "DE"
    return CCS[2 + r % (CORE_CCS - 2)]


def egress_fixture():
    """(records, pfx2as table) shaped like the published egress list."""
    records = []
    table = PrefixTable()
    for asn, (v4_lengths, v4_pfx, v6_count, v6_pfx) in TABLE3.items():
        v4_all = [length for length, count in v4_lengths for _ in range(count)]
        groups = {
            4: _allocate(4, V4_BASE[asn][0], V4_BASE[asn][1], v4_pfx, v4_all),
            6: _allocate(6, V6_BASE[asn][0], V6_BASE[asn][1], v6_pfx, [64] * v6_count),
        }
        p4, p6, shared = TABLE5[asn]
        pairs = {4: range(0, p4), 6: range(p4 - shared, p4 - shared + p6)}
        extra_ccs = [CCS[i] for i in CC_SETS[asn] if i >= CORE_CCS]
        for fam, (announced, subnets) in groups.items():
            for p in announced:
                table.insert(p, Attribution(asn, LABELS[asn]))
            blanks = BLANKS.get((asn, fam), 0)
            coverage = extra_ccs if blanks >= len(extra_ccs) and blanks else []
            if coverage:
                extra_ccs = []
            rng = pairs[fam]
            for k, sub in enumerate(subnets):
                if k < blanks:
                    cc = coverage[k] if k < len(coverage) else "US"
                    records.append(EgressRecord(sub, cc, f"{cc}-R", None))
                else:
                    j = rng[(k - blanks) % len(rng)]
                    cc = _pair_cc(j)
                    records.append(EgressRecord(sub, cc, f"{cc}-R", f"{LABELS[asn]} City {j}"))
        assert not extra_ccs, f"no blank records left to carry CCs of AS{asn}"
    return records, table


def egress_csv(records) -> str:
    return "".join(f"{r.prefix},{r.cc},{r.region},{r.city or ''}\n" for r in records)


# --- blocking measurements ---------------------------------------------------------

BLOCKING = {
    # outcome: probes
    "NXDOMAIN": 516,
    "EMPTY": 92,
    "REFUSED_VERIFIED": 36,
    "HIJACK": 1,
    "SERVFAIL": 40,
    "FORMERR": 32,
    "REACHABLE": 11010,
    "TIMEOUT": 1303,
}
HIJACK_ADDR = "45.90.28.1"
RELAY_DOMAIN, CONTROL_DOMAIN = "mask.icloud.com", "control.example"


def blocking_fixture() -> list:
    """(target, control) ProbeResult pairs, one per probe."""
    pairs = []
    pid = 0
    for outcome, n in BLOCKING.items():
        for _ in range(n):
            pid += 1
            res = f"192.0.2.{pid % 250 + 1}"
            control = ProbeResult(pid, CONTROL_DOMAIN, rcode=0, answers=("198.51.100.7",), resolver=res)
            kw = dict(resolver=res)
            if outcome == "TIMEOUT":
                target = ProbeResult(pid, RELAY_DOMAIN, timeout=True, **kw)
                control = ProbeResult(pid, CONTROL_DOMAIN, timeout=True, **kw)
            elif outcome == "NXDOMAIN":
                target = ProbeResult(pid, RELAY_DOMAIN, rcode=3, **kw)
            elif outcome == "EMPTY":
                target = ProbeResult(pid, RELAY_DOMAIN, rcode=0, **kw)
            elif outcome == "REFUSED_VERIFIED":
                target = ProbeResult(pid, RELAY_DOMAIN, rcode=5, **kw)
            elif outcome == "HIJACK":
                target = ProbeResult(pid, RELAY_DOMAIN, rcode=0, answers=(HIJACK_ADDR,), **kw)
            elif outcome == "SERVFAIL":
                target = ProbeResult(pid, RELAY_DOMAIN, rcode=2, **kw)
            elif outcome == "FORMERR":
                target = ProbeResult(pid, RELAY_DOMAIN, rcode=1, **kw)
            else:
                target = ProbeResult(pid, RELAY_DOMAIN, rcode=0, answers=("17.0.0.5",), **kw)
            pairs.append((target, control))
    return pairs


# --- ingress/egress prefix overlap in one AS ------------------------------------------

OVERLAP = {
    # family: (announced, ingress-bearing, egress-bearing); the role sets are disjoint
    4: (478, 60, 301),
    6: (1335, 141, 1171),
}


def overlap_fixture():
    """(ingress addresses, egress records, announced table, oracle sets)."""
    table = PrefixTable()
    ingress, egress = [], []
    ing_set, eg_set, announced_set = set(), set(), set()
    for fam, (n_ann, n_ing, n_eg) in OVERLAP.items():
        base, plen = ("172.224.0.0", 22) if fam == 4 else ("2a02:26f7::", 48)
        width = 32 if fam == 4 else 128
        start = int(ipaddress.ip_address(base))
        prefixes = [IpPrefix(fam, start + (i << (width - plen)), plen) for i in range(n_ann)]
        for p in prefixes:
            table.insert(p, Attribution(AKAMAI_PR, "Akamai_PR"))
            announced_set.add(p)
        n_addr = 1237 if fam == 4 else 1229
        for k in range(n_addr):
            p = prefixes[k % n_ing]
            ingress.append(ipaddress.ip_address(p.network + 1 + k // n_ing))
            ing_set.add(p)
        for k in range(n_eg):
            p = prefixes[n_ing + k]
            sub = IpPrefix(fam, p.network, 27 if fam == 4 else 64)
            egress.append(EgressRecord(sub, "US", "US-CA", "Los Angeles"))
            eg_set.add(p)
    return ingress, egress, table, (announced_set, ing_set, eg_set)


# --- blocking personas on the emulator -------------------------------------------------------

PERSONA_EXPECTED = {
    # persona: verdict string expected from classify
    None: "Reachable",
    "nxdomain": "Blocked(NXDOMAIN)",
    "empty": "Blocked(EmptyNOERROR)",
    "refused": "Blocked(VerifiedREFUSED)",
    "hijack": "Blocked(Hijack)",
    "refused_all": "ResolverBroken(REFUSED)",
    "servfail": "ResolverBroken(SERVFAIL)",
    "formerr": "ResolverBroken(FORMERR)",
    "drop": "Inconclusive(Timeout)",
}
PERSONA_HIJACK_TO = "192.0.2.250"


def persona_prefix(i: int) -> IpPrefix:
    return IpPrefix(4, 0x64400000 + (i << 8), 24)


def persona_table() -> list:
    """[(client prefix, Persona)] for every persona except the None row."""
    from relayscope.emulator import Persona
    out = []
    for i, kind in enumerate(PERSONA_EXPECTED):
        if kind is not None:
            out.append((persona_prefix(i), Persona(kind, PERSONA_HIJACK_TO if kind == "hijack" else None)))
    return out


def persona_pairs(dns_endpoint, zone, timeout: float = 0.3) -> dict:
    """Query the relay and control domains once per persona, as a probe would.

    Returns {persona: (target ProbeResult, control ProbeResult)}.
    """
    from relayscope.netcore.client import dns_query
    from relayscope.netcore.dns import EcsOption, QType, answer_addresses

    def result(pid, name, ecs):
        msg = dns_query(dns_endpoint, name, QType.A, ecs=ecs, timeout=timeout)
        if msg is None:
            return ProbeResult(pid, name, timeout=True)
        return ProbeResult(pid, name, rcode=int(msg.rcode),
                           answers=tuple(str(a) for a in answer_addresses(msg)))

    out = {}
    for i, kind in enumerate(PERSONA_EXPECTED):
        ecs = EcsOption.for_subnet(persona_prefix(i))
        out[kind] = (result(i, zone.quic_domain, ecs), result(i, zone.control_domain, ecs))
    return out

import ipaddress
import random
import struct

import dns.message
import dns.rdatatype
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gen import random_dns_message, random_ecs, random_vn_fields
from relayscope.netcore import (
    Attribution, DnsEncodeError, DnsMessage, DnsParseError, EcsOption, Edns, GenericOption,
    IpPrefix, PrefixTable, QType, Question, Rcode, ResourceRecord, build_vn, build_vn_probe,
    decode_dns, encode_dns, lpm_lookup, make_query, parse_pfx2as, parse_vn, version_name,
)
from relayscope.netcore.quic import QuicParseError, parse_long_header


# --- prefixes ----------------------------------------------------------------

def test_prefix_canonical_form_enforced():
    assert str(IpPrefix.parse("198.51.100.0/24")) == "198.51.100.0/24"
    with pytest.raises(ValueError):
        IpPrefix.parse("198.51.100.1/24")
    with pytest.raises(ValueError):
        IpPrefix(4, 0, 33)
    p = IpPrefix.from_address("198.51.100.77", 24)
    assert p == IpPrefix.parse("198.51.100.0/24")
    assert "198.51.100.200" in p and "198.51.101.0" not in p
    assert IpPrefix.parse("2001:db8::/32").contains(IpPrefix.parse("2001:db8:1::/48"))


def test_lpm_examples():
    t = PrefixTable([(IpPrefix.parse("10.0.0.0/8"), "A"), (IpPrefix.parse("10.1.0.0/16"), "B")])
    assert lpm_lookup(t, "10.1.2.3") == "B"
    assert lpm_lookup(t, "10.2.0.1") == "A"
    assert lpm_lookup(t, "192.0.2.1") is None


def test_duplicate_insert_replaces():
    t = PrefixTable()
    t.insert(IpPrefix.parse("10.0.0.0/8"), 1)
    t.insert(IpPrefix.parse("10.0.0.0/8"), 2)
    assert len(t) == 1 and t.lookup("10.9.9.9") == 2


def _linear_lpm(entries, addr):
    best = None
    for prefix, value in entries:
        if prefix.contains(addr) and (best is None or prefix.length > best[0].length):
            best = (prefix, value)
    return None if best is None else best[1]


def _random_prefix(rng, family):
    width = 32 if family == 4 else 128
    length = rng.randint(0, width) if family == 4 else rng.choice((0, 16, 32, 48, 56, 64, 128))
    return IpPrefix.from_address(
        ipaddress.ip_address(rng.getrandbits(width)) if family == 4
        else ipaddress.IPv6Address(rng.getrandbits(width)), length)


def test_lpm_matches_linear_oracle():
    rng = random.Random(11)
    entries = {}
    # cluster prefixes in 10/8 so lookups hit nested entries often
    for i in range(300):
        base = (10 << 24) | rng.getrandbits(24)
        length = rng.randint(8, 32)
        p = IpPrefix.from_address(ipaddress.IPv4Address(base), length)
        entries[p] = i
    for i in range(40):
        entries[_random_prefix(rng, 6)] = 1000 + i
    table = PrefixTable(entries.items())
    items = list(entries.items())
    for _ in range(2000):
        if rng.random() < 0.8:
            addr = ipaddress.IPv4Address((10 << 24) | rng.getrandbits(24))
        else:
            addr = ipaddress.IPv6Address(rng.getrandbits(128))
        assert table.lookup(addr) == _linear_lpm(items, addr)


def test_parse_pfx2as_formats_and_problems():
    table = parse_pfx2as("17.0.0.0/8 714\n", labels={714: "Apple"})
    assert table.lookup("17.1.2.3") == Attribution(714, "Apple")
    table = parse_pfx2as("# caida style\n17.0.0.0\t8\t714\ngarbage\n2620:149::\t32\t714_6185\n")
    assert len(table) == 2
    assert len(table.problems) == 1 and "line 3" in table.problems[0]
    assert table.lookup("2620:149::1").asn == 714
    with pytest.raises(ValueError):
        parse_pfx2as("garbage\n# nothing\n")


def test_parse_pfx2as_1813_entries():
    lines = [f"20.{i // 256}.{i % 256}.0/24 36183" for i in range(478)]
    lines += [f"2a02:26f7:{i:x}::/48 36183" for i in range(1335)]
    table = parse_pfx2as("\n".join(lines))
    assert len(table) == 1813
    assert sum(1 for p, _ in table if p.family == 4) == 478


# --- DNS ---------------------------------------------------------------------

def test_ecs_option_bytes_hand_encoded():
    # option-code 8, length 7, family 1, source /24, scope 0, 3 address octets
    expected = bytes.fromhex("0008 0007 0001 18 00 c63364")
    ecs = EcsOption.for_subnet("198.51.100.0/24")
    assert ecs == EcsOption(1, 24, 0, bytes([198, 51, 100]))
    wire = encode_dns(make_query("mask.icloud.com", ecs=ecs))
    # OPT rdata sits at the end of the message
    assert wire.endswith(expected)
    assert wire[-len(expected) - 2:-len(expected)] == struct.pack("!H", len(expected))


def test_ecs_invariants():
    with pytest.raises(ValueError):
        EcsOption(1, 24, 0, bytes([198, 51]))
    with pytest.raises(ValueError):
        EcsOption(1, 23, 0, bytes([198, 51, 101]))  # bit past /23 set
    rng = random.Random(5)
    for _ in range(500):
        ecs = random_ecs(rng)
        assert len(ecs.address) == -(-ecs.source_len // 8)
        if ecs.source_len % 8:
            assert ecs.address[-1] & ((1 << (8 - ecs.source_len % 8)) - 1) == 0


def test_query_roundtrip_without_edns():
    msg = DnsMessage(id=7, rd=True, question=Question("mask.icloud.com", QType.A))
    assert decode_dns(encode_dns(msg)) == msg


def test_nxdomain_response():
    msg = DnsMessage(id=1, qr=True, rcode=Rcode.NXDOMAIN, question=Question("mask.icloud.com"))
    out = decode_dns(encode_dns(msg))
    assert out.rcode == Rcode.NXDOMAIN and out.answers == ()


def test_eight_records():
    answers = tuple(ResourceRecord("mask.icloud.com", QType.A, 60,
                                   ipaddress.IPv4Address(f"198.18.0.{i}")) for i in range(8))
    msg = DnsMessage(id=3, qr=True, question=Question("mask.icloud.com"), answers=answers)
    assert len(decode_dns(encode_dns(msg)).answers) == 8


def test_two_opt_records_rejected():
    opt = ResourceRecord("", QType.OPT, 0, b"")
    with pytest.raises(DnsEncodeError):
        encode_dns(DnsMessage(edns=Edns(), additional=(opt,)))
    # hand-built wire message with two OPT RRs
    raw_opt = b"\x00" + struct.pack("!HHIH", 41, 1232, 0, 0)
    wire = struct.pack("!HHHHHH", 1, 0, 0, 0, 0, 2) + raw_opt + raw_opt
    with pytest.raises(DnsParseError):
        decode_dns(wire)


def test_name_too_long():
    with pytest.raises(DnsEncodeError):
        encode_dns(make_query(".".join(["a" * 60] * 5)))
    with pytest.raises(DnsEncodeError):
        encode_dns(make_query("a" * 64 + ".com"))


def test_unknown_options_preserved():
    opts = (GenericOption(10, b"\x01\x02\x03\x04\x05\x06\x07\x08"), EcsOption.for_subnet("192.0.2.0/24"))
    msg = DnsMessage(id=9, edns=Edns(options=opts), question=Question("x.test"))
    assert decode_dns(encode_dns(msg)).edns.options == opts


def test_compression_pointers_followed_and_loops_rejected():
    q = dns.message.make_query("mask.icloud.com", "A")
    r = dns.message.make_response(q)
    r.answer.append(dns.rrset.from_text("mask.icloud.com.", 60, "IN", "A", "198.18.0.1", "198.18.0.2"))
    wire = r.to_wire()  # dnspython compresses the owner names
    assert b"\xc0\x0c" in wire
    msg = decode_dns(wire)
    assert [rr.name for rr in msg.answers] == ["mask.icloud.com"] * 2
    # header + question name that points at itself
    loop = struct.pack("!HHHHHH", 1, 0, 1, 0, 0, 0) + b"\xc0\x0c" + b"\x00\x01\x00\x01"
    with pytest.raises(DnsParseError):
        decode_dns(loop)


@pytest.mark.parametrize("cut", range(0, 60, 3))
def test_truncated_input_never_crashes(cut):
    wire = encode_dns(make_query("mask.icloud.com", ecs=EcsOption.for_subnet("198.51.100.0/24")))
    if cut >= len(wire):
        return
    try:
        decode_dns(wire[:cut])
    except DnsParseError:
        pass


@given(st.binary(max_size=200))
def test_garbage_only_raises_parse_error(data):
    try:
        decode_dns(data)
    except DnsParseError:
        pass


@settings(max_examples=400, deadline=None)
@given(st.randoms(use_true_random=False))
def test_roundtrip_property(rng):
    msg = random_dns_message(rng)
    assert decode_dns(encode_dns(msg)) == msg


def test_interop_with_dnspython():
    rng = random.Random(3)
    for _ in range(300):
        ecs = random_ecs(rng)
        msg = make_query("relay.example", QType.AAAA, id=rng.getrandbits(16), ecs=ecs)
        theirs = dns.message.from_wire(encode_dns(msg))
        opt = theirs.options[0]
        assert opt.otype == 8
        assert (opt.family, opt.srclen, opt.scopelen) == (ecs.family, ecs.source_len, ecs.scope_len)
        assert theirs.question[0].rdtype == dns.rdatatype.AAAA
    # and the other direction
    q = dns.message.make_query("mask.icloud.com", "A", use_edns=0,
                               options=[dns.edns.ECSOption("198.51.100.0", 24, 16)])
    ours = decode_dns(q.to_wire())
    assert ours.ecs == EcsOption(1, 24, 16, bytes([198, 51, 100]))


# --- QUIC ----------------------------------------------------------------------

def test_vn_probe_layout():
    pkt = build_vn_probe(b"\x01" * 8, b"\x02" * 8, 0x1A2A3A4A)
    assert len(pkt) == 1200
    assert pkt[0] & 0x80 and pkt[0] & 0x40
    assert pkt[1:5] == bytes.fromhex("1a2a3a4a")
    assert pkt[5] == 8 and pkt[6:14] == b"\x01" * 8 and pkt[14] == 8
    hdr = parse_long_header(pkt)
    assert hdr.version == 0x1A2A3A4A and hdr.scid == b"\x02" * 8
    # token length 0, then a 2-byte length varint covering the rest
    assert hdr.rest[0] == 0
    length = struct.unpack("!H", hdr.rest[1:3])[0] & 0x3FFF
    assert length == len(hdr.rest) - 3
    assert len(build_vn_probe(b"", b"", 1)) == 1200


def test_vn_probe_cid_bound():
    with pytest.raises(ValueError):
        build_vn_probe(b"\x00" * 21, b"", 0x1A2A3A4A)


def test_parse_vn_versions():
    pkt = build_vn(b"\xaa", b"\xbb", [0x00000001, 0xFF00001D, 0xFF00001C, 0xFF00001B])
    vn = parse_vn(pkt)
    assert vn.version_names == ["v1", "draft-29", "draft-28", "draft-27"]
    assert version_name(0x1A2A3A4A) == "0x1a2a3a4a"


def test_parse_vn_errors():
    with pytest.raises(QuicParseError):
        parse_vn(b"\x80\x00\x00\x00\x00\x00\x00")
    with pytest.raises(QuicParseError):
        parse_vn(build_vn_probe(b"", b"", 0x1A2A3A4A))
    with pytest.raises(ValueError):
        build_vn(b"", b"", [])


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_vn_roundtrip_property(rng):
    dcid, scid, versions = random_vn_fields(rng)
    vn = parse_vn(build_vn(dcid, scid, versions))
    assert (vn.dcid, vn.scid, list(vn.versions)) == (dcid, scid, versions)

"""Minimal DNS wire codec with EDNS0 and the Client Subnet option.

Encoding never uses name compression. Decoding follows compression
pointers (with loop protection) so replies from real servers parse.
"""
from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Union


class DnsError(ValueError):
    pass


class DnsEncodeError(DnsError):
    pass


class DnsParseError(DnsError):
    pass


class QType(IntEnum):
    A = 1
    NS = 2
    CNAME = 5
    SOA = 6
    PTR = 12
    TXT = 16
    AAAA = 28
    OPT = 41


class Rcode(IntEnum):
    NOERROR = 0
    FORMERR = 1
    SERVFAIL = 2
    NXDOMAIN = 3
    NOTIMP = 4
    REFUSED = 5


def rcode_name(code: int) -> str:
    try:
        return Rcode(code).name
    except ValueError:
        return f"RCODE{code}"


CLASS_IN = 1
ECS_OPTION_CODE = 8
_NAME_TYPES = (QType.NS, QType.CNAME, QType.PTR)


@dataclass(frozen=True)
class EcsOption:
    """EDNS Client Subnet payload (option code 8).

    ``address`` holds only the significant octets, i.e. exactly
    ceil(source_len / 8) bytes with the bits past source_len cleared.
    """

    family: int
    source_len: int
    scope_len: int
    address: bytes

    code = ECS_OPTION_CODE

    def __post_init__(self):
        width = {1: 32, 2: 128}.get(self.family)
        if width is None:
            raise DnsError(f"ECS family {self.family} not supported")
        if not 0 <= self.source_len <= width or not 0 <= self.scope_len <= width:
            raise DnsError("ECS prefix length out of range")
        if len(self.address) != (self.source_len + 7) // 8:
            raise DnsError("ECS address length does not match source prefix length")
        spare = -self.source_len % 8
        if self.address and self.address[-1] & ((1 << spare) - 1):
            raise DnsError("ECS address has bits set past the source prefix")

    @classmethod
    def for_subnet(cls, subnet, scope_len: int = 0) -> "EcsOption":
        """Build from an ``IpPrefix`` or anything ``ipaddress.ip_network`` takes."""
        if hasattr(subnet, "packed") and hasattr(subnet, "family"):
            version, length, packed = subnet.family, subnet.length, subnet.packed
        else:
            net = ipaddress.ip_network(subnet)
            version, length, packed = net.version, net.prefixlen, net.network_address.packed
        return cls(1 if version == 4 else 2, length, scope_len, packed[: (length + 7) // 8])

    @property
    def network(self) -> Union[ipaddress.IPv4Network, ipaddress.IPv6Network]:
        full = 4 if self.family == 1 else 16
        raw = self.address + bytes(full - len(self.address))
        return ipaddress.ip_network((raw, self.source_len))

    def to_wire(self) -> bytes:
        return struct.pack("!HBB", self.family, self.source_len, self.scope_len) + self.address

    @classmethod
    def from_wire(cls, data: bytes) -> "EcsOption":
        if len(data) < 4:
            raise DnsParseError("ECS option shorter than 4 bytes")
        family, source, scope = struct.unpack("!HBB", data[:4])
        try:
            return cls(family, source, scope, bytes(data[4:]))
        except DnsError as exc:
            raise DnsParseError(str(exc)) from None


@dataclass(frozen=True)
class GenericOption:
    """An EDNS option this codec does not interpret; re-emitted verbatim."""

    code: int
    data: bytes

    def to_wire(self) -> bytes:
        return self.data


@dataclass(frozen=True)
class Edns:
    udp_size: int = 1232
    version: int = 0
    dnssec_ok: bool = False
    options: tuple = ()

    @property
    def ecs(self) -> Optional[EcsOption]:
        for opt in self.options:
            if isinstance(opt, EcsOption):
                return opt
        return None


def _strip_root(name: str) -> str:
    if name.endswith(".") and not name.endswith("\\."):
        return name[:-1]
    return name


@dataclass(frozen=True)
class Question:
    name: str
    qtype: int = QType.A
    qclass: int = CLASS_IN

    def __post_init__(self):
        object.__setattr__(self, "name", _strip_root(self.name))


@dataclass(frozen=True)
class ResourceRecord:
    """One RR. ``rdata`` is an address for A/AAAA, a name for NS/CNAME/PTR,
    a tuple of byte strings for TXT and raw bytes for everything else."""

    name: str
    rtype: int
    ttl: int
    rdata: object
    rclass: int = CLASS_IN

    def __post_init__(self):
        object.__setattr__(self, "name", _strip_root(self.name))


@dataclass(frozen=True)
class DnsMessage:
    id: int = 0
    qr: bool = False
    opcode: int = 0
    aa: bool = False
    tc: bool = False
    rd: bool = False
    ra: bool = False
    ad: bool = False
    cd: bool = False
    rcode: int = Rcode.NOERROR
    question: Optional[Question] = None
    answers: tuple = ()
    authority: tuple = ()
    additional: tuple = ()
    edns: Optional[Edns] = None

    @property
    def ecs(self) -> Optional[EcsOption]:
        return self.edns.ecs if self.edns else None


def make_query(name: str, qtype: int = QType.A, *, id: int = 0, ecs: Optional[EcsOption] = None,
               rd: bool = False, udp_size: int = 1232) -> DnsMessage:
    edns = Edns(udp_size=udp_size, options=(ecs,) if ecs else ())
    return DnsMessage(id=id, rd=rd, question=Question(name, qtype), edns=edns)


# --- names -----------------------------------------------------------------

def _split_name(name: str) -> list[bytes]:
    """Presentation name to raw labels, honouring ``\\.`` and ``\\DDD`` escapes."""
    if name in ("", "."):
        return []
    labels, cur, i = [], bytearray(), 0
    while i < len(name):
        ch = name[i]
        if ch == "\\":
            nxt = name[i + 1:i + 4]
            if len(nxt) == 3 and nxt.isdigit():
                cur.append(int(nxt))
                i += 4
                continue
            if i + 1 >= len(name):
                raise DnsEncodeError(f"dangling escape in {name!r}")
            cur.extend(name[i + 1].encode("latin-1"))
            i += 2
            continue
        if ch == ".":
            labels.append(bytes(cur))
            cur = bytearray()
        else:
            cur.extend(ch.encode("latin-1"))
        i += 1
    if cur or not name.endswith("."):
        labels.append(bytes(cur))
    return labels


def _escape_label(label: bytes) -> str:
    out = []
    for b in label:
        if b in (0x2E, 0x5C):
            out.append("\\" + chr(b))
        elif 0x21 <= b <= 0x7E:
            out.append(chr(b))
        else:
            out.append(f"\\{b:03d}")
    return "".join(out)


def encode_name(name: str) -> bytes:
    try:
        labels = _split_name(name)
    except UnicodeEncodeError:
        raise DnsEncodeError(f"non-latin-1 characters in {name!r}") from None
    out = bytearray()
    for label in labels:
        if not label:
            raise DnsEncodeError(f"empty label in {name!r}")
        if len(label) > 63:
            raise DnsEncodeError(f"label longer than 63 octets in {name!r}")
        out.append(len(label))
        out += label
    out.append(0)
    if len(out) > 255:
        raise DnsEncodeError(f"name exceeds 255 octets: {name[:40]!r}...")
    return bytes(out)


def decode_name(data: bytes, offset: int) -> tuple[str, int]:
    """Read a possibly compressed name; returns (name, offset after it)."""
    labels, end, seen, total = [], None, set(), 1
    while True:
        if offset >= len(data):
            raise DnsParseError("name runs past end of message")
        n = data[offset]
        if n & 0xC0 == 0xC0:
            if offset + 1 >= len(data):
                raise DnsParseError("truncated compression pointer")
            target = ((n & 0x3F) << 8) | data[offset + 1]
            if target in seen:
                raise DnsParseError("compression pointer loop")
            seen.add(target)
            if end is None:
                end = offset + 2
            offset = target
            continue
        if n & 0xC0:
            raise DnsParseError(f"unsupported label type {n:#x}")
        offset += 1
        if n == 0:
            break
        if offset + n > len(data):
            raise DnsParseError("label runs past end of message")
        total += n + 1
        if total > 255:
            raise DnsParseError("name exceeds 255 octets")
        labels.append(_escape_label(data[offset:offset + n]))
        offset += n
    return ".".join(labels), (end if end is not None else offset)


# --- records -----------------------------------------------------------------

def _encode_rdata(rr: ResourceRecord) -> bytes:
    t, rd = rr.rtype, rr.rdata
    if isinstance(rd, (bytes, bytearray)):
        return bytes(rd)
    if t == QType.A:
        return ipaddress.IPv4Address(rd).packed
    if t == QType.AAAA:
        return ipaddress.IPv6Address(rd).packed
    if t in _NAME_TYPES:
        return encode_name(rd)
    if t == QType.TXT:
        out = bytearray()
        for s in rd:
            if len(s) > 255:
                raise DnsEncodeError("TXT string longer than 255 octets")
            out.append(len(s))
            out += s
        return bytes(out)
    raise DnsEncodeError(f"cannot encode rdata {rd!r} for type {t}")


def _decode_rdata(data: bytes, rtype: int, start: int, length: int):
    raw = data[start:start + length]
    if rtype == QType.A and length == 4:
        return ipaddress.IPv4Address(raw)
    if rtype == QType.AAAA and length == 16:
        return ipaddress.IPv6Address(raw)
    if rtype in _NAME_TYPES:
        name, end = decode_name(data, start)
        if end != start + length:
            raise DnsParseError("name rdata length mismatch")
        return name
    if rtype == QType.TXT:
        strings, i = [], 0
        while i < length:
            n = raw[i]
            if i + 1 + n > length:
                raise DnsParseError("TXT string runs past rdata")
            strings.append(bytes(raw[i + 1:i + 1 + n]))
            i += 1 + n
        return tuple(strings)
    return bytes(raw)


def _encode_rr(rr: ResourceRecord) -> bytes:
    rdata = _encode_rdata(rr)
    if len(rdata) > 0xFFFF:
        raise DnsEncodeError("rdata too long")
    return encode_name(rr.name) + struct.pack("!HHIH", rr.rtype, rr.rclass, rr.ttl, len(rdata)) + rdata


def _encode_opt(edns: Edns, rcode: int) -> bytes:
    body = bytearray()
    for opt in edns.options:
        payload = opt.to_wire()
        body += struct.pack("!HH", opt.code, len(payload)) + payload
    ttl = ((rcode >> 4) << 24) | (edns.version << 16) | (0x8000 if edns.dnssec_ok else 0)
    return b"\x00" + struct.pack("!HHIH", QType.OPT, edns.udp_size, ttl, len(body)) + bytes(body)


def _decode_options(data: bytes) -> tuple:
    opts, i = [], 0
    while i < len(data):
        if i + 4 > len(data):
            raise DnsParseError("truncated EDNS option header")
        code, n = struct.unpack("!HH", data[i:i + 4])
        payload = data[i + 4:i + 4 + n]
        if len(payload) != n:
            raise DnsParseError("truncated EDNS option payload")
        opts.append(EcsOption.from_wire(payload) if code == ECS_OPTION_CODE
                    else GenericOption(code, bytes(payload)))
        i += 4 + n
    return tuple(opts)


# --- messages ----------------------------------------------------------------

def encode_dns(msg: DnsMessage) -> bytes:
    """Serialise ``msg`` without name compression."""
    if any(rr.rtype == QType.OPT for rr in (*msg.answers, *msg.authority, *msg.additional)):
        raise DnsEncodeError("OPT records belong in DnsMessage.edns; at most one is allowed")
    if not 0 <= msg.rcode <= (0xFFF if msg.edns else 0xF):
        raise DnsEncodeError(f"rcode {msg.rcode} not representable")
    flags = ((msg.qr << 15) | ((msg.opcode & 0xF) << 11) | (msg.aa << 10) | (msg.tc << 9)
             | (msg.rd << 8) | (msg.ra << 7) | (msg.ad << 5) | (msg.cd << 4) | (msg.rcode & 0xF))
    arcount = len(msg.additional) + (1 if msg.edns else 0)
    out = bytearray(struct.pack("!HHHHHH", msg.id, flags, 1 if msg.question else 0,
                                len(msg.answers), len(msg.authority), arcount))
    if msg.question:
        q = msg.question
        out += encode_name(q.name) + struct.pack("!HH", q.qtype, q.qclass)
    for rr in (*msg.answers, *msg.authority, *msg.additional):
        out += _encode_rr(rr)
    if msg.edns:
        out += _encode_opt(msg.edns, msg.rcode)
    return bytes(out)


def decode_dns(data: bytes) -> DnsMessage:
    """Parse a wire message. Malformed input raises DnsParseError."""
    try:
        return _decode(bytes(data))
    except DnsParseError:
        raise
    except (struct.error, IndexError, ValueError) as exc:
        raise DnsParseError(f"malformed message: {exc}") from None


def _decode(data: bytes) -> DnsMessage:
    if len(data) < 12:
        raise DnsParseError("message shorter than header")
    mid, flags, qd, an, ns, ar = struct.unpack("!HHHHHH", data[:12])
    if qd > 1:
        raise DnsParseError("multiple questions not supported")
    off, question = 12, None
    if qd:
        name, off = decode_name(data, off)
        if off + 4 > len(data):
            raise DnsParseError("truncated question")
        qtype, qclass = struct.unpack("!HH", data[off:off + 4])
        question = Question(name, qtype, qclass)
        off += 4
    sections: list[list[ResourceRecord]] = [[], [], []]
    edns, rcode = None, flags & 0xF
    for idx, count in enumerate((an, ns, ar)):
        for _ in range(count):
            name, off = decode_name(data, off)
            if off + 10 > len(data):
                raise DnsParseError("truncated resource record")
            rtype, rclass, ttl, rdlen = struct.unpack("!HHIH", data[off:off + 10])
            off += 10
            if off + rdlen > len(data):
                raise DnsParseError("rdata runs past end of message")
            if rtype == QType.OPT:
                if idx != 2 or name:
                    raise DnsParseError("OPT record outside additional section or not at root")
                if edns is not None:
                    raise DnsParseError("more than one OPT record")
                edns = Edns(udp_size=rclass, version=(ttl >> 16) & 0xFF,
                            dnssec_ok=bool(ttl & 0x8000),
                            options=_decode_options(data[off:off + rdlen]))
                rcode |= (ttl >> 24) << 4
            else:
                rdata = _decode_rdata(data, rtype, off, rdlen)
                sections[idx].append(ResourceRecord(name, rtype, ttl, rdata, rclass))
            off += rdlen
    try:
        rcode = Rcode(rcode)
    except ValueError:
        pass
    return DnsMessage(
        id=mid, qr=bool(flags & 0x8000), opcode=(flags >> 11) & 0xF, aa=bool(flags & 0x400),
        tc=bool(flags & 0x200), rd=bool(flags & 0x100), ra=bool(flags & 0x80),
        ad=bool(flags & 0x20), cd=bool(flags & 0x10), rcode=rcode, question=question,
        answers=tuple(sections[0]), authority=tuple(sections[1]),
        additional=tuple(sections[2]), edns=edns,
    )


def answer_addresses(msg: DnsMessage) -> list:
    """A/AAAA addresses in answer order, duplicates removed."""
    seen, out = set(), []
    for rr in msg.answers:
        if rr.rtype in (QType.A, QType.AAAA) and isinstance(rr.rdata, ipaddress._BaseAddress):
            if rr.rdata not in seen:
                seen.add(rr.rdata)
                out.append(rr.rdata)
    return out

"""Address prefixes and longest-prefix-match tables."""
from __future__ import annotations

import ipaddress
import logging
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Union

log = logging.getLogger(__name__)

Address = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]
AddressLike = Union[str, int, bytes, Address]

_BITS = {4: 32, 6: 128}


def ip(value: AddressLike) -> Address:
    """Coerce strings, packed bytes and ipaddress objects to an address."""
    if isinstance(value, (ipaddress.IPv4Address, ipaddress.IPv6Address)):
        return value
    return ipaddress.ip_address(value)


def address_key(addr: Address) -> tuple[int, int]:
    """Sort key that orders IPv4 before IPv6 and numerically within a family."""
    return (addr.version, int(addr))


@dataclass(frozen=True, order=True)
class IpPrefix:
    """A canonical CIDR prefix.

    ``network`` is the integer value of the address with every bit past
    ``length`` cleared; construction rejects anything else.
    """

    family: int
    network: int
    length: int

    def __post_init__(self):
        if self.family not in _BITS:
            raise ValueError(f"unknown address family {self.family!r}")
        width = _BITS[self.family]
        if not 0 <= self.length <= width:
            raise ValueError(f"prefix length {self.length} invalid for IPv{self.family}")
        if not 0 <= self.network < (1 << width):
            raise ValueError("network value out of range")
        if self.network & self.hostmask:
            raise ValueError(f"host bits set in {self.network:#x}/{self.length}")

    @classmethod
    def parse(cls, text: str, strict: bool = True) -> "IpPrefix":
        net = ipaddress.ip_network(text.strip(), strict=strict)
        return cls(net.version, int(net.network_address), net.prefixlen)

    @classmethod
    def from_address(cls, addr: AddressLike, length: int) -> "IpPrefix":
        """The prefix of ``length`` bits that contains ``addr``."""
        a = ip(addr)
        width = _BITS[a.version]
        if not 0 <= length <= width:
            raise ValueError(f"prefix length {length} invalid for IPv{a.version}")
        mask = ((1 << width) - 1) ^ ((1 << (width - length)) - 1)
        return cls(a.version, int(a) & mask, length)

    @property
    def width(self) -> int:
        return _BITS[self.family]

    @property
    def hostmask(self) -> int:
        return (1 << (self.width - self.length)) - 1

    @property
    def size(self) -> int:
        return 1 << (self.width - self.length)

    @property
    def address(self) -> Address:
        if self.family == 4:
            return ipaddress.IPv4Address(self.network)
        return ipaddress.IPv6Address(self.network)

    @property
    def packed(self) -> bytes:
        return self.address.packed

    @property
    def last(self) -> int:
        return self.network | self.hostmask

    def contains(self, other: Union["IpPrefix", AddressLike]) -> bool:
        if isinstance(other, IpPrefix):
            return (other.family == self.family and other.length >= self.length
                    and (other.network & ~self.hostmask) == self.network)
        a = ip(other)
        return a.version == self.family and (int(a) & ~self.hostmask) == self.network

    __contains__ = contains

    def supernet(self, length: int) -> "IpPrefix":
        if length > self.length:
            raise ValueError("supernet must be shorter")
        return IpPrefix.from_address(self.address, length)

    def subnets(self, length: int) -> Iterator["IpPrefix"]:
        if length < self.length or length > self.width:
            raise ValueError(f"cannot split /{self.length} into /{length}")
        step = 1 << (self.width - length)
        for net in range(self.network, self.last + 1, step):
            yield IpPrefix(self.family, net, length)

    def __str__(self):
        return f"{self.address}/{self.length}"

    def __repr__(self):
        return f"IpPrefix('{self}')"


@dataclass(frozen=True)
class Attribution:
    """Origin AS of a prefix, with the operator label used in reports."""

    asn: int
    label: Optional[str] = None

    @property
    def name(self) -> str:
        return self.label or f"AS{self.asn}"


class PrefixTable:
    """Map of prefixes to values answering longest-prefix-match queries.

    Lookups probe one hash table per distinct prefix length, longest first,
    so a query costs at most as many dict probes as there are lengths in use.
    """

    def __init__(self, entries: Iterable[tuple[IpPrefix, object]] = ()):
        # family -> length -> {network: value}
        self._by_len: dict[int, dict[int, dict[int, object]]] = {4: {}, 6: {}}
        self._lengths: dict[int, list[int]] = {4: [], 6: []}
        self.problems: list[str] = []
        for prefix, value in entries:
            self.insert(prefix, value)

    def insert(self, prefix: IpPrefix, value: object) -> None:
        """Add ``prefix``; an existing entry for the same prefix is replaced."""
        bucket = self._by_len[prefix.family]
        if prefix.length not in bucket:
            bucket[prefix.length] = {}
            self._lengths[prefix.family] = sorted(bucket, reverse=True)
        bucket[prefix.length][prefix.network] = value

    def __len__(self):
        return sum(len(t) for fam in self._by_len.values() for t in fam.values())

    def __iter__(self) -> Iterator[tuple[IpPrefix, object]]:
        for fam in (4, 6):
            for length in sorted(self._by_len[fam]):
                for net in sorted(self._by_len[fam][length]):
                    yield IpPrefix(fam, net, length), self._by_len[fam][length][net]

    def items(self):
        return list(self)

    def get(self, prefix: IpPrefix, default=None):
        return self._by_len[prefix.family].get(prefix.length, {}).get(prefix.network, default)

    def match(self, addr: Union[AddressLike, IpPrefix]) -> Optional[tuple[IpPrefix, object]]:
        """Longest prefix covering ``addr`` (or a whole prefix) and its value."""
        if isinstance(addr, IpPrefix):
            family, value, limit = addr.family, addr.network, addr.length
        else:
            a = ip(addr)
            family, value, limit = a.version, int(a), _BITS[a.version]
        width = _BITS[family]
        bucket = self._by_len[family]
        for length in self._lengths[family]:
            if length > limit:
                continue
            net = value & (((1 << width) - 1) ^ ((1 << (width - length)) - 1))
            hit = bucket[length].get(net, _MISSING)
            if hit is not _MISSING:
                return IpPrefix(family, net, length), hit
        return None

    def lookup(self, addr: Union[AddressLike, IpPrefix]):
        found = self.match(addr)
        return None if found is None else found[1]

    def filter(self, predicate) -> "PrefixTable":
        return PrefixTable((p, v) for p, v in self if predicate(p, v))


_MISSING = object()


def lpm_lookup(table: PrefixTable, addr: AddressLike):
    """Value of the longest prefix in ``table`` containing ``addr``, or None."""
    return table.lookup(addr)


_ASN_SPLIT = re.compile(r"[_,]")


def parse_pfx2as(text: str, labels: Optional[dict[int, str]] = None) -> PrefixTable:
    """Build a table from pfx2as text.

    Accepts ``<prefix>/<len> <asn>`` and the CAIDA three-column
    ``<prefix> <len> <asn>`` form. Multi-origin fields (``714_6185`` or
    ``714,6185``) attribute to the first AS. Malformed lines are skipped and
    recorded in ``table.problems``.
    """
    labels = labels or {}
    table = PrefixTable()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) == 2 and "/" in parts[0]:
                cidr, asn_field = parts
            elif len(parts) == 3:
                cidr, asn_field = f"{parts[0]}/{parts[1]}", parts[2]
            else:
                raise ValueError("expected '<prefix>/<len> <asn>' or '<prefix> <len> <asn>'")
            prefix = IpPrefix.parse(cidr)
            asn = int(_ASN_SPLIT.split(asn_field)[0].removeprefix("AS"))
        except ValueError as exc:
            msg = f"line {lineno}: {raw.strip()!r}: {exc}"
            log.warning("pfx2as %s", msg)
            table.problems.append(msg)
            continue
        table.insert(prefix, Attribution(asn, labels.get(asn)))
    if len(table) == 0:
        raise ValueError("pfx2as input contains no valid lines")
    return table

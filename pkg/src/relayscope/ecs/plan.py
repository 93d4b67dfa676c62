"""Scan planning over the IPv4 space in /24 units.

Units are addressed by their /24 index (``address >> 8``). A plan is kept as
sorted, disjoint runs of indices, so even the full 2**24-unit plan is cheap.
"""
from __future__ import annotations

import bisect
from collections.abc import Sequence
from typing import Iterable, Iterator, Optional

from ..netcore.prefix import IpPrefix

UNIVERSE = 1 << 24


def unit_prefix(index: int) -> IpPrefix:
    return IpPrefix(4, index << 8, 24)


def unit_index(prefix: IpPrefix) -> int:
    return prefix.network >> 8


def _runs(prefixes: Iterable[IpPrefix]) -> list[tuple[int, int]]:
    spans = []
    for p in prefixes:
        if p.family != 4:
            raise ValueError(f"scan planning covers IPv4 only, got {p}")
        spans.append((p.network >> 8, (p.last >> 8) + 1))
    spans.sort()
    merged: list[list[int]] = []
    for start, stop in spans:
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], stop)
        else:
            merged.append([start, stop])
    return [(a, b) for a, b in merged]


def _subtract(runs, holes):
    """``runs`` minus ``holes``; both sorted and disjoint."""
    out, j = [], 0
    for start, stop in runs:
        cur = start
        while j < len(holes) and holes[j][1] <= cur:
            j += 1
        k = j
        while k < len(holes) and holes[k][0] < stop:
            hs, he = holes[k]
            if hs > cur:
                out.append((cur, hs))
            cur = max(cur, he)
            k += 1
        if cur < stop:
            out.append((cur, stop))
    return out


def _complement(runs):
    out, cur = [], 0
    for start, stop in runs:
        if start > cur:
            out.append((cur, start))
        cur = stop
    if cur < UNIVERSE:
        out.append((cur, UNIVERSE))
    return out


class ScanPlan(Sequence):
    """Sorted sequence of client /24 prefixes to query."""

    def __init__(self, runs: list[tuple[int, int]], routed_units: int, blocked_units: int = 0):
        self.runs = runs
        self._offsets = [0]
        for start, stop in runs:
            self._offsets.append(self._offsets[-1] + stop - start)
        self.routed_units = routed_units
        self.blocked_units = blocked_units

    def __len__(self):
        return self._offsets[-1]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        r = bisect.bisect_right(self._offsets, i) - 1
        return unit_prefix(self.runs[r][0] + i - self._offsets[r])

    def __iter__(self) -> Iterator[IpPrefix]:
        for idx in self.indices():
            yield unit_prefix(idx)

    def __contains__(self, item):
        if not isinstance(item, IpPrefix) or item.family != 4 or item.length != 24:
            return False
        return self.contains_index(item.network >> 8)

    def contains_index(self, idx: int) -> bool:
        r = bisect.bisect_right(self.runs, (idx, UNIVERSE + 1)) - 1
        return r >= 0 and self.runs[r][0] <= idx < self.runs[r][1]

    def indices(self) -> Iterator[int]:
        for start, stop in self.runs:
            yield from range(start, stop)

    def interleaved(self) -> Iterator[int]:
        """Every unit once, ordered so consecutive units sit in different /16s.

        Visiting the n-th /24 of every /16 before the (n+1)-th lets a short
        ECS scope from the first answer in a /16 prune the rest of it.
        """
        for low in range(256):
            for start, stop in self.runs:
                first = start + ((low - start) % 256)
                yield from range(first, stop, 256)

    @property
    def unrouted_skipped(self) -> int:
        """/24 units outside routable space that the plan leaves out."""
        return UNIVERSE - self.blocked_units - len(self)


def plan_scan(routable: Iterable[IpPrefix], sparse_stride: Optional[int] = 12,
              blocklist: Iterable[IpPrefix] = ()) -> ScanPlan:
    """Every /24 of routable space plus one /24 per unrouted ``/sparse_stride`` block.

    The representative of a block is its first unrouted, non-blocklisted
    /24. ``sparse_stride=None`` disables sampling of unrouted space.
    """
    routed = _runs(routable)
    blocked = _runs(blocklist)
    if not routed and sparse_stride is None:
        raise ValueError("no routable prefixes and sparse scanning disabled: nothing to scan")
    if sparse_stride is not None and not 0 <= sparse_stride <= 24:
        raise ValueError("sparse_stride must be a prefix length between 0 and 24")

    units = _subtract(routed, blocked)
    routed_units = sum(b - a for a, b in units)
    if sparse_stride is not None:
        free = _subtract(_complement(routed), blocked)
        block = 1 << (24 - sparse_stride)
        reps = []
        if block == 1:
            units = units + free
            free = []
        # first free unit at or after each block start, if it lies in that block
        for start, stop in free:
            b = start - start % block
            while b < stop:
                first = max(b, start)
                if not reps or reps[-1] < b:
                    reps.append(first)
                b += block
        units = sorted(units + [(r, r + 1) for r in reps])
        merged: list[list[int]] = []
        for a, b in units:
            if merged and a <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], b)
            else:
                merged.append([a, b])
        units = [(a, b) for a, b in merged]
    blocked_units = sum(b - a for a, b in blocked)
    return ScanPlan(units, routed_units, blocked_units)

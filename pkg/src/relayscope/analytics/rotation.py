"""Egress rotation statistics over probe traces."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..netcore.prefix import IpPrefix, PrefixTable, ip

TRACE_FIELDS = ("ts", "channel", "ingress", "egress", "error")


@dataclass(frozen=True)
class Observation:
    ts: int
    channel: str
    ingress: Optional[str]
    egress: Optional[str]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.egress is not None


class RotationTrace(list):
    """Ordered observations. Failed attempts stay in the trace with an error."""

    def check(self) -> None:
        last = {}
        for obs in self:
            if obs.ts < last.get(obs.channel, obs.ts):
                raise ValueError(f"timestamps decrease on channel {obs.channel!r}")
            last[obs.channel] = obs.ts

    @property
    def channels(self) -> list:
        return sorted({o.channel for o in self})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for o in self:
            w.writerow([o.ts, o.channel, o.ingress or "", o.egress or "", o.error or ""])
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RotationTrace":
        rows = csv.DictReader(io.StringIO(text))
        missing = {"ts", "channel", "ingress", "egress"} - set(rows.fieldnames or ())
        if missing:
            raise ValueError(f"trace CSV lacks columns {sorted(missing)}")
        out = cls()
        for row in rows:
            out.append(Observation(int(row["ts"]), row["channel"], row["ingress"] or None,
                                   row["egress"] or None, row.get("error") or None))
        return out

    @classmethod
    def load(cls, path) -> "RotationTrace":
        return cls.from_csv(Path(path).read_text())


def _subnet_of(addr, egress_prefixes: Optional[PrefixTable]) -> str:
    a = ip(addr)
    if egress_prefixes is not None:
        hit = egress_prefixes.match(a)
        if hit is not None:
            return str(hit[0])
    return str(IpPrefix.from_address(a, 24 if a.version == 4 else 64))


def rotation_stats(trace, operators: Optional[PrefixTable] = None,
                   egress_prefixes: Optional[PrefixTable] = None) -> dict:
    """Address-change statistics of a trace.

    ``change_fraction`` counts consecutive successful observations on the
    same channel that differ. ``parallel_divergence_fraction`` pairs the
    i-th observation of every channel (one round) and counts rounds where
    the channels saw different addresses. Operator changes need an
    attribution table for egress addresses.
    """
    trace = RotationTrace(trace)
    if not trace:
        raise ValueError("trace is empty")
    trace.check()
    t0 = min(o.ts for o in trace)
    per_channel = defaultdict(list)
    for o in trace:
        per_channel[o.channel].append(o)

    pairs = changes = 0
    events = []
    for ch in sorted(per_channel):
        ok = [o for o in per_channel[ch] if o.ok]
        for prev, cur in zip(ok, ok[1:]):
            pairs += 1
            changes += prev.egress != cur.egress
            if operators is not None:
                a, b = operators.lookup(ip(prev.egress)), operators.lookup(ip(cur.egress))
                na = getattr(a, "name", a) or "unknown"
                nb = getattr(b, "name", b) or "unknown"
                if na != nb:
                    events.append({"offset_ms": cur.ts - t0, "channel": ch, "from": na, "to": nb})
    events.sort(key=lambda e: (e["offset_ms"], e["channel"]))

    divergence = None
    if len(per_channel) >= 2:
        chans = [per_channel[c] for c in sorted(per_channel)]
        rounds = diverged = 0
        for obs in zip(*chans):
            if all(o.ok for o in obs):
                rounds += 1
                diverged += len({o.egress for o in obs}) > 1
        divergence = diverged / rounds if rounds else None

    seen = sorted({o.egress for o in trace if o.ok}, key=lambda a: (ip(a).version, int(ip(a))))
    return {
        "observations": len(trace),
        "failed": sum(not o.ok for o in trace),
        "pairs": pairs,
        "changes": changes,
        "change_fraction": changes / pairs if pairs else 0.0,
        "distinct_addresses": len(seen),
        "addresses": seen,
        "distinct_subnets": len({_subnet_of(a, egress_prefixes) for a in seen}),
        "operator_change_events": events,
        "parallel_divergence_fraction": divergence,
    }

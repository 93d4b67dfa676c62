"""relayscope command line.

Exit status: 0 on success, 1 on usage or configuration errors, 2 when the
work itself fails (unreadable input, unwritable output, network errors).
Only scan-ecs, probe run and vn-probe touch the network; emulate up only
listens on the given host.
"""
from __future__ import annotations

import argparse
import asyncio
import ipaddress
import json
import logging
import signal
import sys
from importlib import resources
from pathlib import Path

import jsonschema

from . import report
from .analytics import (
    RotationTrace, diff_egress_lists, egress_stats, geo_distribution, ingress_shares,
    load_egress_list, overlap_report, rotation_stats,
)
from .analytics.overlap import restrict_table
from .ecs import IngressCatalog, ScanConfig, diff_catalogs, enumerate_ingress, plan_scan
from .ingest import (
    blocking_report, ipv6_catalog_from_results, pair_results, parse_results, resolver_stats,
)
from .netcore.prefix import IpPrefix, PrefixTable, parse_pfx2as

log = logging.getLogger("relayscope")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- shared helpers -----------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path}: {exc}") from None
    schema = json.loads(resources.files("relayscope").joinpath("schema/config.schema.json").read_text())
    try:
        jsonschema.validate(cfg, schema)
    except jsonschema.ValidationError as exc:
        raise UsageError(f"config {path}: {exc.message}") from None
    return cfg


def _labels(cfg: dict) -> dict:
    return {int(k): v for k, v in cfg.get("labels", {}).items()}


def _pfx2as(path, cfg) -> PrefixTable:
    return parse_pfx2as(Path(path).read_text(), _labels(cfg))


def read_prefix_file(path) -> list[IpPrefix]:
    """Prefixes from a plain list or pfx2as file (first column, or CAIDA prefix+length)."""
    out = []
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        text = parts[0] if "/" in parts[0] else f"{parts[0]}/{parts[1]}" if len(parts) > 1 else parts[0]
        try:
            out.append(IpPrefix.parse(text))
        except ValueError as exc:
            raise UsageError(f"{path}:{n}: {exc}") from None
    return out


def _endpoint(text: str, default_port: int = 53) -> tuple[str, int]:
    from .emulator.runner import parse_endpoint
    try:
        return parse_endpoint(text, default_port)
    except (ValueError, OSError) as exc:
        raise UsageError(f"bad endpoint {text!r}: {exc}") from None


def _is_loopback(host: str) -> bool:
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return host == "localhost"


# --- subcommands ---------------------------------------------------------------

def cmd_scan_ecs(args, cfg):
    server = _endpoint(args.server)
    limits = cfg.get("rate_limits", {})
    if not _is_loopback(server[0]) and (args.rate is None or args.blocklist is None):
        raise UsageError("a non-loopback --server needs explicit --rate and --blocklist")
    routable = read_prefix_file(args.routable) if args.routable else []
    blocklist = read_prefix_file(args.blocklist) if args.blocklist else []
    stride = None if args.no_sparse else args.sparse_stride
    try:
        plan = plan_scan([p for p in routable if p.family == 4], stride, blocklist)
        config = ScanConfig(
            target_domain=args.domain, server=server, routable=routable, sparse_stride=stride,
            blocklist=blocklist,
            rate_qps=args.rate if args.rate is not None else limits.get("qps", 20.0),
            max_inflight=args.max_inflight or limits.get("max_inflight", 100),
            timeout_ms=args.timeout_ms or limits.get("timeout_ms", 2000),
            retries=args.retries if args.retries is not None else limits.get("retries", 1),
            log_path=args.log,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    catalog, stats = enumerate_ingress(config, plan=plan)
    catalog.save(args.out)
    report.emit(report.to_json(stats.to_dict()), args.stats)
    return 0 if not stats.aborted else 2


def cmd_ingest_results(args, cfg):
    results = parse_results(args.results, strict=args.strict)
    rows = [r.__dict__ for r in sorted(results, key=lambda r: (r.probe_id, r.target, r.resolver or ""))]
    report.emit_report({"results": rows, "count": len(rows)}, "json", args.out)
    if args.ipv6_catalog:
        ipv6_catalog_from_results([r for r in results if r.qtype == "AAAA"],
                                  domain=args.domain).save(args.ipv6_catalog)
    return 0


def cmd_classify_blocking(args, cfg):
    target = args.target_domain or cfg.get("target_domain")
    control = args.control_domain or cfg.get("control_domain")
    if not target:
        raise UsageError("--target-domain (or target_domain in the config) is required")
    results = parse_results(args.results, strict=args.strict)
    relays = IngressCatalog.load(args.known_relays).addresses if args.known_relays else None
    rep = blocking_report(pair_results(results, target, control), relays, cfg.get("hijack_list"))
    report.emit(rep.to_csv(), args.out)
    if args.summary:
        report.emit(report.to_json(rep.summary()), args.summary)
    return 0


def cmd_analyze(args, cfg):
    kind = args.analysis
    fmt = args.format
    if kind == "ingress":
        rows = ingress_shares(IngressCatalog.load(args.catalog), _pfx2as(args.pfx2as, cfg))
        if fmt == "csv":
            report.emit_report([(r.label, r.count, report.percent(r.share)) for r in rows], "csv",
                               args.out, header=("operator", "count", "share"))
        else:
            report.emit_report({"rows": [r.__dict__ for r in rows]}, "json", args.out)
    elif kind == "egress":
        rows = egress_stats(load_egress_list(args.egress_list), _pfx2as(args.pfx2as, cfg))
        header = ("operator", "asn", "v4_subnets", "v4_bgp_prefixes", "v4_addresses", "v6_subnets",
                  "v6_bgp_prefixes", "cc_count")
        if fmt == "csv":
            report.emit_report([[r[h] if r[h] is not None else "" for h in
                                 ("label",) + header[1:]] for r in rows], "csv", args.out, header)
        else:
            report.emit_report({"rows": rows}, "json", args.out)
    elif kind == "overlap":
        table = restrict_table(_pfx2as(args.pfx2as, cfg), args.asn or cfg.get("overlap_asns"))
        rep = overlap_report(IngressCatalog.load(args.catalog), load_egress_list(args.egress_list),
                             table)
        report.emit_report(rep.to_dict(), "json", args.out)
    elif kind == "rotation":
        trace = RotationTrace.load(args.trace)
        operators = _pfx2as(args.pfx2as, cfg) if args.pfx2as else None
        egress = load_egress_list(args.egress_list).table() if args.egress_list else None
        stats = rotation_stats(trace, operators, egress)
        if fmt == "csv":
            report.emit_report([(e["offset_ms"], e["channel"], e["from"], e["to"])
                                for e in stats["operator_change_events"]], "csv", args.out,
                               header=("offset_ms", "channel", "from", "to"))
        else:
            report.emit_report(stats, "json", args.out)
    elif kind == "resolvers":
        results = parse_results(args.results)
        stats = resolver_stats(results, _pfx2as(args.pfx2as, cfg), cfg.get("public_resolvers", []),
                               whoami=not args.resolver_field)
        report.emit_report(stats, "json", args.out)
    elif kind == "geo":
        table = _pfx2as(args.pfx2as, cfg) if args.pfx2as else None
        geo = geo_distribution(load_egress_list(args.egress_list), table)
        if fmt == "csv":
            report.emit_report([(r["cc"], r["subnets"], f"{r['share']:.6f}") for r in geo["per_cc"]],
                               "csv", args.out, header=("cc", "subnets", "share"))
        else:
            report.emit_report(geo, "json", args.out)
    return 0


def cmd_diff(args, cfg):
    if args.what == "catalog":
        d = diff_catalogs(IngressCatalog.load(args.old), IngressCatalog.load(args.new))
        out = {"added": sorted(map(str, d.added)), "removed": sorted(map(str, d.removed)),
               "kept": len(d.kept), "old_size": d.old_size, "new_size": d.new_size,
               "growth": d.growth}
    else:
        d = diff_egress_lists(load_egress_list(args.old), load_egress_list(args.new))
        out = {**d, "added": [str(p) for p in d["added"]], "removed": [str(p) for p in d["removed"]],
               "kept": len(d["kept"])}
    report.emit_report(out, "json", args.out)
    return 0


def _operator_arg(text: str) -> dict:
    parts = text.split(":")
    if len(parts) not in (3, 5):
        raise argparse.ArgumentTypeError("expected label:asn:n_ingress[:n_egress_subnets:pool_size]")
    # one egress subnet by default so the generated spec can run
    d = {"label": parts[0], "asn": int(parts[1]), "n_ingress": int(parts[2]), "n_egress_subnets": 1}
    if len(parts) == 5:
        d["n_egress_subnets"], d["pool_size"] = int(parts[3]), int(parts[4])
    return d


def cmd_emulate(args, cfg):
    from .emulator import DeploymentSpec, Emulator, generate_deployment
    if args.action == "generate":
        if not args.operator:
            raise UsageError("give at least one --operator")
        try:
            spec = generate_deployment(args.seed, args.operator)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        report.emit(spec.to_json(), args.out)
        return 0
    try:
        spec = DeploymentSpec.load(args.spec)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad deployment spec: {exc}") from None

    async def serve():
        emu = Emulator(spec, args.host, dns_port=args.dns_port, ingress_port=args.ingress_port,
                       echo_port=args.echo_port, dns_jitter=args.jitter, keep_dns_log=False)
        endpoints = await emu.start()
        info = report.to_json(endpoints.to_dict())
        if args.ready_file:
            tmp = Path(str(args.ready_file) + ".tmp")
            tmp.write_text(info)
            tmp.replace(args.ready_file)
        else:
            sys.stdout.write(info)
            sys.stdout.flush()
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        try:
            await asyncio.wait_for(stop.wait(), args.duration)
        except asyncio.TimeoutError:
            pass
        await emu.stop()

    asyncio.run(serve())
    return 0


def cmd_probe(args, cfg):
    from .emulator import ProbeConfig, run_probe
    override = {}
    for item in args.override or []:
        name, sep, addr = item.partition("=")
        if not sep:
            raise UsageError(f"--override expects name=address, got {item!r}")
        override[name.rstrip(".").lower()] = addr
    pc = ProbeConfig(dns=_endpoint(args.dns), ingress=_endpoint(args.ingress, 443),
                     echo=_endpoint(args.echo, 80), domain=args.domain.rstrip(".").lower(),
                     rounds=args.rounds, interval=args.interval, override=override,
                     timeout=args.timeout)
    trace = run_probe(pc, seed=args.seed)
    report.emit(trace.to_csv(), args.out)
    return 0


def cmd_vn_probe(args, cfg):
    from .netcore.client import vn_probe
    server = _endpoint(args.server, 443)
    version = int(args.version, 16)
    vn = vn_probe(server, version, timeout=args.timeout)
    out = {"server": f"{server[0]}:{server[1]}", "probe_version": f"{version:#010x}",
           "response": vn is not None, "versions": vn.version_names if vn else None}
    report.emit_report(out, "json", args.out)
    return 0


# --- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relayscope", description=__doc__.split("\n")[0])
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("scan-ecs", help="enumerate ingress addresses with ECS queries")
    s.add_argument("--server", required=True, help="authoritative server host[:port]")
    s.add_argument("--domain", default="mask.icloud.com")
    s.add_argument("--routable", help="routable prefixes (list or pfx2as)")
    s.add_argument("--blocklist", help="prefixes never to query")
    s.add_argument("--sparse-stride", type=int, default=12)
    s.add_argument("--no-sparse", action="store_true", help="skip unrouted space entirely")
    s.add_argument("--rate", type=float, help="queries per second")
    s.add_argument("--max-inflight", type=int)
    s.add_argument("--timeout-ms", type=int)
    s.add_argument("--retries", type=int)
    s.add_argument("--log", help="per-query JSON-lines log")
    s.add_argument("--out", required=True, help="catalog JSON")
    s.add_argument("--stats", help="scan statistics JSON (default stdout)")
    s.set_defaults(func=cmd_scan_ecs)

    s = sub.add_parser("ingest-results", help="normalise probe DNS results")
    s.add_argument("--results", required=True)
    s.add_argument("--strict", action="store_true")
    s.add_argument("--domain", help="relay domain for the IPv6 catalog")
    s.add_argument("--ipv6-catalog", help="write a catalog of AAAA answers")
    s.add_argument("--out")
    s.set_defaults(func=cmd_ingest_results)

    s = sub.add_parser("classify-blocking", help="blocking verdict per probe")
    s.add_argument("--results", required=True)
    s.add_argument("--target-domain")
    s.add_argument("--control-domain")
    s.add_argument("--known-relays", help="catalog of known relay addresses (hijack check)")
    s.add_argument("--strict", action="store_true")
    s.add_argument("--out", help="verdict CSV")
    s.add_argument("--summary", help="summary JSON")
    s.set_defaults(func=cmd_classify_blocking)

    s = sub.add_parser("analyze", help="catalog and list analyses")
    s.add_argument("analysis", choices=("ingress", "egress", "overlap", "rotation", "resolvers", "geo"))
    s.add_argument("--catalog")
    s.add_argument("--pfx2as")
    s.add_argument("--egress-list")
    s.add_argument("--trace")
    s.add_argument("--results")
    s.add_argument("--asn", type=int, action="append", help="overlap: restrict to these ASes")
    s.add_argument("--resolver-field", action="store_true",
                   help="resolvers: use the result's resolver field, not whoami answers")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("diff", help="compare two catalogs or egress lists")
    s.add_argument("what", choices=("catalog", "egress"))
    s.add_argument("--old", required=True)
    s.add_argument("--new", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_diff)

    s = sub.add_parser("emulate", help="loopback relay deployment")
    s.add_argument("action", choices=("up", "generate"))
    s.add_argument("--spec", help="deployment spec JSON (up)")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--dns-port", type=int, default=0)
    s.add_argument("--ingress-port", type=int, default=0)
    s.add_argument("--echo-port", type=int, default=0)
    s.add_argument("--jitter", type=float, default=0.0, help="max random DNS reply delay (s)")
    s.add_argument("--ready-file", help="write endpoints JSON here once listening")
    s.add_argument("--duration", type=float, help="stop after this many seconds")
    s.add_argument("--seed", type=int, default=0, help="generate: RNG seed")
    s.add_argument("--operator", type=_operator_arg, action="append",
                   help="generate: label:asn:n_ingress[:n_egress_subnets:pool_size]")
    s.add_argument("--out", help="generate: spec output path")
    s.set_defaults(func=cmd_emulate)

    s = sub.add_parser("probe", help="rotation probe through the relay")
    s.add_argument("action", choices=("run",))
    s.add_argument("--dns", required=True)
    s.add_argument("--ingress", required=True)
    s.add_argument("--echo", required=True)
    s.add_argument("--domain", default="mask.icloud.com")
    s.add_argument("--rounds", type=int, default=10)
    s.add_argument("--interval", type=float, default=0.0)
    s.add_argument("--override", action="append", help="name=address, forces the ingress")
    s.add_argument("--timeout", type=float, default=5.0)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="trace CSV")
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("vn-probe", help="QUIC version negotiation probe")
    s.add_argument("server", help="host[:port]")
    s.add_argument("--version", default="1a2a3a4a", help="hex version to offer")
    s.add_argument("--timeout", type=float, default=2.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_vn_probe)
    return p


_REQUIRED = {
    ("analyze", "ingress"): ("catalog", "pfx2as"),
    ("analyze", "egress"): ("egress_list", "pfx2as"),
    ("analyze", "overlap"): ("catalog", "egress_list", "pfx2as"),
    ("analyze", "rotation"): ("trace",),
    ("analyze", "resolvers"): ("results", "pfx2as"),
    ("analyze", "geo"): ("egress_list",),
    ("emulate", "up"): ("spec",),
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        key = (args.command, getattr(args, "analysis", None) or getattr(args, "action", None))
        missing = [f"--{a.replace('_', '-')}" for a in _REQUIRED.get(key, ()) if not getattr(args, a)]
        if missing:
            raise UsageError(f"{' '.join(key)} needs {', '.join(missing)}")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"relayscope: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help and friends
        return exc.code if isinstance(exc.code, int) else 1
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"relayscope: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

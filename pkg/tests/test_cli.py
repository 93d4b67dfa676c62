import json
import subprocess
import sys
import time

import pytest

from fixtures import (
    CONTROL_DOMAIN, HIJACK_ADDR, RELAY_DOMAIN, blocking_fixture, egress_csv, ingress_pfx2as,
    month_catalog,
)
from relayscope.analytics import EgressRecord
from relayscope.cli import main
from relayscope.emulator import EmulatorThread, generate_deployment
from relayscope.netcore.dns import rcode_name
from relayscope.netcore.prefix import IpPrefix

LABELS = {"labels": {"714": "Apple", "36183": "Akamai_PR"}}


@pytest.fixture
def work(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps(LABELS))
    (tmp_path / "pfx2as.txt").write_text(ingress_pfx2as())
    month_catalog("Apr").save(tmp_path / "apr.json")
    month_catalog("Jan").save(tmp_path / "jan.json")
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


def test_usage_errors(capsys):
    assert run() == 1
    assert run("no-such-command") == 1
    assert run("analyze", "ingress") == 1
    assert "needs --catalog" in capsys.readouterr().err
    assert run("analyze", "nonsense") == 1


def test_analyze_ingress_csv(work, capsys):
    args = ("--config", work / "cfg.json", "analyze", "ingress", "--catalog", work / "apr.json",
            "--pfx2as", work / "pfx2as.txt")
    assert run(*args) == 0
    first = capsys.readouterr().out
    assert first.splitlines() == ["operator,count,share", "Apple,349,22.0%", "Akamai_PR,1237,78.0%"]
    assert run(*args) == 0
    assert capsys.readouterr().out == first


def test_analyze_ingress_json_to_file(work):
    out = work / "shares.json"
    assert run("--config", work / "cfg.json", "analyze", "ingress", "--catalog", work / "apr.json",
               "--pfx2as", work / "pfx2as.txt", "--format", "json", "--out", out) == 0
    data = json.loads(out.read_text())
    assert data["schema"] == 1 and [r["count"] for r in data["rows"]] == [349, 1237]


def test_runtime_errors_exit_2(work):
    assert run("analyze", "ingress", "--catalog", work / "missing.json",
               "--pfx2as", work / "pfx2as.txt") == 2
    assert run("analyze", "ingress", "--catalog", work / "apr.json", "--pfx2as", work / "pfx2as.txt",
               "--out", work / "no" / "such" / "dir" / "x.csv") == 2


def test_config_is_validated(work):
    bad = work / "bad.json"
    bad.write_text(json.dumps({"rate_limits": {"qps": -1}}))
    assert run("--config", bad, "analyze", "ingress", "--catalog", work / "apr.json",
               "--pfx2as", work / "pfx2as.txt") == 1
    bad.write_text(json.dumps({"unexpected": 1}))
    assert run("--config", bad, "diff", "catalog", "--old", work / "jan.json",
               "--new", work / "apr.json") == 1


def test_diff_catalog(work, capsys):
    assert run("diff", "catalog", "--old", work / "jan.json", "--new", work / "apr.json") == 0
    out = json.loads(capsys.readouterr().out)
    assert (out["old_size"], out["new_size"]) == (1188, 1586)
    assert round(out["growth"] * 100, 1) == 33.5


def _egress_files(work):
    old = [EgressRecord(IpPrefix(4, 0x0A000000 + (i << 8), 24), "US", "US-CA", "LA") for i in range(20)]
    new = old + [EgressRecord(IpPrefix(4, 0x0B000000 + (i << 8), 24), "DE", "DE-BE", None)
                 for i in range(3)]
    new += [EgressRecord(IpPrefix(4, 0x0C000000 + (i << 8), 24), cc, "", "X")
            for i, cc in enumerate(["FR", "AT", "AT"])]
    (work / "old.csv").write_text(egress_csv(old))
    (work / "new.csv").write_text(egress_csv(new))


def test_diff_egress_and_geo_order(work, capsys):
    _egress_files(work)
    assert run("diff", "egress", "--old", work / "old.csv", "--new", work / "new.csv") == 0
    d = json.loads(capsys.readouterr().out)
    assert d["growth"] == 0.3 and d["removed"] == []
    assert run("analyze", "geo", "--egress-list", work / "new.csv") == 0
    rows = capsys.readouterr().out.splitlines()
    assert [r.split(",")[0] for r in rows] == ["cc", "US", "DE", "AT", "FR"]


def test_rotation_events(work, capsys):
    trace = work / "trace.csv"
    trace.write_text("ts,channel,ingress,egress,error\n"
                     "1000,curl,198.18.0.1,192.0.2.1,\n"
                     "2000,curl,198.18.0.1,198.51.100.1,\n"
                     "3000,curl,198.18.0.1,,timeout\n"
                     "4000,curl,198.18.0.1,192.0.2.2,\n")
    pfx = work / "egress_pfx2as.txt"
    pfx.write_text("192.0.2.0/24 64500\n198.51.100.0/24 64501\n")
    cfg = work / "ecfg.json"
    cfg.write_text(json.dumps({"labels": {"64500": "OpA", "64501": "OpB"}}))
    assert run("--config", cfg, "analyze", "rotation", "--trace", trace, "--pfx2as", pfx) == 0
    assert capsys.readouterr().out.splitlines() == [
        "offset_ms,channel,from,to", "1000,curl,OpA,OpB", "3000,curl,OpB,OpA"]
    assert run("analyze", "rotation", "--trace", trace, "--format", "json") == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["failed"] == 1 and stats["change_fraction"] == 1.0


def _results_file(path):
    with path.open("w") as f:
        for target, control in blocking_fixture():
            for r in (target, control):
                obj = {"prb_id": r.probe_id, "target": r.target, "resolver": r.resolver}
                if r.timeout:
                    obj["timeout"] = True
                else:
                    obj.update(rcode=rcode_name(r.rcode), answers=list(r.answers))
                f.write(json.dumps(obj) + "\n")


def test_classify_blocking(work):
    results = work / "results.jsonl"
    _results_file(results)
    cfg = work / "bcfg.json"
    cfg.write_text(json.dumps({"hijack_list": [HIJACK_ADDR], "target_domain": RELAY_DOMAIN,
                               "control_domain": CONTROL_DOMAIN}))
    summary, verdicts = work / "summary.json", work / "verdicts.csv"
    assert run("--config", cfg, "classify-blocking", "--results", results, "--out", verdicts,
               "--summary", summary) == 0
    s = json.loads(summary.read_text())
    assert (s["blocked"], s["counted"], s["total"]) == (645, 11727, 13030)
    assert verdicts.read_text().splitlines()[0] == "probe_id,resolver,verdict,reason"
    assert run("classify-blocking", "--results", results) == 1  # no target domain
    assert run("ingest-results", "--results", results, "--out", work / "norm.json") == 0
    assert json.loads((work / "norm.json").read_text())["count"] == 26060


def test_resolvers(work, capsys):
    results = work / "whoami.jsonl"
    results.write_text("".join(json.dumps({"prb_id": i, "target": "whoami.relay.test",
                                           "rcode": "NOERROR", "answers": [a]}) + "\n"
                               for i, a in enumerate(["8.8.8.8", "17.0.0.9", "17.0.0.10"])))
    (work / "res_pfx.txt").write_text("8.8.8.0/24 15169\n17.0.0.0/16 714\n")
    cfg = work / "rcfg.json"
    cfg.write_text(json.dumps({"public_resolvers": ["8.8.8.0/24"]}))
    assert run("--config", cfg, "analyze", "resolvers", "--results", results,
               "--pfx2as", work / "res_pfx.txt") == 0
    s = json.loads(capsys.readouterr().out)
    assert s["per_as"] == {"15169": 1, "714": 2}
    assert s["public_share"] == pytest.approx(1 / 3)


def test_overlap(work, capsys):
    (work / "ov_pfx.txt").write_text("17.0.0.0/16 714\n172.224.0.0/16 36183\n172.225.0.0/16 36183\n")
    (work / "ov_egress.csv").write_text("172.225.0.0/28,US,US-CA,LA\n")
    assert run("analyze", "overlap", "--catalog", work / "apr.json", "--egress-list",
               work / "ov_egress.csv", "--pfx2as", work / "ov_pfx.txt", "--asn", "36183") == 0
    rep = json.loads(capsys.readouterr().out)
    assert (rep["announced"], rep["used"], rep["disjoint"]) == (2, 2, True)


def test_scan_guards(work):
    empty = work / "empty.txt"
    empty.write_text("")
    assert run("scan-ecs", "--server", "127.0.0.1:1", "--routable", empty, "--no-sparse",
               "--out", work / "c.json") == 1
    assert run("scan-ecs", "--server", "192.0.2.1", "--routable", empty,
               "--out", work / "c.json") == 1
    assert run("scan-ecs", "--out", work / "c.json") == 1


@pytest.fixture(scope="module")
def emu():
    spec = generate_deployment(2, [dict(label="Apple", asn=714, n_ingress=10, n_egress_subnets=1),
                                   dict(label="Akamai_PR", asn=36183, n_ingress=20, n_egress_subnets=1)])
    with EmulatorThread(spec) as e:
        yield e


def test_scan_and_vn_probe_against_emulator(emu, work, capsys):
    host, port = emu.endpoints.dns
    routable = work / "routable.txt"
    routable.write_text("10.0.0.0/22\n")
    out = work / "cat.json"
    assert run("scan-ecs", "--server", f"{host}:{port}", "--routable", routable, "--no-sparse",
               "--rate", 500, "--out", out) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["queries_sent"] == 4 and stats["timeouts"] == 0
    assert json.loads(out.read_text())["schema"] == 1
    host, port = emu.endpoints.ingress
    assert run("vn-probe", f"{host}:{port}") == 0
    vn = json.loads(capsys.readouterr().out)
    assert vn["versions"] == ["v1", "draft-29", "draft-28", "draft-27"]
    assert run("vn-probe", f"{host}:{port}", "--version", "00000001", "--timeout", 0.5) == 0
    assert json.loads(capsys.readouterr().out)["response"] is False


def test_emulate_generate_up_and_probe(work, capsys):
    spec = work / "spec.json"
    assert run("emulate", "generate", "--seed", 7, "--operator", "Apple:714:349:1:4",
               "--operator", "Akamai_PR:36183:1237:1:2", "--out", spec) == 0
    again = work / "spec2.json"
    run("emulate", "generate", "--seed", 7, "--operator", "Apple:714:349:1:4",
        "--operator", "Akamai_PR:36183:1237:1:2", "--out", again)
    assert spec.read_bytes() == again.read_bytes()
    assert run("emulate", "generate", "--operator", "bad") == 1

    ready = work / "ready.json"
    proc = subprocess.Popen([sys.executable, "-m", "relayscope", "emulate", "up", "--spec", str(spec),
                             "--ready-file", str(ready), "--duration", "30"])
    try:
        deadline = time.time() + 20
        while not ready.exists() and time.time() < deadline:
            time.sleep(0.05)
        ep = json.loads(ready.read_text())
        trace = work / "trace.csv"
        assert run("probe", "run", "--dns", ep["dns"], "--ingress", ep["ingress"], "--echo", ep["echo"],
                   "--rounds", 4, "--seed", 1, "--out", trace) == 0
        rows = trace.read_text().splitlines()
        assert rows[0] == "ts,channel,ingress,egress,error" and len(rows) == 9
        assert all(r.endswith(",") for r in rows[1:])  # no errors
    finally:
        proc.terminate()
        assert proc.wait(10) == 0

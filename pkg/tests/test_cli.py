import json

import pytest
from click.testing import CliRunner

from dronechain.chainfile import audit_chain, describe_block
from dronechain.cli import main
from dronechain.ledger import Confirmation
from dronechain.simnet import diff_reports, load_scenario, run_scenario

from conftest import GOLDEN, SCENARIOS
from helpers import ChainBuilder, build_random_chain

HAPPY = str(SCENARIOS / "happy_path.json")


@pytest.fixture
def cli():
    return CliRunner()


@pytest.fixture
def trust_chain(mock, tmp_path):
    """e0 -> e1 (L=2), e1 -> e2 (L=1); e3 registered but unconnected."""
    cb = ChainBuilder(mock)
    pending = cb.start_block()
    for i in range(4):
        assert cb.try_add(pending, cb.entity(i))
    cb.seal(pending)
    pending = cb.start_block()
    a = cb.accounts
    assert cb.try_add(pending, cb.tx(a[0], Confirmation(a[1].public_key, 2)))
    assert cb.try_add(pending, cb.tx(a[1], Confirmation(a[2].public_key, 1)))
    cb.seal(pending)
    path = tmp_path / "trust.chain"
    path.write_bytes(cb.encode())
    return cb, path


class TestRun:
    def test_writes_report_and_csv(self, cli, tmp_path):
        out = tmp_path / "r.json"
        res = cli.invoke(main, ["run", "--scenario", HAPPY, "--out", str(out)])
        assert res.exit_code == 0, res.stderr
        report = json.loads(out.read_text())
        assert report["auth"]["probability_of_authentication"] == 1.0
        header, row = res.stdout.strip().splitlines()
        assert "probability_of_authentication" in header.split(",")

    def test_matches_library(self, cli, tmp_path):
        out = tmp_path / "r.json"
        assert cli.invoke(main, ["run", "--scenario", HAPPY, "--out", str(out), "--seed", "5"]).exit_code == 0
        lib = run_scenario(load_scenario(HAPPY, seed=5)).to_dict()
        assert diff_reports(json.loads(out.read_text()), lib) == []

    def test_trace_written(self, cli, tmp_path):
        trace = tmp_path / "t.jsonl"
        res = cli.invoke(main, ["run", "--scenario", HAPPY, "--out", str(tmp_path / "r.json"), "--trace", str(trace)])
        assert res.exit_code == 0
        lines = trace.read_text().splitlines()
        assert lines and all("event" in json.loads(line) for line in lines)

    def test_provider_env_override(self, cli, tmp_path):
        out = tmp_path / "r.json"
        res = cli.invoke(main, ["run", "--scenario", HAPPY, "--out", str(out)], env={"DRONECHAIN_PROVIDER": "mock"})
        assert res.exit_code == 0
        assert json.loads(out.read_text())["extra"]["provider"] == "mock"

    def test_schema_error_exit_2(self, cli, tmp_path):
        doc = json.loads((SCENARIOS / "happy_path.json").read_text())
        doc["topology"]["links"][0]["loss"] = 2
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        res = cli.invoke(main, ["run", "--scenario", str(bad), "--out", str(tmp_path / "r.json")])
        assert res.exit_code == 2
        assert "topology/links/0/loss" in res.stderr

    def test_missing_file_exit_3(self, cli, tmp_path):
        res = cli.invoke(main, ["run", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r.json")])
        assert res.exit_code == 3

    def test_unknown_flag_rejected(self, cli, tmp_path):
        res = cli.invoke(main, ["run", "--scenario", HAPPY, "--out", str(tmp_path / "r"), "--chain-dir", "x"])
        assert res.exit_code not in (0,)


class TestInspect:
    def test_tip_and_height(self, cli, mock, tmp_path):
        cb = build_random_chain(mock, 4, 3, seed=1)
        path = tmp_path / "c.chain"
        path.write_bytes(cb.encode())
        res = cli.invoke(main, ["inspect", "--chain", str(path)])
        assert res.exit_code == 0
        fields = dict(line.split(": ", 1) for line in res.stdout.splitlines())
        assert int(fields["height"]) == 4
        assert fields["state_digest"] == cb.states[-1].digest(mock).hex()
        res = cli.invoke(main, ["inspect", "--chain", str(path), "--height", "2"])
        fields = dict(line.split(": ", 1) for line in res.stdout.splitlines())
        assert fields == {k: str(v) for k, v in describe_block(audit_chain(cb.encode()), 2).items()}

    def test_height_out_of_range_exit_3(self, cli, mock, tmp_path):
        path = tmp_path / "c.chain"
        path.write_bytes(build_random_chain(mock, 2, 2).encode())
        assert cli.invoke(main, ["inspect", "--chain", str(path), "--height", "9"]).exit_code == 3
        assert cli.invoke(main, ["inspect", "--chain", str(tmp_path / "missing")]).exit_code == 3

    def test_tampered_exit_4_names_height(self, cli, mock, tmp_path):
        cb = build_random_chain(mock, 3, 2, seed=2)
        data = bytearray(cb.encode())
        data[-10] ^= 0x01
        path = tmp_path / "c.chain"
        path.write_bytes(bytes(data))
        res = cli.invoke(main, ["inspect", "--chain", str(path)])
        assert res.exit_code == 4
        assert "first bad height 3" in res.stderr

    def test_full_node_persisted_chain_inspects(self, cli, mock, tmp_path):
        from helpers import Cluster

        c = Cluster(mock, n_full=3)
        c.run_rounds(3)
        path = tmp_path / "node.chain"
        path.write_bytes(bytes(c.full[0].persisted))
        res = cli.invoke(main, ["inspect", "--chain", str(path)])
        assert res.exit_code == 0
        assert f"state_digest: {c.full[0].state_digest().hex()}" in res.stdout


class TestGraph:
    def test_full_graph_dot_and_json(self, cli, trust_chain):
        cb, path = trust_chain
        res = cli.invoke(main, ["graph", "--chain", str(path)])
        assert res.exit_code == 0
        assert res.stdout.count("->") == 2
        res = cli.invoke(main, ["graph", "--chain", str(path), "--format", "json"])
        data = json.loads(res.stdout)
        assert len(data["nodes"]) == 4
        assert {(e["from"], e["to"], e["max_path_len"]) for e in data["edges"]} == {
            (cb.accounts[0].public_key.hex(), cb.accounts[1].public_key.hex(), 2),
            (cb.accounts[1].public_key.hex(), cb.accounts[2].public_key.hex(), 1),
        }

    def test_three_entity_dot_matches_golden(self, cli, tmp_path):
        from test_trust_graph import three_entity_graph

        path = tmp_path / "three.chain"
        path.write_bytes(three_entity_graph().encode())
        res = cli.invoke(main, ["graph", "--chain", str(path), "--format", "dot"])
        assert res.exit_code == 0
        assert res.stdout == (GOLDEN / "three_entities.dot").read_text()

    def test_anchor_subgraph(self, cli, trust_chain):
        cb, path = trust_chain
        a = [kp.public_key.hex() for kp in cb.accounts]
        data = json.loads(cli.invoke(main, ["graph", "--chain", str(path), "--format", "json", "--anchors", a[1]]).stdout)
        assert [n["account"] for n in data["nodes"]] == sorted([a[1], a[2]])
        data = json.loads(cli.invoke(main, ["graph", "--chain", str(path), "--format", "json", "--anchors", a[3]]).stdout)
        assert [n["account"] for n in data["nodes"]] == [a[3]] and data["edges"] == []
        both = f"{a[0]}, {a[3]}"
        data = json.loads(cli.invoke(main, ["graph", "--chain", str(path), "--format", "json", "--anchors", both]).stdout)
        assert len(data["nodes"]) == 4 and len(data["edges"]) == 2

    def test_bad_anchors_exit_3(self, cli, trust_chain):
        _, path = trust_chain
        assert cli.invoke(main, ["graph", "--chain", str(path), "--anchors", "ab" * 32]).exit_code == 3
        assert cli.invoke(main, ["graph", "--chain", str(path), "--anchors", "zz"]).exit_code == 3

    def test_empty_chain(self, cli, mock, tmp_path):
        path = tmp_path / "g.chain"
        path.write_bytes(ChainBuilder(mock).encode())
        data = json.loads(cli.invoke(main, ["graph", "--chain", str(path), "--format", "json"]).stdout)
        assert data == {"nodes": [], "edges": []}


class TestReportDiff:
    def test_identical_and_different(self, cli, tmp_path):
        a, b, c = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
        for out, seed in ((a, "1"), (b, "1"), (c, "2")):
            cli.invoke(main, ["run", "--scenario", str(SCENARIOS / "lossy_fleet.json"), "--out", str(out), "--seed", seed])
        assert cli.invoke(main, ["report-diff", str(a), str(b)]).exit_code == 0
        res = cli.invoke(main, ["report-diff", str(a), str(c)])
        assert res.exit_code == 1 and "differs: seed" in res.stdout

    def test_unreadable_report_exit_3(self, cli, tmp_path):
        bad = tmp_path / "x.json"
        bad.write_text("not json")
        assert cli.invoke(main, ["report-diff", str(bad), str(bad)]).exit_code == 3

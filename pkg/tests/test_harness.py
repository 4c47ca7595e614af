import csv
import json
from dataclasses import replace

import pytest

from rowguard import harness
from rowguard.addrmap import MappingScheme
from rowguard.cli import main, parse_duration
from rowguard.controller import MemoryController
from rowguard.dram import DeviceGeometry, TimingParams
from rowguard.errors import AddressRangeError, ConfigError
from rowguard.harness import EXIT_ERROR, EXIT_OK, EXIT_VIOLATION, RunConfig, run
from rowguard.baselines import Hydra, hydra_config
from rowguard.workloads import MemRequest


def test_empty_trace():
    r = run(RunConfig(mitigation="abacus"))
    s = r.stats
    assert (s.requests_in, s.total_acts, s.preventive_refreshes) == (0, 0, 0)
    assert r.exit_status == EXIT_OK


def test_accounting_closes():
    r = run(RunConfig(mitigation="hydra", nrh=125, gen="rh-attack:length=5000"))
    s = r.stats
    assert s.requests_in == s.requests_completed + s.requests_in_flight == 5000
    assert sum(s.total_acts_by_cause.values()) == s.total_acts == s.command_counts["ACT"]
    assert s.oracle["timing_errors"] == 0 and s.oracle["violations"] == 0


def test_until_leaves_requests_in_flight():
    r = run(RunConfig(gen="ms:length=5000", until=2_000_000))
    s = r.stats
    assert s.requests_in == s.requests_completed + s.requests_in_flight
    assert s.requests_in_flight > 0


def test_unmitigated_attack_is_flagged():
    r = run(RunConfig(mitigation="none", nrh=125, gen="ms:length=20000"))
    assert r.violations and r.exit_status == EXIT_VIOLATION
    v = r.violations[0]
    assert v.count == 125 and abs(v.aggressor - v.victim) == 1


def test_non_recursive_para_misses_refresh_hammering():
    base = RunConfig(mitigation="para", nrh=125, gen="ds:length=20000", seed=1)
    assert run(base).stats.oracle["violations"] == 0
    assert run(replace(base, para_recursive=False)).stats.oracle["violations"] > 0


def test_directional_costs():
    n = 125
    gen = "roundrobin:length=40000"
    ab = run(RunConfig(mitigation="abacus", nrh=n, gen=gen)).stats
    pa = run(RunConfig(mitigation="para", nrh=n, gen=gen)).stats
    gr = run(RunConfig(mitigation="graphene", nrh=n, gen=gen)).stats
    hy = run(RunConfig(mitigation="hydra", nrh=n, gen=gen)).stats
    assert pa.preventive_refreshes > ab.preventive_bursts * 64
    assert hy.mitigation_traffic_cmds > 0
    assert ab.mitigation_traffic_cmds == gr.mitigation_traffic_cmds == 0


def test_rega_slows_down_activations():
    gen = "ds:length=4000"
    a = run(RunConfig(mitigation="none", gen=gen)).stats
    b = run(RunConfig(mitigation="rega", nrh=125, gen=gen)).stats
    assert b.demand_latency["mean_ns"] > 2 * a.demand_latency["mean_ns"]
    assert not b.oracle["applicable"]


def test_reserved_rows_rejected():
    g = DeviceGeometry()
    m = MappingScheme("MOP_1CL", g)
    h = Hydra(hydra_config(1000), g)
    ctl = MemoryController(g, TimingParams(), m, h)
    with pytest.raises(AddressRangeError):
        ctl.run([MemRequest(0, "R", m.encode_flat(0, g.rows_per_bank - 1, 0))])


def test_config_validation():
    for bad in (RunConfig(mitigation="x"), RunConfig(nrh=2), RunConfig(oracle="sampled:0"),
                RunConfig(mitigation="rega", blast_radius=2), RunConfig(gen="ds", trace="t")):
        with pytest.raises(ConfigError):
            bad.validate()


def test_json_and_csv_agree(tmp_path):
    s = run(RunConfig(mitigation="abacus", gen="ds:length=3000")).stats
    harness.emit_report(s, tmp_path / "r.json")
    harness.emit_report(s, tmp_path / "r.csv")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["schema_version"] == 1 and doc["fields"] == harness.FIELD_NAMES
    j = doc["runs"][0]
    with open(tmp_path / "r.csv") as f:
        row = next(csv.DictReader(f))
    assert int(row["total_acts"]) == j["total_acts"]
    assert float(row["oracle.max_exposure"]) == j["oracle"]["max_exposure"]
    assert float(row["demand_latency.mean_ns"]) == pytest.approx(j["demand_latency"]["mean_ns"])


def test_matrix_cells_and_duplicates():
    cfgs = [RunConfig(mitigation=m, nrh=n, gen=g, seed=0)
            for g in ("ds:length=500", "roundrobin:length=500", "gups:length=500")
            for m in ("none", "abacus", "graphene", "hydra", "para")
            for n in (1000, 500, 250, 125)]
    rep = harness.run_matrix(cfgs, workers=2)
    assert len(rep.cells) == 60 and rep.exit_status == EXIT_OK
    with pytest.raises(ConfigError):
        harness.run_matrix(cfgs[:1] * 2)


def test_matrix_reports_cell_failure():
    cfgs = [RunConfig(mitigation="abacus", gen="ds:length=100"),
            RunConfig(mitigation="abacus", gen="nope")]
    rep = harness.run_matrix(cfgs)
    assert isinstance(rep.cells[("nope", "abacus", 1000)], str)
    assert rep.exit_status == EXIT_ERROR


def test_parse_duration():
    assert parse_duration("640us") == 640_000_000
    assert parse_duration("45") == 45_000
    assert parse_duration("6.4ms") == 6_400_000_000


def test_cli_run_and_exit_codes(tmp_path, capsys):
    rep = tmp_path / "r.json"
    assert main(["run", "--mitigation", "abacus", "--nrh", "125", "--gen", "ms:length=4000",
                 "--report", str(rep)]) == EXIT_OK
    assert json.loads(rep.read_text())["runs"][0]["nrh"] == 125
    assert main(["run", "--mitigation", "none", "--nrh", "125", "--gen",
                 "ms:length=20000"]) == EXIT_VIOLATION
    assert main(["run", "--gen", "bogus"]) == EXIT_ERROR
    assert main(["run", "--trace", str(tmp_path / "missing.trace")]) == EXIT_ERROR


def test_cli_gen_then_replay(tmp_path, capsys):
    out = tmp_path / "ds.trace"
    assert main(["gen", "--gen", "ds:length=1000", "-o", str(out)]) == 0
    assert main(["run", "--trace", str(out), "--mitigation", "graphene"]) == 0
    printed = capsys.readouterr().out
    assert '"requests_in": 1000' in printed


def test_cli_analyze_and_matrix(tmp_path, capsys):
    assert main(["analyze", "--gen", "roundrobin:length=6400"]) == 0
    assert '"mean_siblings_before_repeat": 31' in capsys.readouterr().out
    r = tmp_path / "m.csv"
    assert main(["matrix", "--gens", "ds:length=300", "--gens", "gups:length=300",
                 "--mitigations", "abacus,para", "--nrh", "1000,125", "--report", str(r)]) == 0
    with open(r) as f:
        assert len(list(csv.DictReader(f))) == 8


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "dev.cfg"
    cfg.write_text("rows_per_bank = 4096\ntRC = 50\n")
    assert main(["run", "--config", str(cfg), "--gen", "ds:length=200"]) == 0
    cfg.write_text("bogus = 1\n")
    assert main(["run", "--config", str(cfg), "--gen", "ds:length=200"]) == EXIT_ERROR

"""Scenario runner, HTTP surface, and the thin-client CLI."""

import json
import warnings

import pytest
from click.testing import CliRunner

import rbsdelab as rl
from rbsdelab.cli import main as cli_main
from rbsdelab.rbsde import quadruple_to_csv
from rbsdelab.barriers import barrier_to_csv
from rbsdelab.scenarios import (
    EXIT_CONFIG,
    EXIT_PASS,
    EXIT_RESOURCE,
    builtin_scenarios,
    list_scenarios,
    run_scenario,
    run_scenario_config,
)

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from starlette.testclient import TestClient

from rbsdelab.service import app

REQUIRED_NAMES = {
    "american-put",
    "spike-demo",
    "monotone-approx",
    "penalization-convergence",
    "s4-continuity",
    "bellman-scaling",
    "pengxu-check",
    "right-shift",
    "mc-vs-lattice",
}


def test_registry_contains_required_scenarios():
    names = [s["name"] for s in list_scenarios()]
    assert REQUIRED_NAMES <= set(names)
    assert names == list(builtin_scenarios())  # registry insertion order
    assert all(s["description"] for s in list_scenarios())


def test_registry_order_stable():
    assert [s["name"] for s in list_scenarios()] == [
        s["name"] for s in list_scenarios()
    ]


def test_list_scenarios_tracks_registry(monkeypatch):
    import rbsdelab.scenarios as sc

    monkeypatch.setattr(sc, "builtin_scenarios", lambda: {})
    assert sc.list_scenarios() == []
    monkeypatch.setattr(
        sc, "builtin_scenarios", lambda: {"only": {"description": "single entry"}}
    )
    assert sc.list_scenarios() == [{"name": "only", "description": "single entry"}]


def test_unknown_scenario_is_config_error():
    result = run_scenario("does-not-exist")
    assert result.exit_code == EXIT_CONFIG
    assert not result.passed


def test_malformed_config_exits_two():
    result = run_scenario_config({"name": "broken"})
    assert result.exit_code == EXIT_CONFIG
    result = run_scenario_config({"name": "broken", "kind": "routes"})
    assert result.exit_code == EXIT_CONFIG  # missing model/driver/barrier
    result = run_scenario_config(
        {
            "name": "broken",
            "kind": "routes",
            "model": {"N": 2},
            "driver": {"type": "zero"},
            "barrier": {"type": "constant", "value": 0.0},
            "routes": ["bruteforce"],
            "tolerances": {},  # missing mandatory tolerance
        }
    )
    assert result.exit_code == EXIT_CONFIG


def test_budget_exhaustion_exits_three():
    cfg = dict(builtin_scenarios()["oracle-equivalence"])
    cfg["budget"] = 1
    result = run_scenario_config(cfg)
    assert result.exit_code == EXIT_RESOURCE


def test_spike_demo_runs_and_emits_artifacts():
    result = run_scenario("spike-demo")
    assert result.exit_code == EXIT_PASS
    names = [n for n, _ in result.artifacts]
    assert "summary.json" in names and "quadruple.csv" in names
    summary = json.loads(dict(result.artifacts)["summary.json"])
    assert summary["passFlags"]["skorokhod"] is True
    assert summary["rightJumpSites"] == [[0, 0]]


def test_byte_identical_reruns():
    first = run_scenario("barrier-comparison")
    second = run_scenario("barrier-comparison")
    assert first.exit_code == second.exit_code == EXIT_PASS
    assert dict(first.artifacts) == dict(second.artifacts)


def test_american_put_scenario_value():
    result = run_scenario("american-put")
    assert result.exit_code == EXIT_PASS
    assert result.summary["routeValues"]["direct"] == 11.0


def test_oracle_scenario_emits_rule_reports():
    result = run_scenario("oracle-equivalence")
    reports = json.loads(dict(result.artifacts)["oracle_reports.json"])
    assert len(reports) >= 20
    for report in reports:
        assert {"instanceHash", "ruleCount", "dpValue", "bruteForceValue",
                "maxGap", "argmaxRule"} <= set(report)
        assert report["maxGap"] <= 1e-10


def test_run_all_matches_individual_runs():
    from rbsdelab.scenarios import run_all_scenarios

    serial = run_all_scenarios(["spike-demo", "reflection-identities"])
    parallel = run_all_scenarios(["spike-demo", "reflection-identities"], parallel=True)
    for a, b in zip(serial, parallel):
        assert a.name == b.name and a.exit_code == b.exit_code
        assert dict(a.artifacts) == dict(b.artifacts)


# --- HTTP surface ----------------------------------------------------------


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def test_health_endpoint(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"


def test_scenarios_endpoint(client):
    body = client.get("/scenarios").json()
    assert REQUIRED_NAMES <= {s["name"] for s in body["scenarios"]}


def test_run_endpoint_by_name(client):
    body = client.post("/scenarios/run", json={"name": "spike-demo"}).json()
    assert body["exit_code"] == 0 and body["passed"]
    assert any(a["name"] == "summary.json" for a in body["artifacts"])


def test_run_endpoint_inline_config(client):
    cfg = builtin_scenarios()["reflection-identities"]
    body = client.post(
        "/scenarios/run", json={"config": cfg, "include_artifacts": False}
    ).json()
    assert body["exit_code"] == 0
    assert body["artifacts"] == []


def test_run_endpoint_requires_exactly_one_source(client):
    assert client.post("/scenarios/run", json={}).status_code == 400
    assert (
        client.post(
            "/scenarios/run", json={"name": "spike-demo", "config": {}}
        ).status_code
        == 400
    )


def test_dump_endpoint(client):
    body = client.post(
        "/model/dump", json={"model": {"T": 1.0, "N": 2, "marks": [{"intensity": 0.2}]}}
    ).json()
    assert body["levels"] == 3
    assert body["csv"].startswith("level,nodeId,parentId")
    assert body["diagnostics_passed"]


def test_dump_endpoint_rejects_bad_model(client):
    response = client.post("/model/dump", json={"model": {"N": 0}})
    assert response.status_code == 400


def test_verify_endpoint(client):
    model = rl.build_lattice(rl.TimeGrid(1.0, 2))
    bar = rl.american_put_barrier(model, 100, 100, 1.2, 0.8)
    quad = rl.solve_reflected(model, rl.zero_driver(), bar)
    body = client.post(
        "/verify",
        json={
            "quadruple_csv": quadruple_to_csv(model, quad),
            "barrier_csv": barrier_to_csv(bar),
        },
    ).json()
    assert body["passed"]
    response = client.post(
        "/verify", json={"quadruple_csv": "garbage", "barrier_csv": "junk"}
    )
    assert response.status_code == 400


# --- CLI -------------------------------------------------------------------


def test_cli_list():
    result = CliRunner().invoke(cli_main, ["list"])
    assert result.exit_code == 0
    assert "american-put" in result.output


def test_cli_run_builtin(tmp_path):
    runner = CliRunner()
    result = runner.invoke(cli_main, ["run", "spike-demo", "--out", str(tmp_path)])
    assert result.exit_code == 0
    assert (tmp_path / "summary.json").exists()
    assert (tmp_path / "quadruple.csv").exists()


def test_cli_run_config_file(tmp_path):
    cfg = builtin_scenarios()["reflection-identities"]
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    result = CliRunner().invoke(cli_main, ["run", str(path), "--out", str(tmp_path / "out")])
    assert result.exit_code == 0


def test_cli_run_bad_json_exits_two(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    out_dir = tmp_path / "out"
    result = CliRunner().invoke(
        cli_main, ["run", str(path), "--out", str(out_dir)]
    )
    assert result.exit_code == 2
    assert not out_dir.exists()  # config faults leave no outputs behind


def test_cli_run_unknown_name_exits_two(tmp_path):
    result = CliRunner().invoke(cli_main, ["run", "no-such", "--out", str(tmp_path)])
    assert result.exit_code == 2


def test_cli_dump_and_verify(tmp_path):
    runner = CliRunner()
    model_cfg = tmp_path / "model.json"
    model_cfg.write_text(json.dumps({"T": 1.0, "N": 2}), encoding="utf-8")
    out_csv = tmp_path / "model.csv"
    result = runner.invoke(
        cli_main, ["dump-model", str(model_cfg), "--out", str(out_csv)]
    )
    assert result.exit_code == 0
    assert out_csv.read_text(encoding="utf-8").startswith("level,nodeId")

    model = rl.build_lattice(rl.TimeGrid(1.0, 2))
    bar = rl.american_put_barrier(model, 100, 100, 1.2, 0.8)
    quad = rl.solve_reflected(model, rl.zero_driver(), bar)
    qpath = tmp_path / "quad.csv"
    bpath = tmp_path / "bar.csv"
    qpath.write_text(quadruple_to_csv(model, quad), encoding="utf-8")
    bpath.write_text(barrier_to_csv(bar), encoding="utf-8")
    result = runner.invoke(cli_main, ["verify", str(qpath), str(bpath)])
    assert result.exit_code == 0
    assert "PASS" in result.output

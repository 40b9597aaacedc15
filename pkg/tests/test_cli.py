import json

import numpy as np
import pytest

from gridfreq import cli
from gridfreq.model import load_scenario, save_scenario, scenario_to_dict, toy_grid


def test_simulate_toy_converges(tmp_path, capsys):
    out = tmp_path / "run"
    code = cli.main(["simulate", "toy", "--out", str(out), "--horizon", "150"])
    assert code == 0
    assert (tmp_path / "run.csv").exists()
    summary = json.loads((tmp_path / "run.summary.json").read_text())
    assert summary["converged"] is True
    assert summary["steady_cost_paper"] == pytest.approx(23.278, abs=0.05)
    assert summary["t_star"] is not None


def test_simulate_too_short_horizon_exits_2(tmp_path):
    out = tmp_path / "run"
    code = cli.main(["simulate", "toy", "--out", str(out), "--horizon", "0.001"])
    assert code == 2


def test_simulate_missing_file_exits_1(tmp_path, capsys):
    code = cli.main(["simulate", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "x")])
    assert code == 1
    assert "not found" in capsys.readouterr().err


def test_malformed_scenario_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nodes": [{"inertia": 1.0}]}')
    code = cli.main(["simulate", str(bad), "--out", str(tmp_path / "x")])
    assert code == 1
    assert "missing required key" in capsys.readouterr().err


def test_invalid_scenario_reports_violations(tmp_path, capsys):
    doc = scenario_to_dict(toy_grid())
    doc["nodes"][2]["inertia"] = 0.0
    path = tmp_path / "invalid.json"
    path.write_text(json.dumps(doc))
    code = cli.main(["simulate", str(path), "--out", str(tmp_path / "x")])
    assert code == 1
    assert "node 3" in capsys.readouterr().err


def test_simulate_unwritable_output_exits_1(tmp_path, capsys):
    code = cli.main(["simulate", "toy", "--horizon", "0.5",
                     "--out", str(tmp_path / "missing_dir" / "run")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_simulate_diverging_run_exits_1(tmp_path, capsys):
    # a step size far past the stability limit drives the state non-finite
    code = cli.main(["simulate", "toy", "--dt", "0.05", "--horizon", "20",
                     "--out", str(tmp_path / "run")])
    assert code == 1
    assert "non-finite" in capsys.readouterr().err


def test_scenario_roundtrip_through_files(tmp_path):
    scn = toy_grid()
    path = tmp_path / "toy.json"
    save_scenario(scn, path)
    again = load_scenario(path)
    assert scenario_to_dict(again) == scenario_to_dict(scn)


def test_emit_scenario_normalizes(tmp_path):
    out = tmp_path / "run"
    emitted = tmp_path / "normalized.json"
    code = cli.main(["simulate", "toy", "--out", str(out), "--horizon", "0.5",
                     "--scheme", "CONSENSUS", "--emit-scenario", str(emitted)])
    assert code in (0, 2)
    again = load_scenario(emitted)
    assert again.horizon == 0.5


def test_optimal_command(tmp_path):
    out = tmp_path / "dispatch.json"
    code = cli.main(["optimal", "toy", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["cost_paper"] == pytest.approx(23.278, abs=0.01)
    weighted = np.array(doc["u_star"]) * toy_grid().grid.cost()
    assert np.allclose(weighted, doc["lambda"])


def test_stability_command_consensus(tmp_path):
    out = tmp_path / "stab.json"
    code = cli.main(["stability", "toy", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["structural_zero_count"] >= 1
    assert doc["spectral_abscissa_excl_zeros"] < 0
    assert len(doc["eigenvalues"]) == doc["state_dim"]
    assert all(len(z) == 2 for z in doc["eigenvalues"])


def test_stability_command_two_node(tmp_path):
    scn_path = tmp_path / "pair.json"
    doc = {
        "nodes": [
            {"id": 1, "inertia": 0.05, "droop": 0.8, "cost": 0.1, "p": 1.0},
            {"id": 2, "inertia": 0.1, "droop": 1.2, "cost": 0.2, "p": -1.0},
        ],
        "lines": [{"i": 1, "j": 2, "b": 1.0}],
        "comm_links": [[1, 2]],
        "scheme": "PAIR_FLOW",
        "horizon": 10.0, "dt": 0.001, "record_stride": 10,
    }
    scn_path.write_text(json.dumps(doc))
    out = tmp_path / "stab.json"
    code = cli.main(["stability", str(scn_path), "--out", str(out), "--samples", "6"])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["sufficient"] is not None
    assert rep["identity"]["consistent"] is True
    assert rep["identity"]["max_residual"] <= 1e-8


def test_stability_command_multi_failure(tmp_path):
    scn = toy_grid()
    doc = scenario_to_dict(scn)
    doc["scheme"] = "MULTI_FAILURE"
    doc["comm_failures"] = [{"link": [1, 2], "time": 0.5},
                            {"link": [2, 5], "time": 0.5}]
    path = tmp_path / "multi.json"
    path.write_text(json.dumps(doc))
    out = tmp_path / "stab.json"
    assert cli.main(["stability", str(path), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    # omega + flows + u + one artificial variable per node in F
    assert rep["state_dim"] == 10 + 10 + 10 + 3
    assert rep["spectral_abscissa_excl_zeros"] < 0


def test_repro_writes_csv(tmp_path, monkeypatch):
    rows = [{"experiment": "fake", "scheme": "CONSENSUS",
             "steady_cost_paper": 1.0, "t_star": 2.0,
             "reference_cost": 1.0, "status": "target"}]
    monkeypatch.setitem(cli.experiments.EXPERIMENTS, "failure_costs", lambda: rows)
    out = tmp_path / "table.csv"
    code = cli.main(["repro", "failure_costs", "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "experiment,scheme,steady_cost_paper,t_star,reference_cost,status"
    assert lines[1].startswith("fake,CONSENSUS,1.0,2.0,")

import json
import os

import numpy as np
import pytest

from wmlab import cli, scenario

from conftest import SCENARIO_PATH


# -- scenario loading ---------------------------------------------------------


def test_load_benchmark_scenario():
    scen = scenario.load_scenario(SCENARIO_PATH)
    assert scen.name == "siso_benchmark"
    assert scen.horizon == 300
    assert scen.theta_r == 1.0
    assert scen.sample_period == 0.1
    assert scen.embed_replica is True
    assert scen.plant.n == 2 and scen.plant.m == 1 and scen.plant.p == 1
    assert scen.design.epsilon == 1e-5 and scen.design.max_iters == 100
    assert scen.design.input_free == ("A",)
    assert scen.attack.kind == "Covert"
    # 5 + 5 sin(k), sampled at the horizon length
    np.testing.assert_allclose(
        scen.attack.phi_u[:, 0], 5.0 + 5.0 * np.sin(np.arange(301.0)), atol=1e-15)


def test_missing_file_reports_cleanly(tmp_path):
    with pytest.raises(scenario.ScenarioParseError, match="cannot read"):
        scenario.load_scenario(str(tmp_path / "nope.json"))


def test_malformed_json_reports_position(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "plant": [,]\n}\n')
    with pytest.raises(scenario.ScenarioParseError, match="line 2"):
        scenario.load_scenario(str(bad))


def _doc(**overrides):
    base = {
        "plant": {"A": [[0.9191, 0.3277], [-0.0768, 0.4269]], "B": [[0.0], [1.0]],
                  "C_meas": [[1.0, 0.0]], "C_perf": [[2.0, 0.0]]},
        "controller": {"K": [[-0.3405, -0.3987]], "L": [[0.5956], [-0.0253]]},
        "watermark": {
            "input": {"A": [[0.5201]], "B": [[1.0]], "C": [[1.0]], "D": [[1.0]],
                      "free": ["A"]},
            "output": {"A": [[0.6714]], "B": [[1.0]], "C": [[1.0]], "D": [[1.0]],
                       "free": ["A"]},
        },
        "horizon": 40,
        "attack": {"kind": "Covert", "phi_u": {"kind": "impulse"}},
    }
    base.update(overrides)
    return base


def test_missing_section_rejected():
    doc = _doc()
    del doc["controller"]
    with pytest.raises(scenario.ScenarioParseError, match="controller"):
        scenario.scenario_from_dict(doc)


def test_bad_free_mask_rejected():
    doc = _doc()
    doc["watermark"]["input"]["free"] = ["A", "D"]
    with pytest.raises(scenario.ScenarioParseError, match="'A' and 'B'"):
        scenario.scenario_from_dict(doc)


def test_unstable_filter_rejected():
    doc = _doc()
    doc["watermark"]["output"]["A"] = [[1.3]]
    with pytest.raises(scenario.ScenarioParseError, match="spectral radius"):
        scenario.scenario_from_dict(doc)


@pytest.mark.parametrize("key,value,msg", [
    ("horizon", 0, "horizon"),
    ("theta_r", -1.0, "theta_r"),
    ("sample_period", 0.0, "sample_period"),
    ("grid_points", 1, "grid_points"),
])
def test_run_settings_validated(key, value, msg):
    with pytest.raises(scenario.ScenarioParseError, match=msg):
        scenario.scenario_from_dict(_doc(**{key: value}))


def test_unknown_signal_kind_rejected():
    doc = _doc(attack={"kind": "Covert", "phi_u": {"kind": "brownian"}})
    with pytest.raises(scenario.ScenarioParseError, match="brownian"):
        scenario.scenario_from_dict(doc)


# -- attack signal materialization --------------------------------------------


def test_sequence_signal_from_plain_list():
    scen = scenario.scenario_from_dict(
        _doc(attack={"kind": "Covert", "phi_u": [1.0, 2.0, 3.0]}))
    np.testing.assert_array_equal(scen.attack.phi_u[:3, 0], [1.0, 2.0, 3.0])


def test_impulse_signal_placement():
    scen = scenario.scenario_from_dict(
        _doc(attack={"kind": "Covert",
                     "phi_u": {"kind": "impulse", "at": 3, "magnitude": 2.5}}))
    expected = np.zeros(41)
    expected[3] = 2.5
    np.testing.assert_array_equal(scen.attack.phi_u[:, 0], expected)


def test_impulse_outside_horizon_rejected():
    with pytest.raises(scenario.ScenarioParseError, match="outside"):
        scenario.scenario_from_dict(
            _doc(attack={"kind": "Covert", "phi_u": {"kind": "impulse", "at": 99}}))


def test_csv_signal_resolved_relative_to_scenario(tmp_path):
    (tmp_path / "attack.csv").write_text(
        "k, phi_u_1\n0, 0.5\n1, -0.25\n2, 4.0\n")
    doc = _doc(attack={"kind": "Covert",
                       "phi_u": {"kind": "csv", "path": "attack.csv"}})
    scen_file = tmp_path / "scen.json"
    scen_file.write_text(json.dumps(doc))
    scen = scenario.load_scenario(str(scen_file))
    np.testing.assert_array_equal(scen.attack.phi_u[:, 0], [0.5, -0.25, 4.0])


def test_onset_and_base_forwarded():
    scen = scenario.scenario_from_dict(
        _doc(attack={"kind": "Covert", "phi_u": [1.0, 1.0], "onset": 5,
                     "base": 0.5}))
    assert scen.attack.K_a == 5 and scen.attack.b == 0.5


# -- command-line pipeline ----------------------------------------------------


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full CLI run on the benchmark scenario, shared by the checks below."""
    out = tmp_path_factory.mktemp("cli_run")
    args = lambda *a: list(a) + ["--scenario", SCENARIO_PATH, "--out", str(out)]
    codes = {
        "inspect": cli.main(args("inspect")),
        "design": cli.main(args("design")),
        "oog_none": cli.main(args("oog", "--variant", "none")),
        "oog_initial": cli.main(args("oog", "--variant", "initial")),
        "oog_optimized": cli.main(args("oog", "--variant", "optimized")),
        "sim_none": cli.main(args("simulate", "--variant", "none")),
        "sim_initial": cli.main(args("simulate", "--variant", "initial")),
        "sim_optimized": cli.main(args("simulate", "--variant", "optimized")),
        "freq_initial": cli.main(args("freqresp", "--variant", "initial",
                                      "--channel", "both")),
    }
    return out, codes


def test_pipeline_exit_codes(pipeline):
    _, codes = pipeline
    expected = {name: cli.EXIT_OK for name in codes}
    expected["oog_none"] = cli.EXIT_INFEASIBLE  # no watermark: gain unbounded
    assert codes == expected


def test_inspect_report_contents(pipeline):
    out, _ = pipeline
    with open(out / "inspect.json", encoding="utf-8") as fh:
        doc = json.load(fh)
    assert doc["name"] == "siso_benchmark"
    assert doc["plant_stable"] and doc["controllable"] and doc["observable"]
    assert doc["measured_channel_zeros"] == []
    assert doc["unstable_zero_limitation"]["applies"] is False
    poles = sorted(z[0] for z in doc["poles"])
    np.testing.assert_allclose(poles, [0.4848568364250245, 0.8611431635749756],
                               atol=1e-9)


def test_design_outputs(pipeline):
    out, _ = pipeline
    with open(out / "design_report.json", encoding="utf-8") as fh:
        doc = json.load(fh)
    assert doc["termination"] == "Converged"
    assert doc["gamma"] == pytest.approx(1629.9492290613205, rel=1e-6)
    assert doc["delay_steps"] == 2
    trace = (out / "gamma_trace.csv").read_text().strip().splitlines()
    assert trace[0] == "iter, gamma"
    assert len(trace) == 1 + doc["iterations"]


def test_oog_verdicts(pipeline):
    out, _ = pipeline
    with open(out / "oog_none.json", encoding="utf-8") as fh:
        none_doc = json.load(fh)
    assert none_doc["status"] == "Unbounded" and none_doc["gamma"] is None
    with open(out / "oog_initial.json", encoding="utf-8") as fh:
        init_doc = json.load(fh)
    assert init_doc["status"] == "Optimal"
    assert init_doc["gamma"] == pytest.approx(1629.949229, rel=1e-4)
    assert init_doc["residual"] <= 1e-6


def test_simulation_energies(pipeline):
    out, _ = pipeline
    with open(out / "energies.json", encoding="utf-8") as fh:
        doc = json.load(fh)
    assert doc["theta_r"] == 1.0
    none_v = doc["variants"]["none"]
    init_v = doc["variants"]["initial"]
    assert none_v["energy_y_r"] <= 1e-12          # covert attack is invisible
    assert none_v["energy_y_J"] >= 1e3            # ...but wrecks performance
    assert none_v["detected"] is False
    assert init_v["energy_y_r"] == pytest.approx(4443.8970632957153, rel=1e-9)
    assert init_v["detected"] is True
    assert doc["ratios"]["y_r_optimized_over_initial"] == pytest.approx(1.0)
    cum = init_v["normalized_cumulative_y_r"]
    assert len(cum) == 301 and cum[-1] == pytest.approx(1.0)
    assert all(b >= a - 1e-15 for a, b in zip(cum, cum[1:]))


def test_sim_csv_shape(pipeline):
    out, _ = pipeline
    lines = (out / "sim_initial.csv").read_text().strip().splitlines()
    assert lines[0] == "k, y_r_1, y_J_1, u_c_1, y_p_1"
    assert len(lines) == 302  # header + k = 0..300


def test_freqresp_files(pipeline):
    out, _ = pipeline
    for name in ("freqresp_residual_initial.csv", "freqresp_performance_initial.csv"):
        lines = (out / name).read_text().strip().splitlines()
        assert lines[0] == "omega_rad_s, sigma_1"
        assert len(lines) == 513  # header + grid points
        first = [float(v) for v in lines[1].split(",")]
        assert first[0] == 0.0 and first[1] >= 0.0


def test_reruns_are_byte_identical(pipeline):
    out, _ = pipeline
    before = {name: (out / name).read_bytes()
              for name in ("design_report.json", "gamma_trace.csv",
                           "sim_initial.csv", "oog_initial.json")}
    argv = ["--scenario", SCENARIO_PATH, "--out", str(out)]
    assert cli.main(["design"] + argv) == cli.EXIT_OK
    assert cli.main(["simulate", "--variant", "initial"] + argv) == cli.EXIT_OK
    assert cli.main(["oog", "--variant", "initial"] + argv) == cli.EXIT_OK
    for name, blob in before.items():
        assert (out / name).read_bytes() == blob, name


def test_optimized_variant_requires_design_report(tmp_path):
    code = cli.main(["simulate", "--variant", "optimized",
                     "--scenario", SCENARIO_PATH, "--out", str(tmp_path)])
    assert code == cli.EXIT_PARSE


def test_cli_rejects_malformed_scenario(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ nope")
    code = cli.main(["inspect", "--scenario", str(bad), "--out", str(tmp_path)])
    assert code == cli.EXIT_PARSE
    assert "line 1" in capsys.readouterr().err

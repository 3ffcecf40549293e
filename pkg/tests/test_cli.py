import copy
import json
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

from percycle.cli import dumps, main, run_command, swept_params
from percycle.config import config_from_dict, config_to_dict, load_config
from percycle.errors import ConfigError
from percycle.model import goldbeter_example


@pytest.fixture(scope="module")
def builtin_doc():
    text = resources.files("percycle").joinpath("data/goldbeter_periodic.json").read_text()
    return json.loads(text)


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return str(path)


def run_cli(*args):
    proc = subprocess.run([sys.executable, "-m", "percycle.cli", *args], capture_output=True, text=True)
    return proc.returncode, proc.stdout


# -- config ---------------------------------------------------------------------

def test_builtin_config_is_example():
    cfg = load_config("builtin")
    assert cfg.params == goldbeter_example()
    assert cfg.run.t_end == 45.0 and cfg.run.history is not None


def test_round_trip(builtin_doc):
    cfg = config_from_dict(builtin_doc)
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert again.params == cfg.params and again == cfg


def test_round_trip_other_kinds(builtin_doc):
    doc = copy.deepcopy(builtin_doc)
    doc["model"]["coefficients"]["V_1"] = {"kind": "fourier", "offset": 7.2, "harmonics": [[0.1, -0.2]]}
    doc["model"]["coefficients"]["K_2"] = {"kind": "table", "samples": [5.0, 5.5, 4.5]}
    cfg = config_from_dict(doc)
    assert config_from_dict(config_to_dict(cfg)).params == cfg.params


@pytest.mark.parametrize("mutate, key", [
    (lambda d: d["model"]["coefficients"]["V_m"].update(value=0.0), "model.coefficients.V_m"),
    (lambda d: d["model"]["coefficients"]["V_S"].update(period=3.0), "model.coefficients.V_S.period"),
    (lambda d: d["model"]["coefficients"]["V_S"].update(colour="red"), "model.coefficients.V_S"),
    (lambda d: d["model"]["coefficients"].pop("k_2"), "model.coefficients"),
    (lambda d: d["model"].update(n=0), "model.n"),
    (lambda d: d["model"].update(tau=7.0), "model"),
    (lambda d: d["numerics"].update(quad_n="many"), "numerics.quad_n"),
    (lambda d: d["numerics"].update(growth="fast"), "numerics.growth"),
    (lambda d: d.update(extra={}), ""),
    (lambda d: d["run"].update(initial_state=[1, 2]), "run.initial_state"),
    (lambda d: d["run"]["history"]["M"].update(offset=0.1), "run.history.M"),
    (lambda d: d["run"].update(sweep={"parameter": "V_x", "values": [1]}), "run.sweep.parameter"),
])
def test_schema_errors_name_the_key(builtin_doc, mutate, key):
    doc = copy.deepcopy(builtin_doc)
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        config_from_dict(doc)
    assert info.value.key == key


def test_parse_error_has_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "model": {\n    "n": 4,,\n  }\n}\n')
    with pytest.raises(ConfigError) as info:
        load_config(str(path))
    assert info.value.line == 3


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.json")


# -- exit codes and outputs -------------------------------------------------------------

def test_certify_builtin_exit_zero():
    code, out = run_cli("certify")
    report = json.loads(out)
    assert code == 0 and report["degree"] == -1
    assert report["certificate"]["faces_passed"] == 10


def test_check_vm1_exit_two(tmp_path, builtin_doc):
    doc = copy.deepcopy(builtin_doc)
    doc["model"]["coefficients"]["V_m"]["value"] = 1.0
    code, out = run_cli("check", "--config", write(tmp_path, doc))
    report = json.loads(out)
    assert code == 2
    h1 = report["hypotheses"]["hypotheses"][0]
    assert h1["name"] == "H1" and h1["status"] == "fail"


def test_certify_vm1_has_no_degree(tmp_path, builtin_doc):
    doc = copy.deepcopy(builtin_doc)
    doc["model"]["coefficients"]["V_m"]["value"] = 1.0
    code, out = run_cli("certify", "--config", write(tmp_path, doc))
    assert code == 2 and '"degree"' not in out


def test_config_error_exit_one(tmp_path, builtin_doc):
    doc = copy.deepcopy(builtin_doc)
    doc["model"]["coefficients"]["V_m"]["value"] = 0.0
    code, out = run_cli("certify", "--config", write(tmp_path, doc))
    err = json.loads(out)["error"]
    assert code == 1 and err["type"] == "config" and err["key"] == "model.coefficients.V_m"


def test_simulate_dde_csv(tmp_path):
    out = tmp_path / "traj.csv"
    code, _ = run_cli("simulate", "--tau", "0.1", "--t-end", "45", "--out", str(out))
    assert code == 0
    raw = out.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "t,M,P0,P1,P2,PN"
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert data.shape[1] == 6 and np.all(np.diff(data[:, 0]) > 0)
    assert data[0, 0] == 0.0 and data[-1, 0] == 45.0
    assert np.all(data[:, 1:] >= -1e-12)


def test_simulate_ode_default_start(tmp_path):
    out = tmp_path / "ode.csv"
    code, _ = run_cli("simulate", "--t-end", "1", "--out", str(out))
    lines = out.read_text().splitlines()
    assert code == 0 and len(lines) == 102
    assert [float(v) for v in lines[1].split(",")] == [0.0, 1.0, 0.12, 0.16, 0.00215, 0.00327]


def test_bad_tau_override():
    code, out = run_cli("simulate", "--tau", "100")
    assert code == 1 and json.loads(out)["error"]["key"] == "model.tau"


def test_reports_are_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["certify", "--out", str(a)]) == 0
    assert main(["certify", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_bounds_command():
    code, out = run_cli("bounds")
    box = json.loads(out)["box"]
    assert code == 0 and box["certified"] is True
    assert all(box["lower"][k] < box["upper"][k] for k in box["lower"])


def test_dump_config_round_trips(tmp_path):
    out = tmp_path / "full.json"
    assert main(["check", "--dump-config", "--out", str(out)]) == 0
    assert load_config(str(out)) == load_config("builtin")


# -- sweep ------------------------------------------------------------------------------

def test_sweep_rows_sorted(tmp_path, builtin_doc):
    doc = copy.deepcopy(builtin_doc)
    doc["run"]["sweep"] = {"parameter": "V_m", "values": [2.0, 1.0, 1.8], "workers": 2}
    out = tmp_path / "sweep.csv"
    code, _ = run_cli("sweep", "--config", write(tmp_path, doc), "--out", str(out))
    lines = out.read_text().splitlines()
    assert lines[0].startswith("V_m.value,status,hypotheses,certified,degree")
    values = [float(ln.split(",")[0]) for ln in lines[1:]]
    assert values == [1.0, 1.8, 2.0]
    assert code == 2  # the V_m = 1 point fails H1
    assert lines[3].split(",")[4] == "-1"


def test_sweep_requires_section():
    with pytest.raises(ConfigError):
        run_command(load_config("builtin"), "sweep")


def test_swept_params_sinusoid_offset():
    p = swept_params(goldbeter_example(), "V_S", "value", 1.1)
    assert p.V_S.offset == 1.1 and p.V_S.amplitude == 0.2
    with pytest.raises(ConfigError):
        swept_params(goldbeter_example(), "V_m", "amplitude", 0.1)


def test_nonfinite_values_serialized():
    text = dumps({"a": float("inf"), "b": float("nan"), "c": np.float64(1.5), "d": np.bool_(True)})
    assert json.loads(text) == {"a": "Infinity", "b": "NaN", "c": 1.5, "d": True}

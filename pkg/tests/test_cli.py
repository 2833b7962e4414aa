import csv
import json
import subprocess
import sys
from importlib import resources

import jsonschema
import numpy as np
import pytest

from statknnad import cli
from statknnad.inference import PValueReport
from statknnad.truncation import IntervalUnion


def schema(name):
    return json.loads((resources.files("statknnad") / "schemas" / f"{name}.schema.json").read_text())


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def data(tmp_path, rng):
    train = rng.normal(size=(60, 3))
    test = np.vstack([np.zeros(3), np.full(3, 6.0)])
    for name, X in (("train", train), ("test", test)):
        with open(tmp_path / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["f1", "f2", "f3"])
            w.writerows(X.tolist())
    return tmp_path


def test_detect_report(capsys, data):
    code, out, err = run_cli(capsys, "detect", "--train", data / "train.csv", "--test", data / "test.csv")
    assert code == 0
    report = json.loads(out)
    jsonschema.validate(report, schema("detect"))
    normal, outlier = report["results"]
    assert normal["verdict"] == "not-a-candidate" and "p_values" not in normal
    assert outlier["screened"] and outlier["verdict"] == "anomaly"
    assert set(outlier["p_values"]) == {"stat", "wopp", "naive", "bonferroni"}


def test_verdict_is_a_threshold_compare():
    rep = PValueReport(1.0, 1.0, IntervalUnion.full(), p_selective=0.02)
    assert cli._verdict(rep, 0.05) == "anomaly"
    assert cli._verdict(rep, 0.01) == "normal"


def test_detect_with_network_and_all_methods(capsys, data):
    code, _, _ = run_cli(capsys, "net-gen", "--input-dim", 3, "--hidden", "8", "--output-dim", 2, "--out", data / "net.json")
    assert code == 0
    jsonschema.validate(json.loads((data / "net.json").read_text()), schema("plnet"))
    code, out, _ = run_cli(
        capsys, "detect", "--train", data / "train.csv", "--test", data / "test.csv",
        "--net", data / "net.json", "--methods", "stat,wopp,naive,bonferroni,opa1,opa2",
    )
    assert code == 0
    report = json.loads(out)
    jsonschema.validate(report, schema("detect"))
    assert report["latent"] is True


def test_net_gen_to_stdout(capsys):
    code, out, _ = run_cli(capsys, "net-gen", "--seed", 4)
    assert code == 0
    jsonschema.validate(json.loads(out), schema("plnet"))


def test_theta(capsys, data):
    code, out, _ = run_cli(capsys, "theta", "--train", data / "train.csv", "--k-candidates", "1,2,5")
    assert code == 0
    report = json.loads(out)
    jsonschema.validate(report, schema("theta"))
    assert report["k"] == [1, 2, 5]


def test_malformed_csv_exits_3(capsys, tmp_path, data):
    bad = tmp_path / "bad.csv"
    bad.write_text("f1,f2,f3\n1,2,x\n")
    code, out, err = run_cli(capsys, "detect", "--train", bad, "--test", data / "test.csv")
    assert code == 3 and out == ""
    jsonschema.validate(json.loads(err), schema("error"))


@pytest.mark.parametrize(
    "extra",
    [["--alpha", "1.5"], ["--methods", "stat,magic"], ["--k-candidates", "3,1"]],
)
def test_config_errors_exit_2(capsys, data, extra):
    code, out, err = run_cli(capsys, "detect", "--train", data / "train.csv", "--test", data / "test.csv", *extra)
    assert code == 2 and out == ""
    assert json.loads(err)["exit_code"] == 2


def test_missing_path_is_a_config_error(capsys, data):
    code, _, err = run_cli(capsys, "detect", "--test", data / "test.csv")
    assert code == 2 and "--train" in json.loads(err)["message"]


def test_numerical_failure_exits_4(capsys, data, monkeypatch):
    from statknnad.exceptions import NumericalError

    def boom(*a, **k):
        raise NumericalError("zero mass")

    monkeypatch.setattr(cli, "analyze", boom)
    code, _, err = run_cli(capsys, "detect", "--train", data / "train.csv", "--test", data / "test.csv")
    assert code == 4 and json.loads(err)["error"] == "NumericalError"


def test_config_file_and_flag_precedence(capsys, data):
    cfg = data / "run.toml"
    cfg.write_text('alpha = 0.2\n[detect]\ntheta-quantile = 0.5\nk = 2\n')
    code, out, _ = run_cli(capsys, "detect", "--config", cfg, "--train", data / "train.csv", "--test", data / "test.csv", "--k", 1)
    report = json.loads(out)
    assert code == 0 and report["alpha"] == 0.2 and report["k"] == 1
    cfg.write_text("bogus = 1\n")
    code, _, _ = run_cli(capsys, "detect", "--config", cfg, "--train", data / "train.csv", "--test", data / "test.csv")
    assert code == 2


def _experiment(capsys, out_dir, *extra):
    return run_cli(capsys, "experiment", "--out-dir", out_dir, "--target-screened", 30, "--trials", 3000, *extra)


def test_experiment_sweep_outputs(capsys, tmp_path):
    code, out, _ = _experiment(capsys, tmp_path / "a", "--sweep", "n=100,200")
    assert code == 0
    results = json.loads((tmp_path / "a" / "results.json").read_text())
    jsonschema.validate(results, schema("experiment"))
    assert json.loads(out) == results
    rows = list(csv.reader(open(tmp_path / "a" / "plot.csv")))
    assert rows[0] == ["x", "stat", "wopp", "naive", "bonferroni"]
    assert [r[0] for r in rows[1:]] == ["100", "200"]
    assert (tmp_path / "a" / "trials_n=200.csv").exists()


def test_experiment_is_deterministic(capsys, tmp_path):
    _experiment(capsys, tmp_path / "a", "--seed", 9)
    _experiment(capsys, tmp_path / "b", "--seed", 9)
    for name in ("results.json", "plot.csv", "trials.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_power_sweep_over_signal(capsys, tmp_path):
    code, _, _ = _experiment(capsys, tmp_path, "--mode", "power", "--sweep", "delta=1,2,5,10")
    assert code == 0
    rows = list(csv.reader(open(tmp_path / "plot.csv")))
    assert [float(r[0]) for r in rows[1:]] == [1.0, 2.0, 5.0, 10.0]
    stat = [float(r[1]) for r in rows[1:]]
    assert stat[-1] >= stat[0]


def test_experiment_config_errors(capsys, tmp_path):
    assert _experiment(capsys, tmp_path, "--sweep", "delta=1,2")[0] == 2
    assert _experiment(capsys, tmp_path, "--sweep", "q=1")[0] == 2
    assert _experiment(capsys, tmp_path, "--mode", "power")[0] == 2


def test_experiment_on_tabular_data(capsys, tmp_path, rng):
    path = tmp_path / "table.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b"])
        w.writerows(rng.normal(size=(300, 2)).tolist())
    code, out, _ = _experiment(capsys, tmp_path / "o", "--data", path, "--n", 50)
    assert code == 0
    jsonschema.validate(json.loads(out), schema("experiment"))


def test_module_entry_point(data):
    proc = subprocess.run(
        [sys.executable, "-m", "statknnad", "theta", "--train", str(data / "train.csv")],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "theta"

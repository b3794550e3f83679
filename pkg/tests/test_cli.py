import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from objpert_pdp.cli import main


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture()
def data(tmp_path):
    p = tmp_path / "d.csv"
    assert main(["gen", "--kind", "logistic", "--n", "300", "--d", "5", "--seed", "1", "--out", str(p)]) == 0
    return p


def test_gen_kinds(tmp_path):
    for kind in ("linear", "logistic"):
        p = tmp_path / f"{kind}.csv"
        assert main(["gen", "--kind", kind, "--n", "40", "--d", "3", "--out", str(p)]) == 0
        r = rows(p)
        assert len(r) == 40 and list(r[0]) == ["f0", "f1", "f2", "label"]
        X = np.array([[float(v[f"f{j}"]) for j in range(3)] for v in r])
        assert np.allclose(np.linalg.norm(X, axis=1), 1, atol=1e-12)


def test_train_lambda_and_determinism(tmp_path, data):
    a, b, c = tmp_path / "a.json", tmp_path / "b.json", tmp_path / "c.json"
    assert main(["train", "--data", str(data), "--eps", "1", "--inflate", "10", "--seed", "2", "--out", str(a)]) == 0
    assert json.loads(a.read_text())["lambda"] == 5.0
    main(["train", "--data", str(data), "--seed", "2", "--out", str(b)])
    main(["train", "--data", str(data), "--seed", "2", "--out", str(c)])
    assert json.loads(b.read_text())["lambda"] == 0.5
    assert b.read_bytes() == c.read_bytes()


def test_report_data_indep_columns(tmp_path, data):
    m, r, out = tmp_path / "m.json", tmp_path / "r.json", tmp_path / "r.csv"
    main(["train", "--data", str(data), "--seed", "3", "--out", str(m)])
    assert main(["report", "--model", str(m), "--data", str(data), "--out", str(r), "--csv", str(out)]) == 0
    table = rows(out)
    assert len(table) == 300
    assert all(float(v["eps2"]) == 0 and float(v["eps3"]) == 0 for v in table)
    # published CSV carries nothing computed from other records
    assert "eps1_true" not in table[0] and "ratio" not in table[0]
    assert not (tmp_path / "r.csv.NOT_PUBLISHABLE").exists()


def test_report_ground_truth_ratio(tmp_path, data):
    rho = 0.05
    m, r, out = tmp_path / "m.json", tmp_path / "r.json", tmp_path / "r.csv"
    split = "0.2,0.7,0.1"
    common = ["--rho", str(rho), "--split", split, "--seed", "4"]
    assert main(["train", "--data", str(data), "--report-mode", "data_dep", "--out", str(m)] + common) == 0
    assert main(
        ["report", "--model", str(m), "--data", str(data), "--mode", "data_dep", "--out", str(r),
         "--csv", str(out), "--with-ground-truth"] + common
    ) == 0
    table = rows(out)
    frac = np.mean([float(v["ratio"]) >= 1 for v in table])
    assert frac >= 1 - 3 * rho
    assert (tmp_path / "r.csv.NOT_PUBLISHABLE").exists()


def test_report_query_points_and_eval(tmp_path, data):
    m, r, out, q = tmp_path / "m.json", tmp_path / "r.json", tmp_path / "r.csv", tmp_path / "q.csv"
    main(["gen", "--n", "5", "--d", "5", "--seed", "9", "--out", str(q)])
    main(["train", "--data", str(data), "--out", str(m)])
    assert main(["report", "--model", str(m), "--data", str(data), "--out", str(r), "--csv", str(out), "--query", str(q)]) == 0
    table = rows(out)
    assert len(table) == 305 and table[-1]["idx"] == "q4"
    ev = tmp_path / "e.csv"
    assert main(["eval", "--report", str(r), "--data", str(q), "--out", str(ev)]) == 0
    got = [float(v["eps1_bar"]) for v in rows(ev)]
    assert np.allclose(got, [float(v["eps1_bar"]) for v in table[-5:]], rtol=1e-12)


def test_report_adaptive_and_uniform(tmp_path, data):
    m, r, out = tmp_path / "m.json", tmp_path / "r.json", tmp_path / "r.csv"
    main(["train", "--data", str(data), "--out", str(m)])
    assert main(
        ["report", "--model", str(m), "--data", str(data), "--mode", "adaptive", "--rho", "0.05",
         "--split", "0.4,0.3,0.2,0.1", "--uniform", "dataset", "--out", str(r), "--csv", str(out)]
    ) == 0
    rep = json.loads(r.read_text())
    assert rep["pad"] == {"scope": "dataset", "size": 300}
    assert any(float(v["eps4"]) > 0 for v in rows(out))


def test_lambda_too_small_exit_code(tmp_path, data):
    m = tmp_path / "m.json"
    main(["train", "--data", str(data), "--out", str(m)])
    code = main(["report", "--model", str(m), "--data", str(data), "--mode", "data_dep", "--rho", "0.05", "--out", str(tmp_path / "r.json")])
    assert code == 3


def test_deep_tail_without_table_exit_code(tmp_path, data):
    m = tmp_path / "m.json"
    main(["train", "--data", str(data), "--out", str(m)])
    code = main(["report", "--model", str(m), "--data", str(data), "--mode", "adaptive", "--out", str(tmp_path / "r.json")])
    assert code == 3


def test_numeric_failure_exit_code(tmp_path, data):
    m = tmp_path / "m.json"
    assert main(["train", "--data", str(data), "--sigma", "1", "--lam", "0.01", "--out", str(m)]) == 0
    out = ["--out", str(tmp_path / "r.json"), "--csv", str(tmp_path / "r.csv")]
    assert main(["report", "--model", str(m), "--data", str(data)] + out) == 2


def test_squared_loss_without_explicit_noise(tmp_path):
    p = tmp_path / "l.csv"
    main(["gen", "--kind", "linear", "--n", "20", "--d", "2", "--out", str(p)])
    assert main(["train", "--data", str(p), "--loss", "squared", "--out", str(tmp_path / "m.json")]) == 3
    assert main(["train", "--data", str(p), "--loss", "squared", "--sigma", "1", "--lam", "2", "--out", str(tmp_path / "m.json")]) == 0


def test_usage_errors(tmp_path, capsys):
    assert main(["oracle", "bogus"]) == 1
    assert main([]) == 1
    assert main(["report", "--model", "x"]) == 1
    assert main(["experiment", "lambda_sweep", "--split", "1,2"]) == 1
    assert main(["eval", "--report", str(tmp_path / "missing.json"), "--data", "x.csv"]) == 1


def test_oracle_suites(capsys):
    assert main(["oracle", "logodds"]) == 0
    assert main(["oracle", "det"]) == 0
    out = capsys.readouterr().out
    assert "logodds" in out and "PASS" in out


def test_demo(capsys):
    assert main(["demo", "--q", "7", "--sigma", "2"]) == 0
    assert "recovered=7" in capsys.readouterr().out
    assert main(["demo", "--trials", "100", "--seed", "3"]) == 0


def test_experiment_outputs(tmp_path):
    out, summ = tmp_path / "h.csv", tmp_path / "h.json"
    assert main(["experiment", "pdp_hist", "--n", "200", "--d", "4", "--rho", "0.05", "--out", str(out), "--summary", str(summ)]) == 0
    s = json.loads(summ.read_text())
    assert s["max_eps1_true"] < s["worst_case_eps"]
    assert main(["experiment", "vary_n", "--d", "3", "--values", "50,100", "--out", str(tmp_path / "n.csv")]) == 0
    assert [r["n"] for r in rows(tmp_path / "n.csv")] == ["50", "100"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        main(["experiment", "lambda_sweep", "--n", "100", "--d", "3", "--n-test", "100", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "objpert_pdp", "oracle", "nope"], capture_output=True, text=True)
    assert res.returncode == 1
    res = subprocess.run([sys.executable, "-m", "objpert_pdp", "demo", "--q", "0"], capture_output=True, text=True)
    assert res.returncode == 0 and "recovered=0" in res.stdout

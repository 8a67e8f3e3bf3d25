import numpy as np
import pytest

from onestep.cli import main
from onestep.data import read_weights
from onestep.report import parse_float, read_report

COV = "age,married,employed,income_k,education_yrs,insured,er_visits,pcp_visit,chronic,bmi,mistrust,region_a,region_b,region_c"
REGION = "region=region_a;region_b;region_c"


@pytest.fixture(scope="module")
def fx(tmp_path_factory):
    d = tmp_path_factory.mktemp("fx")
    assert main(["casestudy", "--export-fixture", str(d)]) == 0
    return d


def weights_args(fx, out, *extra):
    return ["weights", "--data", str(fx / "cohort.csv"), "--selection", "D", "--covariates", COV,
            "--categorical", REGION, "--profile", str(fx / "profile_cohort.csv"),
            "--out-dir", str(out), *extra]


def test_weights_on_fixture(fx, tmp_path):
    assert main(weights_args(fx, tmp_path, "--tol-multiplier", "0.1")) == 0
    rep = read_report(tmp_path / "report.txt")
    assert rep["summary"].values["status_treated"] == "optimal"
    bal = rep["balance"]
    for col in ("tasmd_treated", "tasmd_control"):
        assert max(parse_float(x) for x in bal.column(col)) <= 0.1 + 1e-8
    ids, w = read_weights(tmp_path / "weights_treated.csv")
    assert abs(w.sum() - 1) < 1e-12 and w.min() >= 0
    assert len(ids) == int(rep["summary"].values["n_treated"])


def test_weights_with_tuning(fx, tmp_path):
    assert main(weights_args(fx, tmp_path, "--tune", "--grid", "0.01,0.05,0.1")) == 0
    rep = read_report(tmp_path / "report.txt")
    assert rep["tuning"].column("multiplier") == ["0.01", "0.05", "0.1"]
    assert rep["run"].values["tuned"] == "true"


def small_csv(path, rows, header="id,x,Z,Y"):
    path.write_text(header + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")
    return path


def test_infeasible_exit_code(tmp_path, capsys):
    data = small_csv(tmp_path / "d.csv", [(f"u{i}", i % 3, i % 2, 1) for i in range(12)])
    prof = tmp_path / "p.csv"
    prof.write_text("term,mean,sd\nx,3.0,1.0\n")
    code = main(["weights", "--data", str(data), "--profile", str(prof), "--tol-multiplier", "0",
                 "--out-dir", str(tmp_path / "o")])
    assert code == 3
    assert "widening" in capsys.readouterr().err
    rep = read_report(tmp_path / "o" / "report.txt")
    assert parse_float(rep["summary"].values["relaxation_hint"]) == pytest.approx(2.0)


def test_bad_flag_and_missing_file(tmp_path):
    assert main(["weights", "--bogus"]) == 2
    assert main(["weights", "--data", str(tmp_path / "nope.csv"), "--profile", "p.csv"]) == 2


def test_estimate_hand_example(tmp_path):
    data = small_csv(tmp_path / "d.csv", [("a", 0, 1, 2), ("b", 0, 1, 4), ("c", 0, 0, 1)])
    small_csv(tmp_path / "wt.csv", [("a", 0.5), ("b", 0.5)], header="id,weight")
    small_csv(tmp_path / "wc.csv", [("c", 1.0)], header="id,weight")
    code = main(["estimate", "--data", str(data), "--outcomes", "Y", "--weights-treated",
                 str(tmp_path / "wt.csv"), "--weights-control", str(tmp_path / "wc.csv"),
                 "--bootstrap", "0", "--out-dir", str(tmp_path)])
    assert code == 0
    rep = read_report(tmp_path / "estimate.txt")
    row = rep["estimates"].rows[0]
    assert row[:2] == ["Y", "2.0"]
    assert row[4:] == ["NA", "NA"]
    small_csv(tmp_path / "wc.csv", [("zz", 1.0)], header="id,weight")
    assert main(["estimate", "--data", str(data), "--outcomes", "Y", "--weights-treated",
                 str(tmp_path / "wt.csv"), "--weights-control", str(tmp_path / "wc.csv"),
                 "--out-dir", str(tmp_path)]) == 2


def test_estimate_bootstrap_constant_outcome(tmp_path):
    rng = np.random.default_rng(0)
    rows = [(f"u{i}", round(rng.normal(), 3), i % 2, 5) for i in range(40)]
    data = small_csv(tmp_path / "d.csv", rows)
    prof = tmp_path / "p.csv"
    prof.write_text("term,mean,sd\nx,0.0,1.0\n")
    assert main(["weights", "--data", str(data), "--profile", str(prof), "--covariates", "x",
                 "--tol-multiplier", "0.1", "--out-dir", str(tmp_path)]) == 0
    code = main(["estimate", "--data", str(data), "--covariates", "x", "--outcomes", "Y",
                 "--weights-treated", str(tmp_path / "weights_treated.csv"),
                 "--weights-control", str(tmp_path / "weights_control.csv"),
                 "--bootstrap", "20", "--profile", str(prof), "--tol-multiplier", "0.1",
                 "--out-dir", str(tmp_path)])
    assert code == 0
    row = read_report(tmp_path / "estimate.txt")["estimates"].rows[0]
    assert [parse_float(x) for x in row[4:]] == [0.0, 0.0]


def test_twostep(tmp_path):
    rng = np.random.default_rng(1)
    n = 200
    x = rng.normal(size=n)
    d = (rng.random(n) < 1 / (1 + np.exp(-x))).astype(int)
    z = np.where(d == 1, rng.integers(0, 2, n), -1)
    rows = [(f"u{i}", round(x[i], 4), "" if z[i] < 0 else z[i], d[i]) for i in range(n)]
    data = small_csv(tmp_path / "d.csv", rows, header="id,x,Z,D")
    base = ["twostep", "--data", str(data), "--selection", "D", "--known-e", "0.5"]
    assert main(base + ["--selection-covariates", "none", "--out-dir", str(tmp_path / "c")]) == 0
    _, w = read_weights(tmp_path / "c" / "weights_treated.csv")
    np.testing.assert_allclose(w, 1 / w.size)
    assert main(base + ["--out-dir", str(tmp_path / "g")]) == 0
    assert main(base + ["--mode", "transport", "--out-dir", str(tmp_path / "t")]) == 0
    _, wg = read_weights(tmp_path / "g" / "weights_treated.csv")
    _, wt = read_weights(tmp_path / "t" / "weights_treated.csv")
    assert not np.allclose(wg, wt)
    assert read_report(tmp_path / "t" / "report.txt")["run"].values["mode"] == "transport"
    assert main(["twostep", "--data", str(data), "--known-e", "0.5", "--out-dir", str(tmp_path)]) == 2


def test_twostep_separation_exit_code(tmp_path):
    rows = [(f"u{i}", i, i % 2 if i >= 10 else "", int(i >= 10)) for i in range(20)]
    data = small_csv(tmp_path / "d.csv", rows, header="id,x,Z,D")
    assert main(["twostep", "--data", str(data), "--selection", "D", "--known-e", "0.5",
                 "--out-dir", str(tmp_path)]) == 4


def test_config_file(fx, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[weights]\ndata = {fx / 'cohort.csv'}\nselection = D\ncovariates = {COV}\n"
                   f"profile = {fx / 'profile_cohort.csv'}\ntol-multiplier = 0.2\n"
                   f"categorical = {REGION}\nout-dir = {tmp_path / 'a'}\n")
    assert main(["weights", "--config", str(cfg)]) == 0
    assert read_report(tmp_path / "a" / "report.txt")["run"].values["multiplier"] == "0.2"
    # flags beat the file
    assert main(["weights", "--config", str(cfg), "--tol-multiplier", "0.1"]) == 0
    assert read_report(tmp_path / "a" / "report.txt")["run"].values["multiplier"] == "0.1"
    cfg.write_text(cfg.read_text() + "colour = blue\n")
    assert main(["weights", "--config", str(cfg)]) == 2


def test_simulate(tmp_path):
    args = ["simulate", "--setting", "randomized", "--methods", "one3,two3", "--reps", "3",
            "--cohort-size", "200", "--seed", "5"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b"), "--threads", "2"]) == 0
    for f in ("sim_randomized_report.txt", "sim_randomized_replications.csv", "sim_randomized_table.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    rep = read_report(tmp_path / "a" / "sim_randomized_report.txt")
    assert len(rep["cells"].rows) == 6
    assert main(["simulate", "--methods", "one9", "--out-dir", str(tmp_path)]) == 2
    assert main(["simulate", "--desk", "--paper-parity"]) == 2


def test_casestudy_command(tmp_path):
    args = ["casestudy", "--targets", "mistrust,external", "--outcomes", "flu_shot",
            "--bootstrap", "6", "--seed", "2"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "casestudy.txt").read_bytes()
    assert a == (tmp_path / "b" / "casestudy.txt").read_bytes()
    rep = read_report(tmp_path / "a" / "casestudy.txt")
    assert rep["targets"].column("target") == ["mistrust", "external"]
    assert "balance_external" in rep
    assert main(["casestudy", "--targets", "martians", "--out-dir", str(tmp_path)]) == 2

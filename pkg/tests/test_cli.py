import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from psar_ann import FitResult, ModelSpec, ParameterVector, SimConfig, read_gal, lattice_design
from psar_ann.cli import main, read_dataset_csv

from conftest import QUEEN_3X3

REFERENCE_MEAN = np.array([0.6178, 4.8504, 0.5410, 1.0576])
REFERENCE_SD = np.array([0.0075, 0.0812, 0.0425, 0.0431])


def _digest(paths):
    return {p: hashlib.sha256(p.read_bytes()).hexdigest() for p in paths}


@pytest.fixture
def pipeline(tmp_path):
    """A 50x50 lattice design simulated and written to disk."""
    cfg = lattice_design("normal", replicates=3, seed=2024)
    cfg.dump(tmp_path / "sim.json")
    assert main(["weights", "--lattice", "50x50", "--rule", "queen", "--standardize", "--out", str(tmp_path / "w.gal")]) == 0
    assert main(["simulate", "--config", str(tmp_path / "sim.json"), "--out", str(tmp_path / "data.csv"), "--eps", str(tmp_path / "eps.csv")]) == 0
    return tmp_path


class TestWeightsCommand:
    def test_queen_3x3(self, tmp_path):
        out = tmp_path / "w.gal"
        assert main(["weights", "--lattice", "3x3", "--rule", "queen", "--out", str(out)]) == 0
        np.testing.assert_array_equal(read_gal(str(out)).toarray(), QUEEN_3X3)

    def test_points(self, tmp_path):
        (tmp_path / "pts.csv").write_text("x,y\n0,0\n1,0\n3,0\n")
        out = tmp_path / "w.gal"
        assert main(["weights", "--points", str(tmp_path / "pts.csv"), "--method", "knn", "--k", "1", "--out", str(out)]) == 0
        np.testing.assert_array_equal(read_gal(str(out)).toarray(), [[0, 1, 0], [1, 0, 0], [0, 1, 0]])

    def test_bad_lattice_is_usage_error(self, tmp_path, capsys):
        assert main(["weights", "--lattice", "3by3", "--out", str(tmp_path / "w.gal")]) == 2
        assert not (tmp_path / "w.gal").exists()


class TestPipeline:
    def test_simulate_fit_infer(self, pipeline):
        p = pipeline
        inputs = [p / "data.csv", p / "w.gal", p / "sim.json"]
        before = _digest(inputs)
        args = ["fit", "--data", str(p / "data.csv"), "--weights", str(p / "w.gal"), "--family", "normal",
                "--neurons", "1", "--neuron-bias", "--no-linear", "--seed", "7", "--out", str(p / "fit.json")]
        assert main(args) == 0
        res = FitResult.from_json(p / "fit.json")
        assert np.all(np.abs(res.theta.flatten() - REFERENCE_MEAN) <= 4 * REFERENCE_SD)

        assert main(["infer", "--fit", str(p / "fit.json"), "--data", str(p / "data.csv"), "--weights", str(p / "w.gal"),
                     "--level", "0.95", "--out", str(p / "infer.json")]) == 0
        inf = json.loads((p / "infer.json").read_text())
        assert inf["loglik"] == pytest.approx(res.loglik, abs=1e-9)
        assert set(inf) >= {"estimates", "se", "intervals", "moran", "aic"}
        assert set(inf["moran"]) >= {"I", "z", "p"}
        assert _digest(inputs) == before

        # the same seed gives a byte-identical fit file
        first = (p / "fit.json").read_bytes()
        assert main(args) == 0
        assert (p / "fit.json").read_bytes() == first

    def test_eps_matches_residuals(self, pipeline):
        eps = np.loadtxt(pipeline / "eps.csv", skiprows=1)
        y, x = read_dataset_csv(str(pipeline / "data.csv"))
        assert eps.size == y.size == 2500 and x.shape == (2500, 1)

    def test_laplace_infer_disables_covariance(self, pipeline, capsys):
        p = pipeline
        assert main(["fit", "--data", str(p / "data.csv"), "--weights", str(p / "w.gal"), "--family", "laplace",
                     "--neurons", "1", "--neuron-bias", "--no-linear", "--out", str(p / "fit.json")]) == 0
        assert main(["infer", "--fit", str(p / "fit.json"), "--data", str(p / "data.csv"), "--weights", str(p / "w.gal"),
                     "--out", str(p / "infer.json")]) == 0
        inf = json.loads((p / "infer.json").read_text())
        assert inf["se"] is None and "cannot be computed" in inf["covariance_note"]
        assert "cannot be computed" in capsys.readouterr().err

    def test_mc_and_qq(self, pipeline):
        p = pipeline
        assert main(["mc", "--config", str(p / "sim.json"), "--replicates", "3", "--out", str(p / "mc.csv")]) == 0
        assert main(["qq", "--mc", str(p / "mc.csv"), "--param", "rho", "--out", str(p / "qq.csv")]) == 0
        qq = np.loadtxt(p / "qq.csv", delimiter=",", skiprows=1)
        assert qq.shape == (3, 2)
        assert np.all(np.diff(qq, axis=0) >= 0)

    def test_intercept_three_covariates_t8(self, tmp_path):
        spec = ModelSpec(q=3, h=1, family="t", df=8.0, intercept=True)
        theta = ParameterVector([1.0, 0.5, -0.8, 0.3], 0.45, [3.0], [[1.2, -0.6, 0.9]])
        cfg = SimConfig(40, 40, spec, theta, seed=31)
        cfg.dump(tmp_path / "sim.json")
        assert main(["weights", "--lattice", "40x40", "--out", str(tmp_path / "w.gal")]) == 0
        assert main(["simulate", "--config", str(tmp_path / "sim.json"), "--out", str(tmp_path / "d.csv")]) == 0
        assert main(["fit", "--data", str(tmp_path / "d.csv"), "--weights", str(tmp_path / "w.gal"), "--family", "t",
                     "--df", "8", "--neurons", "1", "--intercept", "--mode", "alternating", "--seed", "2",
                     "--out", str(tmp_path / "fit.json")]) == 0
        assert main(["fit", "--data", str(tmp_path / "d.csv"), "--weights", str(tmp_path / "w.gal"), "--family", "t",
                     "--df", "8", "--neurons", "0", "--intercept", "--out", str(tmp_path / "null.json")]) == 0
        assert main(["infer", "--fit", str(tmp_path / "fit.json"), "--data", str(tmp_path / "d.csv"), "--weights",
                     str(tmp_path / "w.gal"), "--null-fit", str(tmp_path / "null.json"), "--out", str(tmp_path / "inf.json")]) == 0
        inf = json.loads((tmp_path / "inf.json").read_text())
        est = np.array(list(inf["estimates"].values()))
        se = np.array(list(inf["se"].values()))
        assert inf["n_params"] == 9
        assert np.all(np.abs(est - theta.flatten()) <= 4 * se)
        assert inf["lrt"]["df"] == 4 and inf["lrt"]["p"] < 0.05
        assert abs(inf["moran"]["z"]) < 3


class TestUsage:
    def test_unknown_flag_writes_nothing(self, tmp_path):
        out = tmp_path / "w.gal"
        assert main(["weights", "--lattice", "3x3", "--colour", "red", "--out", str(out)]) == 2
        assert not out.exists()

    def test_df_required_for_t(self, tmp_path):
        assert main(["fit", "--data", "d.csv", "--weights", "w.gal", "--family", "t", "--out", str(tmp_path / "f.json")]) == 2

    def test_df_rejected_otherwise(self, tmp_path):
        assert main(["fit", "--data", "d.csv", "--weights", "w.gal", "--df", "5", "--out", str(tmp_path / "f.json")]) == 2

    def test_missing_file_is_runtime_error(self, tmp_path, capsys):
        code = main(["fit", "--data", str(tmp_path / "none.csv"), "--weights", "w.gal", "--out", str(tmp_path / "f.json")])
        assert code == 1
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and "error" in err[0]

    def test_bad_header(self, tmp_path, capsys):
        (tmp_path / "d.csv").write_text("a,b\n1,2\n")
        (tmp_path / "w.gal").write_text("0 1\n1 0\n\n")
        assert main(["fit", "--data", str(tmp_path / "d.csv"), "--weights", str(tmp_path / "w.gal"), "--out", str(tmp_path / "f.json")]) == 1
        assert "header" in capsys.readouterr().err

    def test_unknown_qq_param(self, pipeline):
        p = pipeline
        assert main(["mc", "--config", str(p / "sim.json"), "--replicates", "3", "--out", str(p / "mc.csv")]) == 0
        assert main(["qq", "--mc", str(p / "mc.csv"), "--param", "sigma", "--out", str(p / "qq.csv")]) == 1

    def test_console_script(self, tmp_path):
        out = tmp_path / "w.gal"
        proc = subprocess.run([sys.executable, "-m", "psar_ann.cli", "weights", "--lattice", "2x2", "--out", str(out)])
        assert proc.returncode == 0 and out.exists()
        proc = subprocess.run([sys.executable, "-m", "psar_ann.cli", "nosuch"], capture_output=True)
        assert proc.returncode == 2

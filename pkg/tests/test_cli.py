import json
import subprocess
import sys

import numpy as np
import pytest

from feqrboot import PanelDataset, fit_feqr
from feqrboot.bootstrap import EXPONENTIAL, percentile_ci, run_bootstrap
from feqrboot.cli import main
from feqrboot.io import PanelCsvSpec, load_panel
from feqrboot.simlab import SimulationDesign, generate, rep_stream


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "small.csv"
    assert main(["simulate", "--design", "locscale", "--n", "12", "--T", "15", "--seed", "3", "--out", str(path)]) == 0
    return str(path)


DATA = ["--unit", "unit", "--time", "time", "--y", "y", "--x", "x"]


class TestSimulate:
    def test_round_trip(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        code, out, _ = _run(["simulate", "--design", "dynamic", "--n", "5", "--T", "7", "--seed", "8", "--out", str(path)], capsys)
        assert code == 0 and out == ""
        design = SimulationDesign.from_name("dynamic", n=5, T=7, seed=8, reps=1)
        mem = generate(design, rep_stream(design, 0)).data
        back = load_panel(PanelCsvSpec(str(path), "unit", "time", "y", ("y_lag",)))
        np.testing.assert_array_equal(back.y, mem.y)
        np.testing.assert_array_equal(back.X, mem.X)


class TestFit:
    def test_consistency(self, tmp_path, capsys):
        path = tmp_path / "loc.csv"
        main(["simulate", "--design", "loc", "--n", "100", "--T", "100", "--seed", "0", "--out", str(path)])
        code, out, _ = _run(["fit", "--data", str(path), *DATA, "--tau", "0.5"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["schema_version"] == 1
        assert abs(doc["fits"][0]["beta"]["x"] - 1.0) < 0.05
        assert doc["fits"][0]["diagnostics"]["converged"]

    def test_multiple_taus_and_csv(self, small_csv, tmp_path, capsys):
        table = tmp_path / "t.csv"
        code, out, _ = _run(["fit", "--data", small_csv, *DATA, "--tau", "0.25,0.75", "--csv", str(table)], capsys)
        assert code == 0
        assert [f["tau"] for f in json.loads(out)["fits"]] == [0.25, 0.75]
        assert table.read_text().splitlines()[0] == "tau,coef,estimate"

    def test_turning_point(self, tmp_path, capsys, rng):
        rows = ["u,t,y,g"]
        for i in range(6):
            for t in range(12):
                g = float(np.exp(rng.uniform(0, 4)))
                lg = np.log(g)
                rows.append(f"{i},{t},{float(2 * lg - 0.5 * lg**2 + 0.1 * rng.normal())!r},{g!r}")
        path = tmp_path / "ekc.csv"
        path.write_text("\n".join(rows) + "\n")
        code, out, _ = _run(["fit", "--data", str(path), "--unit", "u", "--time", "t", "--y", "y",
                             "--x", "lg,lg2", "--transforms", "g:log:lg,lg:square:lg2", "--tau", "0.5",
                             "--turning-point", "lg,lg2"], capsys)
        assert code == 0
        tp = json.loads(out)["fits"][0]["turning_point"]
        assert tp["ekc_shape"] and tp["value"] == pytest.approx(2.0, abs=0.2)


class TestBootstrap:
    def test_all_ones_degenerate(self, small_csv, capsys):
        code, out, _ = _run(["bootstrap", "--data", small_csv, *DATA, "--tau", "0.5", "--B", "20",
                             "--weights", "all-ones"], capsys)
        assert code == 0
        fit = json.loads(out)["fits"][0]
        beta = fit["beta"]["x"]
        for ci in fit["bootstrap"]["intervals"]:
            assert ci["lower"] == [beta] and ci["upper"] == [beta]
        assert fit["bootstrap"]["covariance"] == [[0.0]]

    def test_matches_library(self, small_csv, capsys):
        code, out, _ = _run(["bootstrap", "--data", small_csv, *DATA, "--tau", "0.4", "--B", "49", "--seed", "5",
                             "--level", "0.8"], capsys)
        assert code == 0
        doc = json.loads(out)
        data = load_panel(PanelCsvSpec(small_csv, "unit", "time", "y", ("x",)))
        fit = fit_feqr(data, 0.4)
        res = run_bootstrap(data, 0.4, 49, EXPONENTIAL, 5, point_fit=fit)
        ci = percentile_ci(res, 0.8)
        got = doc["fits"][0]["bootstrap"]["intervals"][0]
        assert got["method"] == ci.method.value
        assert got["lower"] == ci.lower.tolist() and got["upper"] == ci.upper.tolist()
        prov = doc["provenance"]
        assert (prov["seed"], prov["B"], prov["scheme"]) == (5, 49, "exp")

    def test_byte_identical(self, small_csv, capsys):
        base = ["bootstrap", "--data", small_csv, *DATA, "--tau", "0.3,0.6", "--B", "39", "--seed", "42"]
        _, a, _ = _run(base + ["--threads", "1"], capsys)
        _, b, _ = _run(base + ["--threads", "3"], capsys)
        _, c, _ = _run(base, capsys)
        assert a == b == c

    def test_lower_le_upper(self, small_csv, capsys):
        _, out, _ = _run(["bootstrap", "--data", small_csv, *DATA, "--tau", "0.5", "--B", "39",
                          "--weights", "lognormal", "--vmode", "longrun"], capsys)
        fit = json.loads(out)["fits"][0]
        for ci in fit["bootstrap"]["intervals"] + [fit["asymptotic"]["interval"]]:
            assert all(lo <= hi for lo, hi in zip(ci["lower"], ci["upper"]))


class TestCoverage:
    def test_deterministic(self, tmp_path, capsys):
        argv = ["coverage", "--design", "locdep", "--n", "8", "--T", "10", "--reps", "3", "--B", "29",
                "--seed", "7", "--taus", "0.5"]
        _, a, _ = _run(argv + ["--threads", "2"], capsys)
        _, b, _ = _run(argv, capsys)
        assert a == b
        doc = json.loads(a)
        assert doc["schema_version"] == 1 and doc["provenance"]["seed"] == 7

    def test_csv(self, tmp_path, capsys):
        table = tmp_path / "cov.csv"
        code, _, _ = _run(["coverage", "--design", "loc", "--n", "8", "--T", "8", "--reps", "2", "--B", "29",
                           "--taus", "0.5", "--csv", str(table), "--out", str(tmp_path / "cov.json")], capsys)
        assert code == 0
        lines = table.read_text().splitlines()
        assert lines[0] == "tau,method,coverage,avg_width,reps_used,mc_stderr"
        assert len(lines) == 5


class TestErrors:
    def test_unbalanced_exit_1(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("u,t,y\na,1,1\na,2,2\nb,1,3\n")
        code, out, err = _run(["fit", "--data", str(path), "--unit", "u", "--time", "t", "--y", "y", "--tau", "0.5"], capsys)
        assert code == 1 and out == ""
        assert "UnbalancedPanel" in err and "b" in err

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = _run(["fit", "--data", str(tmp_path / "none.csv"), *DATA, "--tau", "0.5"], capsys)
        assert code == 1 and "error" in err

    def test_degenerate(self, tmp_path, capsys):
        path = tmp_path / "one.csv"
        path.write_text("unit,time,y,x\na,1,1,1\nb,1,2,2\n")
        code, _, err = _run(["fit", "--data", str(path), *DATA, "--tau", "0.5"], capsys)
        assert code == 1 and "DegenerateDesign" in err

    @pytest.mark.parametrize("argv", [
        ["fit", "--data", "f.csv", "--unit", "u", "--time", "t", "--y", "y", "--tau", "1.5"],
        ["bootstrap", "--data", "f.csv", "--unit", "u", "--time", "t", "--y", "y", "--tau", "0.5", "--B", "0"],
        ["bootstrap", "--data", "f.csv", "--unit", "u", "--time", "t", "--y", "y", "--tau", "0.5", "--weights", "gauss"],
        ["simulate", "--design", "nope", "--out", "x.csv"],
        ["coverage", "--design", "loc", "--level", "1.2"],
    ])
    def test_usage_exit_2(self, argv, capsys):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "feqrboot", "fit", "--data", str(tmp_path / "x.csv"), *DATA,
                               "--tau", "0.5"], capture_output=True, text=True)
        assert proc.returncode == 1 and proc.stdout == ""
        assert proc.stderr.startswith("feqrboot: error")

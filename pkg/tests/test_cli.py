import json

import numpy as np
import pytest

import trapcal.cli as cli
from trapcal.errors import NoConvergence
from trapcal.fitting import linear_origin_fit
from trapcal.simulator import Scenario, default_scenario


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def scenario_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scen") / "scenario.json"
    default_scenario(seed=5, n_samples=2**16).to_json(str(path))
    return str(path)


@pytest.fixture(scope="module")
def recording_file(tmp_path_factory, scenario_file):
    path = tmp_path_factory.mktemp("rec") / "rec.csv"
    assert run("simulate", "--scenario", scenario_file, "-o", path) == 0
    return str(path)


class TestSimulate:
    def test_deterministic_reruns(self, tmp_path, scenario_file):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert run("simulate", "--scenario", scenario_file, "-o", a) == 0
        assert run("simulate", "--scenario", scenario_file, "-o", b) == 0
        assert a.read_bytes() == b.read_bytes()
        assert (tmp_path / "a.csv.truth.json").exists()

    def test_truth_sidecar_contents(self, recording_file):
        truth = json.loads(open(recording_file + ".truth.json").read())
        assert truth["fc_hz"] == 737.9
        assert truth["seed"] == 5
        assert truth["alpha_s"] == 200.0

    def test_missing_scenario_exits_2(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert run("simulate", "--scenario", missing, "-o", tmp_path / "x.csv") == 2
        assert str(missing) in capsys.readouterr().err

    def test_zero_noise_scenario_gives_constant_s(self, tmp_path):
        sc = default_scenario(seed=2, n_samples=4096)
        data = sc.to_dict()
        data["trap"]["axial"] = None
        data["noise_x"] = data["noise_s"] = data["noise_xk"] = None
        path = tmp_path / "quiet.json"
        with open(path, "w") as fh:
            json.dump(data, fh)
        out = tmp_path / "quiet.csv"
        assert run("simulate", "--scenario", path, "-o", out) == 0
        s_col = {line.split(",")[1] for line in out.read_text().splitlines()[1:]}
        assert len(s_col) == 1

    def test_seed_override(self, tmp_path, scenario_file):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        assert run("simulate", "--scenario", scenario_file, "-o", a) == 0
        assert run("simulate", "--scenario", scenario_file, "--seed", 99, "-o", b) == 0
        assert a.read_bytes() != b.read_bytes()
        assert json.loads(open(str(b) + ".truth.json").read())["seed"] == 99


class TestCalibrateCommand:
    def test_recovers_truth(self, tmp_path, recording_file):
        out = tmp_path / "report.json"
        code = run("calibrate", "-i", recording_file, "--rate-hz", 10_000,
                   "--method", "mean", "--power-mw", 55, "-o", out)
        assert code == 0
        report = json.loads(out.read_text())
        truth = json.loads(open(recording_file + ".truth.json").read())
        assert abs(report["fc_hz"] - truth["fc_hz"]) < 2.0 * report["fc_sigma_hz"]
        assert report["power_mw"] == 55.0
        assert report["provenance"]["input"] == recording_file

    def test_noise_without_dark_exits_2(self, recording_file, capsys):
        code = run("calibrate", "-i", recording_file, "--rate-hz", 10_000,
                   "--method", "noise", "-o", "-")
        assert code == 2
        assert "dark recording required" in capsys.readouterr().err

    def test_bad_channels_exits_2(self, recording_file, capsys):
        code = run("calibrate", "-i", recording_file, "--rate-hz", 10_000,
                   "--channels", "X0,S=1", "-o", "-")
        assert code == 2

    def test_numerical_failure_exits_1(self, recording_file, capsys, monkeypatch):
        def boom(*args, **kwargs):
            raise NoConvergence("no convergence in 200 iterations")

        monkeypatch.setattr("trapcal.pipelines.wls_fit", boom)
        code = run("calibrate", "-i", recording_file, "--rate-hz", 10_000, "-o", "-")
        assert code == 1
        assert "no convergence" in capsys.readouterr().err

    def test_byte_reproducible(self, tmp_path, recording_file):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        for out in (a, b):
            assert run("calibrate", "-i", recording_file, "--rate-hz", 10_000,
                       "-o", out) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_stamp_adds_timestamp(self, tmp_path, recording_file):
        out = tmp_path / "stamped.json"
        assert run("calibrate", "-i", recording_file, "--rate-hz", 10_000,
                   "--stamp", "-o", out) == 0
        assert "created_at" in json.loads(out.read_text())


class TestPsdAndFit:
    def test_psd_then_fit(self, tmp_path, recording_file):
        psd = tmp_path / "x.psd"
        assert run("psd", "-i", recording_file, "--rate-hz", 10_000,
                   "--channel", "X", "--blocks", 32, "-o", psd) == 0
        header = psd.read_text().splitlines()
        assert header[2] == "freq_hz,psd,sigma"
        fit_out = tmp_path / "fit.json"
        assert run("fit", "-i", psd, "--model", "al_const", "-o", fit_out) == 0
        fit = json.loads(fit_out.read_text())
        assert fit["converged"] is True
        assert set(fit["params"]) == {"D", "fc", "c0"}

    def test_fit_al_dark_requires_dark(self, tmp_path, recording_file, capsys):
        psd = tmp_path / "x.psd"
        assert run("psd", "-i", recording_file, "--rate-hz", 10_000, "-o", psd) == 0
        assert run("fit", "-i", psd, "--model", "al_dark", "-o", "-") == 2
        assert "--dark" in capsys.readouterr().err


@pytest.fixture(scope="module")
def sweep_recordings(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweep")
    paths = []
    for p in (15.0, 25.0, 35.0, 45.0, 55.0):
        sc = default_scenario(seed=int(p), n_samples=2**16,
                              fc_hz=737.9 / 55.0 * p, power_mw=p)
        path = root / f"rec_{int(p)}.csv"
        sc.to_json(str(root / f"scen_{int(p)}.json"))
        assert run("simulate", "--scenario", root / f"scen_{int(p)}.json",
                   "-o", path) == 0
        paths.append((str(path), p))
    return paths


class TestSweepAndCompare:
    def test_sweep_over_reports_matches_direct_fit(self, tmp_path, sweep_recordings):
        reports = []
        for path, power in sweep_recordings:
            out = tmp_path / f"rep_{int(power)}.json"
            assert run("calibrate", "-i", path, "--rate-hz", 10_000,
                       "--method", "mean", "--power-mw", power, "-o", out) == 0
            reports.append(out)
        sweep_out = tmp_path / "sweep.json"
        assert run("sweep", *reports, "-o", sweep_out) == 0
        sweep = json.loads(sweep_out.read_text())
        points = [
            (r["power_mw"] * 1e-3, r["fc_hz"], r["fc_sigma_hz"])
            for r in (json.loads(p.read_text()) for p in reports)
        ]
        direct = linear_origin_fit(points)
        assert sweep["slope_hz_per_w"] == direct.slope
        assert sweep["n_points"] == 5

    def test_sweep_over_recordings_with_jobs(self, tmp_path, sweep_recordings):
        args = [f"{path}:{power}" for path, power in sweep_recordings]
        out1 = tmp_path / "sweep1.json"
        out2 = tmp_path / "sweep2.json"
        assert run("sweep", *args, "--rate-hz", 10_000, "--method", "mean",
                   "--jobs", 1, "-o", out1) == 0
        assert run("sweep", *args, "--rate-hz", 10_000, "--method", "mean",
                   "--jobs", 4, "-o", out2) == 0
        assert out1.read_bytes() == out2.read_bytes()
        sweep = json.loads(out1.read_text())
        alpha_true = 737.9 / 55e-3
        assert abs(sweep["slope_hz_per_w"] - alpha_true) < 3 * sweep["slope_sigma_hz_per_w"]

    def test_sweep_recordings_need_rate(self, sweep_recordings, capsys):
        args = [f"{path}:{power}" for path, power in sweep_recordings]
        with pytest.raises(SystemExit) as err:
            run("sweep", *args, "-o", "-")
        assert err.value.code == 2

    def test_compare_command(self, tmp_path, recording_file):
        rep_a = tmp_path / "a.json"
        rep_b = tmp_path / "b.json"
        for method, out in (("inst", rep_a), ("mean", rep_b)):
            assert run("calibrate", "-i", recording_file, "--rate-hz", 10_000,
                       "--method", method, "-o", out) == 0
        cmp_out = tmp_path / "cmp.json"
        assert run("compare", rep_a, rep_b, "--labels", "inst,mean",
                   "-o", cmp_out) == 0
        data = json.loads(cmp_out.read_text())
        assert data["labels"] == ["inst", "mean"]
        assert 0.5 < data["chi2_ratio"] < 2.0


class TestScenarioOverCli:
    def test_scenario_json_round_trips_through_cli(self, tmp_path, scenario_file):
        loaded = Scenario.from_json(scenario_file)
        assert loaded.n_samples == 2**16
        assert loaded.radial.fc_hz == 737.9

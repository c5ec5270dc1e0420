import numpy as np
import pytest
from dataclasses import replace

from trapcal.errors import (
    DarkGridMismatch,
    ExperimentalMethodError,
    InsufficientPowers,
    MissingChannel,
    MixedMethods,
    NonPositiveInput,
)
from trapcal.fitting import linear_origin_fit
from trapcal.pipelines import (
    ApproximationReport,
    CalibrationConfig,
    CalibrationReport,
    Method,
    approximation_report,
    calibrate,
    power_sweep,
    stiffness_from_corner,
)
from trapcal.signals import Recording, TimeSeries
from trapcal.simulator import (
    daq_noise_scenario,
    default_scenario,
    synthesize_dark_recording,
)

FS = 10_000.0
FC_TRUE = 737.9


@pytest.fixture(scope="module")
def reference_recording():
    return default_scenario(seed=321, n_samples=2**19).run()


def combined_2sigma(a, b):
    return 2.0 * np.hypot(a.fc_sigma_hz, b.fc_sigma_hz)


class TestCalibrate:
    def test_inst_and_mean_agree(self, reference_recording):
        r_inst = calibrate(reference_recording, CalibrationConfig(method=Method.INST))
        r_mean = calibrate(reference_recording, CalibrationConfig(method=Method.MEAN))
        assert abs(r_inst.fc_hz - r_mean.fc_hz) < combined_2sigma(r_inst, r_mean)
        for r in (r_inst, r_mean):
            assert abs(r.fc_hz - FC_TRUE) < 2.0 * r.fc_sigma_hz
            assert r.fit.converged
            assert r.diagnostics.worst == "PASS"

    def test_noise_method_with_colored_daq(self):
        sc = daq_noise_scenario(seed=322, n_samples=2**19)
        rec = sc.run()
        # dark averaged 4x longer: same block length, same grid, less
        # regressor noise feeding the dark-scale attenuation
        dark = synthesize_dark_recording(
            sc.noise_x, sc.noise_s, sc.noise_xk, FS, 4 * 2**19, seed=999_322
        )
        config = CalibrationConfig(method=Method.NOISE, dark_n_blocks=256)
        report = calibrate(rec, config, dark_recording=dark)
        assert abs(report.fc_hz - FC_TRUE) < 2.0 * report.fc_sigma_hz
        assert report.fit["beta"] > 0.5

    def test_knife_method(self, reference_recording):
        report = calibrate(reference_recording, CalibrationConfig(method=Method.KNIFE))
        assert abs(report.fc_hz - FC_TRUE) < 2.0 * report.fc_sigma_hz
        # knife cut: mechanical vibrations below 30 Hz stay out of the fit
        assert report.band_hz[0] == 30.0

    def test_other_methods_start_at_first_bin(self, reference_recording):
        report = calibrate(reference_recording, CalibrationConfig(method=Method.MEAN))
        df = FS / (2**19 // 64)
        assert report.band_hz[0] == pytest.approx(df)

    def test_single_channel_is_gated(self, reference_recording):
        with pytest.raises(ExperimentalMethodError):
            calibrate(reference_recording,
                      CalibrationConfig(method=Method.SINGLE_CHANNEL))

    def test_single_channel_with_flag(self, reference_recording):
        config = CalibrationConfig(method=Method.SINGLE_CHANNEL,
                                   allow_experimental=True)
        report = calibrate(reference_recording, config)
        assert abs(report.fc_hz - FC_TRUE) < 2.0 * report.fc_sigma_hz
        assert report.fit["fc_r"] >= report.fit["fc_z"]

    def test_noise_needs_dark(self, reference_recording):
        with pytest.raises(MissingChannel, match="dark"):
            calibrate(reference_recording, CalibrationConfig(method=Method.NOISE))

    def test_missing_channel(self):
        rec = Recording({"X": TimeSeries(np.random.default_rng(0).standard_normal(4096), FS)})
        with pytest.raises(MissingChannel):
            calibrate(rec, CalibrationConfig(method=Method.MEAN))

    def test_dark_rate_mismatch(self, reference_recording):
        sc = default_scenario(seed=5, n_samples=2**16)
        dark = synthesize_dark_recording(sc.noise_x, None, None, 20_000.0, 2**16, 6)
        with pytest.raises(DarkGridMismatch):
            calibrate(reference_recording, CalibrationConfig(method=Method.NOISE),
                      dark_recording=dark)

    def test_dark_grid_mismatch(self, reference_recording):
        sc = default_scenario(seed=5, n_samples=2**16)
        dark = synthesize_dark_recording(sc.noise_x, sc.noise_s, sc.noise_xk,
                                         FS, 2**16, 6)
        # same rate but 8x shorter blocks -> different grid
        with pytest.raises(DarkGridMismatch):
            calibrate(reference_recording, CalibrationConfig(method=Method.NOISE),
                      dark_recording=dark)

    def test_model_kind_override(self, reference_recording):
        from trapcal.models import ModelKind

        config = CalibrationConfig(method=Method.MEAN, model_kind=ModelKind.AL)
        report = calibrate(reference_recording, config)
        assert tuple(report.fit.param_names) == ("D", "fc")

    def test_report_dict_round_trip(self, reference_recording):
        report = calibrate(reference_recording, CalibrationConfig(method=Method.MEAN))
        back = CalibrationReport.from_dict(report.to_dict())
        assert back.fc_hz == report.fc_hz
        assert back.method == report.method
        assert np.array_equal(back.fit.params, report.fit.params)
        assert back.to_dict() == report.to_dict()

    def test_reports_reproducible(self):
        sc = default_scenario(seed=77, n_samples=2**17)
        a = calibrate(sc.run(), CalibrationConfig(method=Method.MEAN))
        b = calibrate(sc.run(), CalibrationConfig(method=Method.MEAN))
        assert a.to_dict() == b.to_dict()


class TestApproximationReport:
    def test_ideal_channels_pass_with_zeros(self):
        n = 4096
        rng = np.random.default_rng(1)
        x = rng.standard_normal(n)
        x -= np.mean(x)
        rec = Recording({
            "X": TimeSeries(x, FS),
            "S": TimeSeries(np.full(n, 2.0), FS),
        })
        rep = approximation_report(rec)
        assert rep.s_fluctuation == 0.0
        assert rep.x_offset < 1e-12
        assert rep.cross_term == 0.0
        assert rep.worst == "PASS"

    def test_miscentered_beam_flags_and_biases_inst(self):
        sc = default_scenario(seed=901, n_samples=2**19)
        std_z = np.sqrt(sc.axial.variance)
        sc = replace(sc, detector=replace(sc.detector,
                                          axial_power_coupling=0.15 / std_z))
        rec = sc.run()
        s_mean = np.mean(rec["S"].samples)
        shifted = Recording(
            {
                "X": TimeSeries(rec["X"].samples + 0.25 * s_mean, FS),
                "S": rec["S"],
                "Xk": rec["Xk"],
            },
            rec.meta,
        )
        rep = approximation_report(shifted)
        assert rep.flags["x_offset"] in ("WARN", "FAIL")
        r_inst = calibrate(shifted, CalibrationConfig(method=Method.INST))
        r_mean = calibrate(shifted, CalibrationConfig(method=Method.MEAN))
        assert abs(r_inst.fc_hz - r_mean.fc_hz) > combined_2sigma(r_inst, r_mean)

    def test_small_fluctuation_passes_and_methods_agree(self, reference_recording):
        rep = approximation_report(reference_recording)
        assert rep.s_fluctuation == pytest.approx(0.02, rel=0.15)
        assert rep.worst == "PASS"
        r_inst = calibrate(reference_recording, CalibrationConfig(method=Method.INST))
        r_mean = calibrate(reference_recording, CalibrationConfig(method=Method.MEAN))
        assert abs(r_inst.fc_hz - r_mean.fc_hz) / r_mean.fc_hz < 0.01

    def test_missing_channel(self):
        rec = Recording({"S": TimeSeries(np.ones(64) + 0.0, FS)})
        with pytest.raises(MissingChannel):
            approximation_report(rec)


def _report(method=Method.MEAN, fc=700.0, sigma=5.0, power_mw=55.0, converged=True):
    from trapcal.fitting import FitResult

    fit = FitResult(
        param_names=("D", "fc", "c0"),
        params=np.array([1e-12, fc, 1e-22]),
        param_sigma=np.array([1e-14, sigma, 1e-24]),
        param_sigma_raw=np.array([1e-14, sigma, 1e-24]),
        covariance=np.eye(3),
        chi2=100.0,
        chi2_reduced=1.0,
        n_points=103,
        n_iterations=5,
        converged=converged,
        band=(1.0, 5000.0),
        model={"kind": "al_const", "param_names": ["D", "fc", "c0"],
               "sample_rate_hz": FS},
    )
    return CalibrationReport(
        method=method, fc_hz=fc, fc_sigma_hz=sigma, fit=fit, n_blocks=64,
        band_hz=(1.0, 5000.0), spectrum_n_points=103,
        provenance={}, power_mw=power_mw,
    )


class TestPowerSweep:
    def test_matches_direct_line_fit(self):
        reports = [
            _report(fc=13.4e3 * p * 1e-3, sigma=4.0, power_mw=p)
            for p in (15.0, 25.0, 35.0, 45.0, 55.0)
        ]
        sweep = power_sweep(reports)
        direct = linear_origin_fit(
            [(p * 1e-3, r.fc_hz, r.fc_sigma_hz)
             for p, r in zip((15.0, 25.0, 35.0, 45.0, 55.0), reports)]
        )
        assert sweep.slope_hz_per_w == direct.slope
        assert sweep.slope_sigma_hz_per_w == direct.slope_sigma
        assert sweep.method is Method.MEAN

    def test_two_identical_powers_rejected(self):
        with pytest.raises(InsufficientPowers):
            power_sweep([_report(power_mw=25.0), _report(power_mw=25.0)])

    def test_mixed_methods_rejected(self):
        with pytest.raises(MixedMethods):
            power_sweep([_report(method=Method.MEAN, power_mw=15.0),
                         _report(method=Method.INST, power_mw=25.0)])

    def test_unlabeled_power_rejected(self):
        with pytest.raises(InsufficientPowers):
            power_sweep([_report(power_mw=None), _report(power_mw=25.0)])


class TestStiffness:
    def test_reference_bead_arithmetic(self):
        # independent hand evaluation: gamma = 6 pi eta a, kappa = 2 pi fc gamma
        eta, radius, fc = 1e-3, 0.575e-6, 737.9
        gamma = 6.0 * np.pi * eta * radius
        expected = 2.0 * np.pi * fc * gamma
        kappa, kappa_sigma = stiffness_from_corner(fc, 5.1, eta, radius)
        assert kappa == pytest.approx(expected, rel=1e-12)
        assert kappa == pytest.approx(5.02511895e-05, rel=1e-8)
        assert kappa_sigma == pytest.approx(2.0 * np.pi * 5.1 * gamma, rel=1e-12)

    def test_linearity_in_viscosity(self):
        k1, _ = stiffness_from_corner(700.0, 0.0, 1e-3, 5e-7)
        k2, _ = stiffness_from_corner(700.0, 0.0, 2e-3, 5e-7)
        assert k2 == pytest.approx(2.0 * k1, rel=1e-14)

    def test_rejects_nonpositive(self):
        with pytest.raises(NonPositiveInput):
            stiffness_from_corner(0.0, 1.0, 1e-3, 5e-7)
        with pytest.raises(NonPositiveInput):
            stiffness_from_corner(700.0, 1.0, 0.0, 5e-7)
        with pytest.raises(NonPositiveInput):
            stiffness_from_corner(700.0, -1.0, 1e-3, 5e-7)

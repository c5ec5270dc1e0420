"""End-to-end calibration methods and cross-method studies.

Five ways from a recording to a corner frequency:

==============  =======================  =====================
method          position proxy           spectral model
==============  =======================  =====================
inst            X(t) / S(t) per sample   AL + constant
mean            X(t) / <S>               AL + constant
noise           X(t) / <S>               AL + beta * dark PSD
knife           Xk(t) / S(t) per sample  AL + constant
single_channel  Xk(t) raw                two AL + constant
==============  =======================  =====================

Each runs: proxy -> Bartlett PSD -> band mask -> initial guess -> weighted
fit -> report. The knife method cuts below 30 Hz by default (mechanical
vibration of the knife); the others start at the first bin.

The dark reference of the noise method is itself a measured spectrum, so
its per-bin noise leaks into the fit as a regressor error and attenuates
the fitted dark scale slightly (order 1/n_blocks_dark). Averaging the
dark acquisition longer than the signal (``dark_n_blocks`` at the same
block length) suppresses this; the default keeps both at the same block
count.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DarkGridMismatch,
    ExperimentalMethodError,
    InsufficientPowers,
    MissingChannel,
    MixedMethods,
    NonPositiveInput,
)
from .fitting import FitOptions, FitResult, OriginFit, init_guess, linear_origin_fit, wls_fit
from .models import ModelKind, ModelSpec
from .signals import Recording, TimeSeries, deviation, mean, ratio_instantaneous, ratio_mean
from .spectral import Spectrum, band_mask, bartlett_psd, dark_psd

__all__ = [
    "Method",
    "CalibrationConfig",
    "ApproximationReport",
    "CalibrationReport",
    "SweepResult",
    "approximation_report",
    "calibrate",
    "power_sweep",
    "stiffness_from_corner",
]

KNIFE_DEFAULT_F_MIN_HZ = 30.0


class Method(str, enum.Enum):
    INST = "inst"
    MEAN = "mean"
    NOISE = "noise"
    KNIFE = "knife"
    SINGLE_CHANNEL = "single_channel"


_REQUIRED_CHANNELS = {
    Method.INST: ("X", "S"),
    Method.MEAN: ("X", "S"),
    Method.NOISE: ("X", "S"),
    Method.KNIFE: ("Xk", "S"),
    Method.SINGLE_CHANNEL: ("Xk",),
}

_DEFAULT_MODEL = {
    Method.INST: ModelKind.AL_CONST,
    Method.MEAN: ModelKind.AL_CONST,
    Method.NOISE: ModelKind.AL_DARK,
    Method.KNIFE: ModelKind.AL_CONST,
    Method.SINGLE_CHANNEL: ModelKind.TWO_AL_NOISE,
}


@dataclass(frozen=True)
class CalibrationConfig:
    """How to turn one recording into one corner-frequency estimate."""

    method: Method = Method.MEAN
    n_blocks: int = 64
    f_min_hz: float | None = None      # None: 30 Hz for knife, first bin otherwise
    f_max_hz: float | None = None      # None: Nyquist
    model_kind: ModelKind | None = None  # override the method's default model
    guard: float | None = None         # instantaneous-division guard
    dark_channel: str = "X"
    dark_n_blocks: int | None = None   # None: same as n_blocks
    weight_refine: bool = True
    fit_options: FitOptions = field(default_factory=FitOptions)
    allow_experimental: bool = False
    warn_level: float = 0.1
    fail_level: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.model_kind is not None:
            object.__setattr__(self, "model_kind", ModelKind(self.model_kind))


@dataclass(frozen=True)
class ApproximationReport:
    """Diagnostics for the small-fluctuation conditions behind the division.

    s_fluctuation : rms(S - <S>) / <S>, the monitor-channel fluctuation level.
    x_offset : |<X>| / <S>, beam centering on the difference channel.
    cross_term : <|dX * dS|> / <S>^2, size of the neglected product term.

    The first two carry PASS/WARN/FAIL flags; the cross term is reported
    unflagged.
    """

    s_fluctuation: float
    x_offset: float | None
    cross_term: float | None
    flags: dict[str, str]

    @property
    def worst(self) -> str:
        order = {"PASS": 0, "WARN": 1, "FAIL": 2}
        return max(self.flags.values(), key=order.get) if self.flags else "PASS"

    def to_dict(self) -> dict:
        return {
            "s_fluctuation": float(self.s_fluctuation),
            "x_offset": None if self.x_offset is None else float(self.x_offset),
            "cross_term": None if self.cross_term is None else float(self.cross_term),
            "flags": dict(self.flags),
        }


def _flag(value: float, warn: float, fail: float) -> str:
    if value > fail:
        return "FAIL"
    if value > warn:
        return "WARN"
    return "PASS"


def approximation_report(
    recording: Recording,
    num_channel: str = "X",
    den_channel: str = "S",
    warn_level: float = 0.1,
    fail_level: float = 0.3,
) -> ApproximationReport:
    """Check how well a recording satisfies the division approximations."""
    for name in (num_channel, den_channel):
        if name not in recording:
            raise MissingChannel(f"channel {name!r} required for diagnostics")
    x = recording[num_channel]
    s = recording[den_channel]
    s_mean = mean(s)
    if s_mean == 0.0:
        raise MissingChannel(f"channel {den_channel!r} has zero mean")
    ds = deviation(s).samples
    dx = deviation(x).samples
    s_fluct = float(np.sqrt(np.mean(ds**2))) / abs(s_mean)
    x_off = abs(mean(x)) / abs(s_mean)
    cross = float(np.mean(np.abs(dx * ds))) / s_mean**2
    flags = {
        "s_fluctuation": _flag(s_fluct, warn_level, fail_level),
        "x_offset": _flag(x_off, warn_level, fail_level),
    }
    return ApproximationReport(s_fluct, x_off, cross, flags)


@dataclass(frozen=True)
class CalibrationReport:
    """One calibration outcome: the corner frequency and how it was won."""

    method: Method
    fc_hz: float
    fc_sigma_hz: float
    fit: FitResult
    n_blocks: int
    band_hz: tuple[float, float]
    spectrum_n_points: int
    provenance: dict
    diagnostics: ApproximationReport | None = None
    power_mw: float | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "fc_hz": float(self.fc_hz),
            "fc_sigma_hz": float(self.fc_sigma_hz),
            "fit": self.fit.to_dict(),
            "n_blocks": int(self.n_blocks),
            "band_hz": [float(self.band_hz[0]), float(self.band_hz[1])],
            "spectrum_n_points": int(self.spectrum_n_points),
            "provenance": dict(self.provenance),
            "diagnostics": None if self.diagnostics is None else self.diagnostics.to_dict(),
            "power_mw": None if self.power_mw is None else float(self.power_mw),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationReport":
        diag = data.get("diagnostics")
        return cls(
            method=Method(data["method"]),
            fc_hz=float(data["fc_hz"]),
            fc_sigma_hz=float(data["fc_sigma_hz"]),
            fit=FitResult.from_dict(data["fit"]),
            n_blocks=int(data["n_blocks"]),
            band_hz=(float(data["band_hz"][0]), float(data["band_hz"][1])),
            spectrum_n_points=int(data["spectrum_n_points"]),
            provenance=dict(data.get("provenance", {})),
            diagnostics=None
            if diag is None
            else ApproximationReport(
                s_fluctuation=diag["s_fluctuation"],
                x_offset=diag.get("x_offset"),
                cross_term=diag.get("cross_term"),
                flags=dict(diag.get("flags", {})),
            ),
            power_mw=data.get("power_mw"),
        )


def _position_proxy(recording: Recording, config: CalibrationConfig) -> TimeSeries:
    method = config.method
    missing = [c for c in _REQUIRED_CHANNELS[method] if c not in recording]
    if missing:
        raise MissingChannel(
            f"method {method.value!r} needs channels {missing} "
            f"(recording has {sorted(recording.channels)})"
        )
    if method is Method.INST:
        return ratio_instantaneous(recording["X"], recording["S"], config.guard)
    if method is Method.MEAN or method is Method.NOISE:
        return ratio_mean(recording["X"], recording["S"])
    if method is Method.KNIFE:
        return ratio_instantaneous(recording["Xk"], recording["S"], config.guard)
    return recording["Xk"]


def _dark_reference(
    signal_spectrum: Spectrum,
    dark_recording: Recording,
    config: CalibrationConfig,
    band: tuple[float, float],
) -> Spectrum:
    if dark_recording.sample_rate_hz != signal_spectrum.source_rate_hz:
        raise DarkGridMismatch(
            f"dark recording rate {dark_recording.sample_rate_hz} Hz != "
            f"signal rate {signal_spectrum.source_rate_hz} Hz"
        )
    n_blocks = config.dark_n_blocks or config.n_blocks
    dark = dark_psd(dark_recording, config.dark_channel, n_blocks)
    dark = band_mask(dark, *band)
    if len(dark) != len(signal_spectrum) or not np.allclose(
        dark.freqs_hz, signal_spectrum.freqs_hz, rtol=1e-12, atol=0.0
    ):
        raise DarkGridMismatch(
            "dark spectrum grid does not match the signal spectrum "
            f"({len(dark)} vs {len(signal_spectrum)} bins); use the same "
            "block length at the same rate"
        )
    return dark


def calibrate(
    recording: Recording,
    config: CalibrationConfig,
    dark_recording: Recording | None = None,
) -> CalibrationReport:
    """Run one calibration method on a recording.

    The noise method requires ``dark_recording`` (laser off, same rate,
    same block length). Mean-value division by a constant does not move a
    Lorentzian's corner, so every method reports ``fc`` in Hz regardless
    of the proxy's scale.
    """
    method = config.method
    if method is Method.SINGLE_CHANNEL and not config.allow_experimental:
        raise ExperimentalMethodError(
            "single_channel is experimental; enable it explicitly"
        )
    if method is Method.NOISE and dark_recording is None:
        raise MissingChannel("noise method needs a dark recording")

    proxy = _position_proxy(recording, config)
    spectrum = bartlett_psd(proxy, config.n_blocks)
    f_min = config.f_min_hz
    if f_min is None:
        f_min = KNIFE_DEFAULT_F_MIN_HZ if method is Method.KNIFE else spectrum.freqs_hz[0]
    f_max = config.f_max_hz if config.f_max_hz is not None else spectrum.freqs_hz[-1]
    masked = band_mask(spectrum, f_min, f_max)

    kind = config.model_kind or _DEFAULT_MODEL[method]
    dark = None
    if kind is ModelKind.AL_DARK:
        if dark_recording is None:
            raise MissingChannel("al_dark model needs a dark recording")
        dark = _dark_reference(masked, dark_recording, config, masked.band)
    model = ModelSpec(kind, sample_rate_hz=recording.sample_rate_hz, dark=dark)

    options = config.fit_options
    if options.weight_refine != config.weight_refine:
        options = replace(options, weight_refine=config.weight_refine)
    fit = wls_fit(masked, model, init_guess(model, masked), options)

    fc_name = "fc_r" if kind is ModelKind.TWO_AL_NOISE else "fc"
    diagnostics = None
    if "X" in recording and "S" in recording:
        diagnostics = approximation_report(
            recording, warn_level=config.warn_level, fail_level=config.fail_level
        )
    elif method is Method.KNIFE and "S" in recording:
        s = recording["S"]
        ds = deviation(s).samples
        s_fluct = float(np.sqrt(np.mean(ds**2))) / abs(mean(s))
        diagnostics = ApproximationReport(
            s_fluctuation=s_fluct,
            x_offset=None,
            cross_term=None,
            flags={"s_fluctuation": _flag(s_fluct, config.warn_level, config.fail_level)},
        )

    provenance = {
        "device": recording.meta.device,
        "notes": recording.meta.notes,
        "n_samples": recording.n_samples,
        "sample_rate_hz": recording.sample_rate_hz,
    }
    power = recording.meta.power_mw
    return CalibrationReport(
        method=method,
        fc_hz=fit[fc_name],
        fc_sigma_hz=fit.sigma(fc_name),
        fit=fit,
        n_blocks=config.n_blocks,
        band_hz=masked.band,
        spectrum_n_points=len(masked),
        provenance=provenance,
        diagnostics=diagnostics,
        power_mw=power,
    )


@dataclass(frozen=True)
class SweepResult:
    """Corner frequency vs trapping power, fitted through the origin."""

    method: Method
    slope_hz_per_w: float
    slope_sigma_hz_per_w: float
    chi2: float
    n_points: int
    points: tuple[tuple[float, float, float], ...]  # (power_w, fc, fc_sigma)

    @property
    def fit(self) -> OriginFit:
        return OriginFit(self.slope_hz_per_w, self.slope_sigma_hz_per_w,
                         self.chi2, self.n_points)

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "slope_hz_per_w": float(self.slope_hz_per_w),
            "slope_sigma_hz_per_w": float(self.slope_sigma_hz_per_w),
            "chi2": float(self.chi2),
            "n_points": int(self.n_points),
            "points": [[float(v) for v in p] for p in self.points],
        }


def power_sweep(reports: list[CalibrationReport]) -> SweepResult:
    """Fit fc = slope * power over calibrations at different trap powers."""
    if not reports:
        raise InsufficientPowers("no reports given")
    methods = {r.method for r in reports}
    if len(methods) != 1:
        raise MixedMethods(f"reports mix methods {sorted(m.value for m in methods)}")
    for r in reports:
        if not r.fit.converged:
            raise ValueError("all reports must come from converged fits")
        if r.power_mw is None:
            raise InsufficientPowers("every report needs a power_mw label")
    distinct = {float(r.power_mw) for r in reports}
    if len(distinct) < 2:
        raise InsufficientPowers(
            f"need >= 2 distinct powers, got {sorted(distinct)}"
        )
    points = tuple(
        (r.power_mw * 1e-3, r.fc_hz, r.fc_sigma_hz) for r in reports
    )
    fit = linear_origin_fit(points)
    return SweepResult(
        method=next(iter(methods)),
        slope_hz_per_w=fit.slope,
        slope_sigma_hz_per_w=fit.slope_sigma,
        chi2=fit.chi2,
        n_points=fit.n_points,
        points=points,
    )


def stiffness_from_corner(
    fc_hz: float,
    fc_sigma_hz: float,
    viscosity_pa_s: float,
    bead_radius_m: float,
) -> tuple[float, float]:
    """Convert a corner frequency to a spring constant, kappa = 2 pi fc gamma.

    Stokes drag gamma = 6 pi eta a. Only a convenience: the result is as
    good as the viscosity and radius fed in, which is why calibrations
    report fc and leave this step explicit.
    """
    for name, value in (
        ("fc_hz", fc_hz),
        ("viscosity_pa_s", viscosity_pa_s),
        ("bead_radius_m", bead_radius_m),
    ):
        if not value > 0:
            raise NonPositiveInput(f"{name} must be positive, got {value}")
    if fc_sigma_hz < 0:
        raise NonPositiveInput("fc_sigma_hz must be nonnegative")
    gamma = 6.0 * np.pi * viscosity_pa_s * bead_radius_m
    kappa = 2.0 * np.pi * fc_hz * gamma
    kappa_sigma = 2.0 * np.pi * fc_sigma_hz * gamma
    return float(kappa), float(kappa_sigma)

"""Optical-tweezer calibration from forward-scattering power spectra.

Estimates a trap's corner frequency by fitting aliased-Lorentzian spectral
models, with white or measured (dark) electronic-noise terms, to
Bartlett-averaged power spectra of detector-channel ratios, and validates
the whole chain against a built-in stochastic simulator of the trapped
bead and detection electronics.
"""

from .errors import TrapcalError, InputError, NumericalError
from .fitting import (
    FitOptions,
    FitResult,
    ModelComparison,
    OriginFit,
    compare_models,
    init_guess,
    linear_origin_fit,
    wls_fit,
)
from .models import (
    ModelKind,
    ModelSpec,
    aliased_lorentzian_eval,
    lorentzian_eval,
    model_eval,
    model_gradient,
    param_names,
)
from .pipelines import (
    ApproximationReport,
    CalibrationConfig,
    CalibrationReport,
    Method,
    SweepResult,
    approximation_report,
    calibrate,
    power_sweep,
    stiffness_from_corner,
)
from .signals import (
    Recording,
    RecordingMeta,
    TimeSeries,
    deviation,
    load_recording,
    mean,
    ratio_instantaneous,
    ratio_mean,
    save_recording,
)
from .simulator import (
    DetectorParams,
    NoiseSpec,
    Scenario,
    TrapParams,
    daq_noise_scenario,
    default_scenario,
    noise_psd,
    simulate_ou,
    synthesize_dark_recording,
    synthesize_noise,
    synthesize_recording,
)
from .spectral import Spectrum, band_mask, bartlett_psd, dark_psd, periodogram

__version__ = "0.1.0"

__all__ = [
    "TrapcalError", "InputError", "NumericalError",
    "TimeSeries", "Recording", "RecordingMeta",
    "mean", "deviation", "ratio_instantaneous", "ratio_mean",
    "load_recording", "save_recording",
    "TrapParams", "DetectorParams", "NoiseSpec", "Scenario",
    "noise_psd", "simulate_ou", "synthesize_noise",
    "synthesize_recording", "synthesize_dark_recording",
    "default_scenario", "daq_noise_scenario",
    "Spectrum", "periodogram", "bartlett_psd", "dark_psd", "band_mask",
    "ModelKind", "ModelSpec", "param_names",
    "lorentzian_eval", "aliased_lorentzian_eval", "model_eval", "model_gradient",
    "FitOptions", "FitResult", "ModelComparison", "OriginFit",
    "init_guess", "wls_fit", "compare_models", "linear_origin_fit",
    "Method", "CalibrationConfig", "CalibrationReport", "ApproximationReport",
    "SweepResult", "approximation_report", "calibrate", "power_sweep",
    "stiffness_from_corner",
]

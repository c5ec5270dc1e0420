"""Spectral model family for trapped-bead power spectra.

The position of an overdamped bead in a harmonic trap is an
Ornstein-Uhlenbeck process; its continuous-time PSD is a Lorentzian

    L(f) = D / (pi^2 (fc^2 + f^2)),   integral over (0, inf) = D / (2 pi fc)

(one-sided convention: the PSD integrates to the variance). Discrete
sampling folds the Lorentzian across multiples of the sample rate, giving
the aliased Lorentzian (AL). With dt = 1/fs, c = exp(-2 pi fc dt) and
v = D / (2 pi fc),

    AL(f) = 2 dt v (1 - c^2) / (1 + c^2 - 2 c cos(2 pi f dt)),

which integrates to v over (0, fs/2]. Composite kinds add the detection
chain: a constant floor (white electronics), a scaled measured dark
spectrum (colored electronics), or a second AL (axial motion leaking into
a single channel).

All evaluations clamp parameters nonnegative, so optimizers may probe
slightly invalid iterates without leaving the model's domain.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, UnknownKind
from .spectral import Spectrum

__all__ = [
    "ModelKind",
    "ModelSpec",
    "param_names",
    "lorentzian_eval",
    "aliased_lorentzian_eval",
    "model_eval",
    "model_gradient",
]

# Evaluation floor for corner frequencies: keeps 1/fc finite under clamping
# without perturbing any realistic value.
_FC_FLOOR = 1e-200


class ModelKind(str, enum.Enum):
    LORENTZIAN = "lorentzian"
    AL = "al"
    AL_CONST = "al_const"
    AL_DARK = "al_dark"
    TWO_AL_NOISE = "two_al_noise"


_PARAM_NAMES: dict[ModelKind, tuple[str, ...]] = {
    ModelKind.LORENTZIAN: ("D", "fc"),
    ModelKind.AL: ("D", "fc"),
    ModelKind.AL_CONST: ("D", "fc", "c0"),
    ModelKind.AL_DARK: ("D", "fc", "beta"),
    ModelKind.TWO_AL_NOISE: ("D_r", "fc_r", "D_z", "fc_z", "c0"),
}


def param_names(kind: ModelKind | str) -> tuple[str, ...]:
    return _PARAM_NAMES[ModelKind(kind)]


@dataclass(frozen=True)
class ModelSpec:
    """Declarative spectral model: a kind tag plus evaluation context.

    ``sample_rate_hz`` matters for the aliased kinds; ``dark`` is the
    reference dark spectrum for AL_DARK. Dark values are taken at exactly
    matching grid points unless ``interpolate_dark`` is set, in which case
    power is interpolated linearly.
    """

    kind: ModelKind
    sample_rate_hz: float | None = None
    dark: Spectrum | None = None
    interpolate_dark: bool = False

    def __post_init__(self):
        try:
            kind = ModelKind(self.kind)
        except ValueError:
            raise UnknownKind(f"unknown model kind {self.kind!r}") from None
        object.__setattr__(self, "kind", kind)
        if kind is not ModelKind.LORENTZIAN:
            if self.sample_rate_hz is None or self.sample_rate_hz <= 0:
                raise ValueError(f"{kind.value} model needs a positive sample_rate_hz")
        if kind is ModelKind.AL_DARK and self.dark is None:
            raise ValueError("al_dark model needs a dark spectrum")

    @property
    def names(self) -> tuple[str, ...]:
        return _PARAM_NAMES[self.kind]

    @property
    def n_params(self) -> int:
        return len(self.names)

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind.value,
            "param_names": list(self.names),
            "sample_rate_hz": self.sample_rate_hz,
        }
        if self.dark is not None:
            out["dark"] = {
                "n_points": len(self.dark),
                "n_blocks": self.dark.n_blocks,
                "band": [self.dark.band[0], self.dark.band[1]],
            }
        return out

    @classmethod
    def from_dict(cls, data: dict, dark: Spectrum | None = None) -> "ModelSpec":
        return cls(
            kind=ModelKind(data["kind"]),
            sample_rate_hz=data.get("sample_rate_hz"),
            dark=dark,
        )


def lorentzian_eval(f, D: float, fc: float):
    """Continuous-time one-sided Lorentzian, D / (pi^2 (fc^2 + f^2))."""
    if fc <= 0:
        raise ValueError("fc must be positive")
    f = np.asarray(f, dtype=np.float64)
    return D / (np.pi**2 * (fc**2 + f * f))


def _al_pieces(f, fc: float, sample_rate_hz: float):
    """Shared AL factors: u = 1 - c computed cancellation-free."""
    dt = 1.0 / sample_rate_hz
    u = -np.expm1(-2.0 * np.pi * fc * dt)          # 1 - exp(-2 pi fc dt)
    sin2 = np.sin(np.pi * f * dt) ** 2
    den = u * u + 4.0 * (1.0 - u) * sin2
    return dt, u, sin2, den


def _al_shape(f, fc: float, sample_rate_hz: float):
    """AL(f) for D = 1. Multiply by D to get the spectrum."""
    dt, u, _, den = _al_pieces(f, fc, sample_rate_hz)
    # (dt / (pi fc)) * (1 - c^2) / den, with 1 - c^2 = u (2 - u)
    return (dt / (np.pi * fc)) * u * (2.0 - u) / den


def aliased_lorentzian_eval(f, D: float, fc: float, sample_rate_hz: float):
    """Aliased Lorentzian: PSD of the discretely sampled trap motion.

    Equals the Lorentzian summed over all aliases f + n * fs. Symmetric
    about fs/2 and periodic in fs; strictly decreasing on (0, fs/2].
    """
    if fc <= 0:
        raise ValueError("fc must be positive")
    if sample_rate_hz <= 0:
        raise ValueError("sample_rate_hz must be positive")
    f = np.asarray(f, dtype=np.float64)
    return D * _al_shape(f, fc, sample_rate_hz)


def _al_shape_grad_fc(f, D: float, fc: float, sample_rate_hz: float):
    """d AL / d fc via the chain rule through c = exp(-2 pi fc dt)."""
    dt, u, sin2, den = _al_pieces(f, fc, sample_rate_hz)
    c = 1.0 - u
    G = u * (2.0 - u) / den                      # (1 - c^2) / den
    # dG/dc = 2 ((1 + c^2) cos - 2 c) / den^2; the bracket rewritten
    # cancellation-free as u^2 - 2 (1 + c^2) sin^2(pi f dt).
    dG_dc = 2.0 * (u * u - 2.0 * (1.0 + c * c) * sin2) / (den * den)
    dc_dfc = -2.0 * np.pi * dt * c
    return D * (dt / np.pi) * (-G / fc**2 + dG_dc * dc_dfc / fc)


def _clamped(kind: ModelKind, params) -> np.ndarray:
    p = np.maximum(np.asarray(params, dtype=np.float64), 0.0)
    for i, name in enumerate(_PARAM_NAMES[kind]):
        if name.startswith("fc"):
            p[i] = max(p[i], _FC_FLOOR)
    return p


def _dark_values(spec: ModelSpec, freqs: np.ndarray) -> np.ndarray:
    dark = spec.dark
    idx = np.searchsorted(dark.freqs_hz, freqs)
    idx = np.clip(idx, 0, len(dark) - 1)
    # a grid point may sit just left of its match after float round-off
    left = np.clip(idx - 1, 0, len(dark) - 1)
    use_left = np.abs(dark.freqs_hz[left] - freqs) < np.abs(dark.freqs_hz[idx] - freqs)
    idx = np.where(use_left, left, idx)
    matched = np.isclose(dark.freqs_hz[idx], freqs, rtol=1e-9, atol=1e-12)
    if np.all(matched):
        return dark.power[idx]
    if not spec.interpolate_dark:
        raise GridMismatch(
            f"{int(np.count_nonzero(~matched))} evaluation frequencies have no "
            "matching dark-spectrum bin (interpolation disabled)"
        )
    if freqs[0] < dark.freqs_hz[0] - 1e-12 or freqs[-1] > dark.freqs_hz[-1] + 1e-12:
        raise GridMismatch("evaluation grid extends beyond the dark spectrum")
    return np.interp(freqs, dark.freqs_hz, dark.power)


def model_eval(spec: ModelSpec, params, freqs) -> np.ndarray:
    """Evaluate the model kind at the given frequencies.

    ``params`` follows ``spec.names``; values are clamped nonnegative
    before evaluation.
    """
    kind = spec.kind
    f = np.asarray(freqs, dtype=np.float64)
    p = _clamped(kind, params)
    if p.shape != (spec.n_params,):
        raise ValueError(f"{kind.value} expects {spec.n_params} parameters")
    if kind is ModelKind.LORENTZIAN:
        D, fc = p
        return D / (np.pi**2 * (fc**2 + f * f))
    if kind is ModelKind.AL:
        D, fc = p
        return D * _al_shape(f, fc, spec.sample_rate_hz)
    if kind is ModelKind.AL_CONST:
        D, fc, c0 = p
        return D * _al_shape(f, fc, spec.sample_rate_hz) + c0
    if kind is ModelKind.AL_DARK:
        D, fc, beta = p
        return D * _al_shape(f, fc, spec.sample_rate_hz) + beta * _dark_values(spec, f)
    if kind is ModelKind.TWO_AL_NOISE:
        D_r, fc_r, D_z, fc_z, c0 = p
        return (
            D_r * _al_shape(f, fc_r, spec.sample_rate_hz)
            + D_z * _al_shape(f, fc_z, spec.sample_rate_hz)
            + c0
        )
    raise UnknownKind(f"unknown model kind {kind!r}")


def model_gradient(spec: ModelSpec, params, freqs) -> np.ndarray:
    """Analytic partials dP/dtheta, shaped (n_params, n_freqs)."""
    kind = spec.kind
    f = np.asarray(freqs, dtype=np.float64)
    p = _clamped(kind, params)
    if p.shape != (spec.n_params,):
        raise ValueError(f"{kind.value} expects {spec.n_params} parameters")
    fs = spec.sample_rate_hz
    if kind is ModelKind.LORENTZIAN:
        D, fc = p
        base = 1.0 / (np.pi**2 * (fc**2 + f * f))
        return np.stack([base, -2.0 * fc * D * base / (fc**2 + f * f)])
    if kind is ModelKind.AL:
        D, fc = p
        return np.stack([
            _al_shape(f, fc, fs),
            _al_shape_grad_fc(f, D, fc, fs),
        ])
    if kind is ModelKind.AL_CONST:
        D, fc, _ = p
        return np.stack([
            _al_shape(f, fc, fs),
            _al_shape_grad_fc(f, D, fc, fs),
            np.ones_like(f),
        ])
    if kind is ModelKind.AL_DARK:
        D, fc, _ = p
        return np.stack([
            _al_shape(f, fc, fs),
            _al_shape_grad_fc(f, D, fc, fs),
            _dark_values(spec, f),
        ])
    if kind is ModelKind.TWO_AL_NOISE:
        D_r, fc_r, D_z, fc_z, _ = p
        return np.stack([
            _al_shape(f, fc_r, fs),
            _al_shape_grad_fc(f, D_r, fc_r, fs),
            _al_shape(f, fc_z, fs),
            _al_shape_grad_fc(f, D_z, fc_z, fs),
            np.ones_like(f),
        ])
    raise UnknownKind(f"unknown model kind {kind!r}")

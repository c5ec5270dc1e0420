"""Stochastic simulator of the trapped bead and its detection chain.

Ground truth for every end-to-end test in the toolkit: bead motion is an
exactly discretized Ornstein-Uhlenbeck process (no timestep bias at any
corner frequency), detector channels follow the multiplicative forward
model

    P(t)  = mean_power_w * (1 + axial_power_coupling * z_p(t))
    X(t)  = alpha_x * x_p(t) * P(t) + eta_X(t)
    S(t)  = alpha_s * P(t)          + eta_S(t)
    Xk(t) = (alpha_0 + alpha_knife_x * x_p(t)) * P(t) + eta_Xk(t)

and electronic noise is synthesized in the frequency domain against a
closed-form one-sided PSD (white + 1/f^gamma + mains lines).

Every stream is seeded independently and reproducibly from a master seed,
so identical seeds give bit-identical recordings.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .errors import SpecError
from .signals import Recording, RecordingMeta, TimeSeries

__all__ = [
    "TrapParams",
    "DetectorParams",
    "NoiseSpec",
    "Scenario",
    "noise_psd",
    "simulate_ou",
    "synthesize_noise",
    "synthesize_recording",
    "synthesize_dark_recording",
    "default_scenario",
    "daq_noise_scenario",
]

# Fixed sub-stream indices for deriving child seeds from a master seed.
_STREAM_RADIAL = 0
_STREAM_AXIAL = 1
_STREAM_NOISE_X = 2
_STREAM_NOISE_S = 3
_STREAM_NOISE_XK = 4


@dataclass(frozen=True)
class TrapParams:
    """Single-axis trap parameters: corner frequency and diffusion."""

    fc_hz: float
    diffusion: float  # m^2/s

    def __post_init__(self):
        if not self.fc_hz > 0:
            raise ValueError("fc_hz must be positive")
        if not self.diffusion > 0:
            raise ValueError("diffusion must be positive")

    @property
    def variance(self) -> float:
        """Stationary position variance D / (2 pi fc)."""
        return self.diffusion / (2.0 * np.pi * self.fc_hz)


@dataclass(frozen=True)
class DetectorParams:
    """Gains of the detection chain.

    alpha_x, alpha_knife_x : V/(m W), position sensitivity of the PS
    detector's difference channel and of the knife-edge channel.
    alpha_s, alpha_0 : V/W, power sensitivity of the sum channel and the
    knife channel's offset (light passing the knife at rest).
    axial_power_coupling : 1/m, relative modulation of collected power
    per meter of axial displacement (linearized).
    """

    alpha_x: float = 4.4e9
    alpha_s: float = 200.0
    alpha_0: float = 100.0
    alpha_knife_x: float = 4.4e8
    mean_power_w: float = 5e-3
    axial_power_coupling: float = 0.0

    def __post_init__(self):
        if not self.alpha_s > 0:
            raise ValueError("alpha_s must be positive")
        if not self.mean_power_w > 0:
            raise ValueError("mean_power_w must be positive")


@dataclass(frozen=True)
class NoiseSpec:
    """Closed-form one-sided PSD of an electronic noise stream.

    N(f) = white_level + pink_level / f^pink_exponent
           + sum of Lorentzian lines height / (1 + ((f - center)/width)^2)
    """

    white_level: float = 0.0  # V^2/Hz
    pink_level: float = 0.0   # V^2/Hz at 1 Hz
    pink_exponent: float = 1.0
    mains_lines: tuple[tuple[float, float, float], ...] = ()  # (center, width, height)

    def __post_init__(self):
        if self.white_level < 0 or self.pink_level < 0:
            raise ValueError("noise levels must be nonnegative")
        if not 0.0 < self.pink_exponent <= 2.0:
            raise ValueError("pink_exponent must be in (0, 2]")
        lines = tuple((float(c), float(w), float(h)) for c, w, h in self.mains_lines)
        for center, width, height in lines:
            if width <= 0 or height < 0:
                raise ValueError("line widths must be > 0 and heights >= 0")
        object.__setattr__(self, "mains_lines", lines)

    @property
    def is_zero(self) -> bool:
        return (
            self.white_level == 0.0
            and self.pink_level == 0.0
            and all(h == 0.0 for _, _, h in self.mains_lines)
        )


def noise_psd(spec: NoiseSpec, freqs) -> np.ndarray:
    """Evaluate the closed-form noise PSD on a frequency grid (f > 0)."""
    f = np.asarray(freqs, dtype=np.float64)
    psd = np.full_like(f, spec.white_level)
    if spec.pink_level > 0.0:
        psd += spec.pink_level / f**spec.pink_exponent
    for center, width, height in spec.mains_lines:
        psd += height / (1.0 + ((f - center) / width) ** 2)
    return psd


def _rng(seed, stream: int | None = None) -> np.random.Generator:
    if stream is None:
        return np.random.default_rng(seed)
    return np.random.default_rng([int(seed), int(stream)])


def simulate_ou(
    trap: TrapParams,
    sample_rate_hz: float,
    n_samples: int,
    seed,
) -> TimeSeries:
    """Exact discretization of trapped-bead motion along one axis.

    x[k+1] = c x[k] + s1 xi[k] with c = exp(-2 pi fc dt) and
    s1^2 = (1 - c^2) D / (2 pi fc); x[0] is drawn from the stationary
    distribution, so the series is stationary from the first sample and
    its PSD is exactly the aliased Lorentzian at any fc below Nyquist.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    dt = 1.0 / float(sample_rate_hz)
    c = np.exp(-2.0 * np.pi * trap.fc_hz * dt)
    v = trap.variance
    s1 = np.sqrt((1.0 - c * c) * v)
    rng = _rng(seed)
    x0 = np.sqrt(v) * rng.standard_normal()
    noise = s1 * rng.standard_normal(n_samples - 1)
    tail, _ = lfilter([1.0], [1.0, -c], noise, zi=np.array([c * x0]))
    out = np.empty(n_samples)
    out[0] = x0
    out[1:] = tail
    return TimeSeries(out, sample_rate_hz)


def synthesize_noise(
    spec: NoiseSpec,
    sample_rate_hz: float,
    n_samples: int,
    seed,
) -> TimeSeries:
    """Gaussian noise whose expected one-sided PSD is ``noise_psd(spec)``.

    Built by frequency-domain shaping: independent complex Gaussian
    Fourier coefficients with variance matched to the target PSD, inverse
    transformed to a real series. Zero mean by construction (DC bin left
    empty).
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    if spec.is_zero:
        raise SpecError("noise spec is identically zero")
    n = int(n_samples)
    fs = float(sample_rate_hz)
    n_half = n // 2
    freqs = np.arange(1, n_half + 1) * (fs / n)
    target = noise_psd(spec, freqs)
    rng = _rng(seed)
    coeffs = np.zeros(n_half + 1, dtype=np.complex128)
    if n % 2 == 0:
        # interior bins get complex coefficients, Nyquist is real
        interior = target[:-1]
        re = rng.standard_normal(n_half - 1)
        im = rng.standard_normal(n_half - 1)
        coeffs[1:n_half] = np.sqrt(interior * n * fs / 4.0) * (re + 1j * im)
        coeffs[n_half] = np.sqrt(target[-1] * n * fs) * rng.standard_normal()
    else:
        re = rng.standard_normal(n_half)
        im = rng.standard_normal(n_half)
        coeffs[1:] = np.sqrt(target * n * fs / 4.0) * (re + 1j * im)
    samples = np.fft.irfft(coeffs, n=n)
    return TimeSeries(samples, fs)


def _maybe_noise(spec: NoiseSpec | None, fs, n, seed, stream) -> np.ndarray:
    if spec is None or spec.is_zero:
        return np.zeros(n)
    return synthesize_noise(spec, fs, n, [int(seed), int(stream)]).samples


def synthesize_recording(
    radial: TrapParams,
    axial: TrapParams | None,
    det: DetectorParams,
    noise_x: NoiseSpec | None,
    noise_s: NoiseSpec | None,
    noise_xk: NoiseSpec | None,
    sample_rate_hz: float,
    n_samples: int,
    seed,
    meta: RecordingMeta | None = None,
) -> Recording:
    """Simulate a synchronized X / S / Xk acquisition.

    Radial and axial bead motion are independent OU paths; ``axial=None``
    (or a None noise spec) freezes that contribution at zero. Sub-streams
    derive from the master seed by fixed offsets, so recordings are
    reproducible and channels' noises are mutually independent.
    """
    fs = float(sample_rate_hz)
    n = int(n_samples)
    x_p = simulate_ou(radial, fs, n, [int(seed), _STREAM_RADIAL]).samples
    if axial is not None:
        z_p = simulate_ou(axial, fs, n, [int(seed), _STREAM_AXIAL]).samples
    else:
        z_p = np.zeros(n)
    power = det.mean_power_w * (1.0 + det.axial_power_coupling * z_p)
    eta_x = _maybe_noise(noise_x, fs, n, seed, _STREAM_NOISE_X)
    eta_s = _maybe_noise(noise_s, fs, n, seed, _STREAM_NOISE_S)
    eta_xk = _maybe_noise(noise_xk, fs, n, seed, _STREAM_NOISE_XK)
    x = det.alpha_x * x_p * power + eta_x
    s = det.alpha_s * power + eta_s
    xk = (det.alpha_0 + det.alpha_knife_x * x_p) * power + eta_xk
    if meta is None:
        meta = RecordingMeta(device="simulator", notes=f"seed={seed}")
    return Recording(
        {
            "X": TimeSeries(x, fs),
            "S": TimeSeries(s, fs),
            "Xk": TimeSeries(xk, fs),
        },
        meta,
    )


def synthesize_dark_recording(
    noise_x: NoiseSpec | None,
    noise_s: NoiseSpec | None,
    noise_xk: NoiseSpec | None,
    sample_rate_hz: float,
    n_samples: int,
    seed,
    meta: RecordingMeta | None = None,
) -> Recording:
    """Laser-off acquisition: every channel is its electronic noise alone.

    Channels with a zero (or absent) noise spec are omitted; an exactly
    zero trace carries no spectral information.
    """
    fs = float(sample_rate_hz)
    n = int(n_samples)
    channels = {}
    for name, spec, stream in (
        ("X", noise_x, _STREAM_NOISE_X),
        ("S", noise_s, _STREAM_NOISE_S),
        ("Xk", noise_xk, _STREAM_NOISE_XK),
    ):
        if spec is not None and not spec.is_zero:
            channels[name] = synthesize_noise(spec, fs, n, [int(seed), stream])
    if not channels:
        raise SpecError("all noise specs are zero; dark recording would be empty")
    if meta is None:
        meta = RecordingMeta(device="simulator", notes=f"dark, seed={seed}")
    return Recording(channels, meta)


# -- scenario files ------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    """Complete description of one simulated acquisition."""

    sample_rate_hz: float
    n_samples: int
    seed: int
    radial: TrapParams
    axial: TrapParams | None
    detector: DetectorParams
    noise_x: NoiseSpec | None
    noise_s: NoiseSpec | None
    noise_xk: NoiseSpec | None
    power_mw: float | None = None

    def run(self) -> Recording:
        meta = RecordingMeta(
            device="simulator", power_mw=self.power_mw, notes=f"seed={self.seed}"
        )
        return synthesize_recording(
            self.radial, self.axial, self.detector,
            self.noise_x, self.noise_s, self.noise_xk,
            self.sample_rate_hz, self.n_samples, self.seed, meta,
        )

    def run_dark(self, seed_offset: int = 1_000_003) -> Recording:
        """Matching laser-off acquisition (independent noise realization)."""
        return synthesize_dark_recording(
            self.noise_x, self.noise_s, self.noise_xk,
            self.sample_rate_hz, self.n_samples, self.seed + seed_offset,
        )

    def to_dict(self) -> dict:
        def spec_dict(s):
            return None if s is None else asdict(s)

        return {
            "sample_rate_hz": self.sample_rate_hz,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "power_mw": self.power_mw,
            "trap": {
                "radial": asdict(self.radial),
                "axial": None if self.axial is None else asdict(self.axial),
            },
            "detector": asdict(self.detector),
            "noise_x": spec_dict(self.noise_x),
            "noise_s": spec_dict(self.noise_s),
            "noise_xk": spec_dict(self.noise_xk),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        def noise(key):
            block = data.get(key)
            if block is None:
                return None
            block = dict(block)
            lines = tuple(tuple(line) for line in block.pop("mains_lines", ()))
            return NoiseSpec(mains_lines=lines, **block)

        trap = data["trap"]
        axial = trap.get("axial")
        return cls(
            sample_rate_hz=float(data["sample_rate_hz"]),
            n_samples=int(data["n_samples"]),
            seed=int(data.get("seed", 0)),
            radial=TrapParams(**trap["radial"]),
            axial=None if axial is None else TrapParams(**axial),
            detector=DetectorParams(**data["detector"]),
            noise_x=noise("noise_x"),
            noise_s=noise("noise_s"),
            noise_xk=noise("noise_xk"),
            power_mw=data.get("power_mw"),
        )

    @classmethod
    def from_json(cls, path: str) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def default_scenario(
    seed: int = 1,
    n_samples: int = 2**20,
    fc_hz: float = 737.9,
    power_mw: float = 55.0,
) -> Scenario:
    """Reference acquisition: white detector noise, 2% power fluctuation.

    Gains are sized so <S> = 1 V, the X channel swings ~0.2 V RMS, and the
    knife channel has a deliberately small position-to-offset gain ratio,
    so its raw PSD is visibly two-component, as a real knife detector's is.
    """
    std_z = np.sqrt(TrapParams(220.0, 2.0e-13).variance)
    return Scenario(
        sample_rate_hz=10_000.0,
        n_samples=n_samples,
        seed=seed,
        radial=TrapParams(fc_hz=fc_hz, diffusion=3.8e-13),
        axial=TrapParams(fc_hz=220.0, diffusion=2.0e-13),
        detector=DetectorParams(
            alpha_x=4.4e9,
            alpha_s=200.0,
            alpha_0=100.0,
            alpha_knife_x=4.4e8,
            mean_power_w=5e-3,
            axial_power_coupling=0.02 / std_z,
        ),
        noise_x=NoiseSpec(white_level=1e-7),
        noise_s=NoiseSpec(white_level=2e-8),
        noise_xk=NoiseSpec(white_level=2e-9),
        power_mw=power_mw,
    )


def daq_noise_scenario(seed: int = 1, n_samples: int = 2**20) -> Scenario:
    """Default scenario with strongly colored X-channel noise.

    Mimics an inexpensive acquisition board: a broad 1/f^1.2 rise that
    overtakes the bead spectrum at low frequency, two mains lines, and an
    elevated white floor.
    """
    base = default_scenario(seed=seed, n_samples=n_samples)
    colored = NoiseSpec(
        white_level=4e-7,
        pink_level=4.5e-2,
        pink_exponent=1.25,
        mains_lines=((60.0, 8.0, 6e-3), (300.0, 10.0, 3e-3)),
    )
    return replace(base, noise_x=colored)

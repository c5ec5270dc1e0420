"""One-sided PSD estimation with per-bin standard errors.

Convention lock used across the toolkit: the one-sided PSD integrates to
the signal variance, ``sum(P * df) == var`` exactly for a single
mean-removed rectangular-window periodogram. Block averaging (Bartlett)
supplies the per-bin errors ``sigma = P / sqrt(n_blocks)`` that the
weighted spectral fits rely on; rectangular non-overlapping blocks keep
that error formula exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BadBlockCount, EmptyBand, ParseError, TooShort, UnknownChannel
from .signals import Recording, TimeSeries

__all__ = [
    "Spectrum",
    "periodogram",
    "bartlett_psd",
    "dark_psd",
    "band_mask",
    "save_spectrum",
    "load_spectrum",
]


@dataclass(frozen=True)
class Spectrum:
    """One-sided PSD estimate on a DC-free frequency grid.

    Attributes
    ----------
    freqs_hz : ndarray
        Strictly increasing grid in (0, source_rate_hz / 2].
    power : ndarray
        PSD values, unit^2 / Hz.
    sigma : ndarray
        Per-bin standard errors (equal to ``power`` for a 1-block estimate).
    n_blocks : int
        Number of averaged periodograms.
    source_rate_hz : float
        Sample rate of the originating series.
    band : tuple
        (f_min, f_max) currently retained.
    meta : dict
        Free-form tags (e.g. ``{"kind": "dark", "channel": "X"}``).
    """

    freqs_hz: np.ndarray
    power: np.ndarray
    sigma: np.ndarray
    n_blocks: int
    source_rate_hz: float
    band: tuple[float, float]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = np.asarray(self.freqs_hz, dtype=np.float64)
        p = np.asarray(self.power, dtype=np.float64)
        s = np.asarray(self.sigma, dtype=np.float64)
        if not (f.shape == p.shape == s.shape) or f.ndim != 1 or f.size == 0:
            raise ValueError("freqs, power, sigma must be equal-length 1-D arrays")
        if f[0] <= 0.0 or f[-1] > self.source_rate_hz / 2 + 1e-9:
            raise ValueError("frequency grid must lie in (0, rate/2]")
        if np.any(np.diff(f) <= 0.0):
            raise ValueError("frequency grid must be strictly increasing")
        if np.any(p < 0.0):
            raise ValueError("power must be nonnegative")
        for name, arr in (("freqs_hz", f), ("power", p), ("sigma", s)):
            arr = arr.copy() if arr.base is not None or arr.flags.writeable else arr
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "band", (float(self.band[0]), float(self.band[1])))

    def __len__(self) -> int:
        return self.freqs_hz.size

    @property
    def df_hz(self) -> float:
        """Grid spacing (uniform for the estimators in this module)."""
        if self.freqs_hz.size > 1:
            return float(self.freqs_hz[1] - self.freqs_hz[0])
        return float(self.freqs_hz[0])

    def integral(self) -> float:
        """sum(power) * df, the variance captured by the retained band."""
        return float(np.sum(self.power) * self.df_hz)


def _one_sided(block: np.ndarray, sample_rate_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean-removed rectangular-window one-sided periodogram of each row.

    Returns (freqs, power) where power has one row per input row. DC is
    dropped; for even block length the Nyquist bin keeps factor 1 where the
    interior bins carry factor 2, so the band integral equals the variance.
    """
    n = block.shape[-1]
    dt = 1.0 / sample_rate_hz
    demeaned = block - block.mean(axis=-1, keepdims=True)
    coeffs = np.fft.rfft(demeaned, axis=-1)
    raw = (np.abs(coeffs) ** 2) * (2.0 * dt / n)
    if n % 2 == 0:
        power = raw[..., 1:]
        power[..., -1] *= 0.5
    else:
        power = raw[..., 1:]
    freqs = np.arange(1, power.shape[-1] + 1) * (sample_rate_hz / n)
    return freqs, power


def periodogram(series: TimeSeries) -> Spectrum:
    """Single-block one-sided periodogram.

    With one block the estimate has ~100% relative error per bin, so
    ``sigma`` is set equal to ``power``.
    """
    n = len(series)
    if n < 4:
        raise TooShort(f"periodogram needs >= 4 samples, got {n}")
    freqs, power = _one_sided(series.samples[np.newaxis, :], series.sample_rate_hz)
    power = power[0]
    return Spectrum(
        freqs_hz=freqs,
        power=power,
        sigma=power.copy(),
        n_blocks=1,
        source_rate_hz=series.sample_rate_hz,
        band=(float(freqs[0]), float(freqs[-1])),
    )


def bartlett_psd(series: TimeSeries, n_blocks: int = 64) -> Spectrum:
    """Bartlett estimate: average of non-overlapping block periodograms.

    The series is split into ``n_blocks`` equal blocks (tail remainder
    discarded), each mean-removed. Per-bin standard error is
    ``power / sqrt(n_blocks)``. Blocks are averaged in fixed index order,
    so the result does not depend on any parallel scheduling of the block
    transforms.
    """
    if int(n_blocks) != n_blocks or n_blocks < 2:
        raise BadBlockCount(f"n_blocks must be an integer >= 2, got {n_blocks!r}")
    n_blocks = int(n_blocks)
    block_len = len(series) // n_blocks
    if block_len < 4:
        raise TooShort(
            f"{len(series)} samples cannot fill {n_blocks} blocks of >= 4 samples"
        )
    used = series.samples[: n_blocks * block_len].reshape(n_blocks, block_len)
    freqs, power = _one_sided(used, series.sample_rate_hz)
    avg = power.mean(axis=0)
    return Spectrum(
        freqs_hz=freqs,
        power=avg,
        sigma=avg / np.sqrt(n_blocks),
        n_blocks=n_blocks,
        source_rate_hz=series.sample_rate_hz,
        band=(float(freqs[0]), float(freqs[-1])),
    )


def dark_psd(recording: Recording, channel: str, n_blocks: int = 64) -> Spectrum:
    """Bartlett PSD of a laser-off channel, tagged as a dark spectrum."""
    if channel not in recording:
        raise UnknownChannel(
            f"channel {channel!r} not in recording "
            f"(has {sorted(recording.channels)})"
        )
    spec = bartlett_psd(recording[channel], n_blocks)
    meta = dict(spec.meta)
    meta.update(kind="dark", channel=channel)
    return Spectrum(
        spec.freqs_hz, spec.power, spec.sigma, spec.n_blocks,
        spec.source_rate_hz, spec.band, meta,
    )


def band_mask(spec: Spectrum, f_min: float, f_max: float) -> Spectrum:
    """Retain bins with f_min <= f <= f_max; pure selection, values untouched."""
    f_min = float(f_min)
    f_max = float(f_max)
    if not f_min < f_max:
        raise ValueError(f"need f_min < f_max, got ({f_min}, {f_max})")
    keep = (spec.freqs_hz >= f_min) & (spec.freqs_hz <= f_max)
    if not np.any(keep):
        raise EmptyBand(f"no bins in [{f_min}, {f_max}] Hz")
    return Spectrum(
        freqs_hz=spec.freqs_hz[keep],
        power=spec.power[keep],
        sigma=spec.sigma[keep],
        n_blocks=spec.n_blocks,
        source_rate_hz=spec.source_rate_hz,
        band=(max(f_min, spec.band[0]), min(f_max, spec.band[1])),
        meta=dict(spec.meta),
    )


# -- spectrum files -----------------------------------------------------------

_SPECTRUM_HEADER = "# trapcal spectrum v1"


def save_spectrum(spec: Spectrum, path: str) -> None:
    """Write freq_hz, psd, sigma columns with metadata in '#' header lines."""
    meta = {
        "n_blocks": spec.n_blocks,
        "source_rate_hz": spec.source_rate_hz,
        "band": [spec.band[0], spec.band[1]],
        "meta": spec.meta,
    }
    lines = [_SPECTRUM_HEADER, "# meta: " + json.dumps(meta, sort_keys=True)]
    lines.append("freq_hz,psd,sigma")
    for f, p, s in zip(spec.freqs_hz, spec.power, spec.sigma):
        lines.append(f"{float(f)!r},{float(p)!r},{float(s)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_spectrum(path: str) -> Spectrum:
    meta = None
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# meta:"):
                    meta = json.loads(line[len("# meta:"):])
                continue
            if line.startswith("freq_hz"):
                continue
            try:
                rows.append(tuple(float(c) for c in line.split(",")))
            except ValueError:
                raise ParseError(f"{path}: non-numeric value in row {i}") from None
    if meta is None:
        raise ParseError(f"{path}: missing '# meta:' header line")
    if not rows:
        raise ParseError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    return Spectrum(
        freqs_hz=arr[:, 0],
        power=arr[:, 1],
        sigma=arr[:, 2],
        n_blocks=int(meta["n_blocks"]),
        source_rate_hz=float(meta["source_rate_hz"]),
        band=(float(meta["band"][0]), float(meta["band"][1])),
        meta=dict(meta.get("meta", {})),
    )

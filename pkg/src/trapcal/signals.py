"""Signal containers, channel division schemes, and recording file IO.

A detector channel is a uniformly sampled voltage trace; a recording is a
set of synchronized channels. The two division schemes (dividing the
position channel by the instantaneous monitor signal versus by its scalar
mean) are the first simplification this toolkit implements and compares.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    DenominatorCollapse,
    ParseError,
    RateError,
    SchemaError,
    ZeroMeanDenominator,
)

__all__ = [
    "TimeSeries",
    "RecordingMeta",
    "Recording",
    "mean",
    "deviation",
    "default_guard",
    "ratio_instantaneous",
    "ratio_mean",
    "load_recording",
    "save_recording",
]


def _as_readonly(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.base is not None or arr.flags.writeable:
        arr = np.array(arr, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled scalar signal.

    Parameters
    ----------
    samples : array_like
        Sample values (volts for detector channels, meters for positions).
        Must be non-empty and finite; stored as a read-only float64 array.
    sample_rate_hz : float
        Acquisition rate, > 0.
    """

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        arr = _as_readonly(self.samples)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise ValueError(f"non-finite sample at index {bad}")
        rate = float(self.sample_rate_hz)
        if not np.isfinite(rate) or rate <= 0.0:
            raise RateError(f"sample_rate_hz must be positive, got {rate!r}")
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate_hz", rate)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def dt(self) -> float:
        """Sampling interval in seconds."""
        return 1.0 / self.sample_rate_hz

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def with_samples(self, samples) -> "TimeSeries":
        return TimeSeries(samples, self.sample_rate_hz)


@dataclass(frozen=True)
class RecordingMeta:
    """Acquisition descriptor attached to a recording."""

    device: str = ""
    power_mw: float | None = None
    notes: str = ""


@dataclass(frozen=True)
class Recording:
    """Named set of synchronized channels sharing length and rate."""

    channels: dict[str, TimeSeries]
    meta: RecordingMeta = field(default_factory=RecordingMeta)

    def __post_init__(self):
        if not self.channels:
            raise ValueError("recording needs at least one channel")
        lengths = set()
        rates = set()
        for name, ts in self.channels.items():
            if not isinstance(name, str) or not name.strip():
                raise ValueError(f"invalid channel name {name!r}")
            lengths.add(len(ts))
            rates.add(ts.sample_rate_hz)
        if len(lengths) != 1 or len(rates) != 1:
            raise ValueError(
                "all channels must share length and sample rate, got "
                f"lengths={sorted(lengths)} rates={sorted(rates)}"
            )
        object.__setattr__(self, "channels", dict(self.channels))

    def __contains__(self, name: str) -> bool:
        return name in self.channels

    def __getitem__(self, name: str) -> TimeSeries:
        return self.channels[name]

    @property
    def sample_rate_hz(self) -> float:
        return next(iter(self.channels.values())).sample_rate_hz

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.channels.values())))


def mean(series: TimeSeries) -> float:
    """Arithmetic time average of the series."""
    return float(np.mean(series.samples))


def deviation(series: TimeSeries) -> TimeSeries:
    """Series minus its time average.

    Iterates the subtraction to a float fixed point: the output mean is
    zero to rounding even for large offsets, and applying the operation
    again reproduces the output exactly.
    """
    x = series.samples
    if np.all(x == x[0]):
        return series.with_samples(np.zeros_like(x))
    # subtract until the residual mean is below the summation rounding
    # floor; stopping there (rather than chasing the last ulp, which
    # oscillates) makes the operation idempotent
    d = x
    for _ in range(3):
        m = np.mean(d)
        if abs(m) <= 64.0 * np.finfo(np.float64).eps * np.std(d):
            break
        d = d - m
    return series.with_samples(np.array(d) if d is x else d)


def default_guard(den: TimeSeries) -> float:
    """Default near-zero guard: 1e-6 of the denominator's peak magnitude."""
    return 1e-6 * float(np.max(np.abs(den.samples)))


def ratio_instantaneous(
    num: TimeSeries, den: TimeSeries, guard: float | None = None
) -> TimeSeries:
    """Elementwise division of two synchronized channels.

    Samples where ``|den| < guard`` are divided by ``sign(den) * guard``
    instead (dropouts must not produce infinities). If the guarded fraction
    reaches 0.1% the trap was lost or the laser was off, and
    :class:`DenominatorCollapse` is raised.
    """
    if len(num) != len(den) or num.sample_rate_hz != den.sample_rate_hz:
        raise ValueError("numerator and denominator must share length and rate")
    if guard is None:
        guard = default_guard(den)
    guard = float(guard)
    if guard <= 0.0:
        raise ValueError("guard must be positive")
    d = den.samples
    small = np.abs(d) < guard
    n_small = int(np.count_nonzero(small))
    if n_small / len(den) >= 1e-3:
        raise DenominatorCollapse(
            f"{n_small} of {len(den)} denominator samples below guard "
            f"{guard:.3e} (>= 0.1%)"
        )
    if n_small:
        sign = np.where(d >= 0.0, 1.0, -1.0)
        d = np.where(small, sign * guard, d)
    return num.with_samples(num.samples / d)


def ratio_mean(num: TimeSeries, den: TimeSeries) -> TimeSeries:
    """Divide a channel by the scalar time average of another.

    Valid whenever the denominator's fluctuations are small against its
    mean; then the result matches :func:`ratio_instantaneous` to first
    order and needs no per-sample processing.
    """
    if len(num) != len(den) or num.sample_rate_hz != den.sample_rate_hz:
        raise ValueError("numerator and denominator must share length and rate")
    d = den.samples
    # summation round-off would break exact agreement with the
    # instantaneous ratio for a constant denominator
    m = float(d[0]) if np.all(d == d[0]) else float(np.mean(d))
    scale = float(np.max(np.abs(den.samples)))
    if scale == 0.0 or abs(m) < 1e-15 * scale:
        raise ZeroMeanDenominator(f"denominator mean {m:.3e} is at machine scale")
    return num.with_samples(num.samples / m)


# -- recording file IO --------------------------------------------------------

_DELIMITERS = (",", "\t")


def _sniff_delimiter(sample_line: str) -> str:
    counts = {d: sample_line.count(d) for d in _DELIMITERS}
    return max(counts, key=counts.get) if max(counts.values()) else ","


def _looks_like_header(line: str, delimiter: str) -> bool:
    for cell in line.strip().split(delimiter):
        try:
            float(cell)
        except ValueError:
            return True
    return False


def _locate_bad_row(path: str, delimiter: str, skip_header: bool) -> int:
    """Slow rescan used only after the fast parser failed, to name the row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for i, row in enumerate(reader, start=1):
            if i == 1 and skip_header:
                continue
            for cell in row:
                try:
                    float(cell)
                except ValueError:
                    return i
    return -1


def load_recording(
    path: str,
    schema: dict[str, int],
    sample_rate_hz: float,
    meta: RecordingMeta | None = None,
) -> Recording:
    """Load a delimited text recording.

    Parameters
    ----------
    path : str
        Comma- or tab-separated file; delimiter auto-detected. One optional
        header line. A time column, if present, is simply not mapped; the
        declared sample rate is authoritative.
    schema : dict
        Channel name -> zero-based column index, e.g. ``{"X": 0, "S": 1}``.
    sample_rate_hz : float
        Acquisition rate for every channel.
    """
    rate = float(sample_rate_hz)
    if not np.isfinite(rate) or rate <= 0.0:
        raise RateError(f"sample_rate_hz must be positive, got {sample_rate_hz!r}")
    if not schema:
        raise SchemaError("empty channel schema")

    with open(path, newline="") as fh:
        first = fh.readline()
    if not first.strip():
        raise ParseError(f"{path}: file is empty")
    delimiter = _sniff_delimiter(first)
    has_header = _looks_like_header(first, delimiter)

    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            header=0 if has_header else None,
            dtype=np.float64,
            comment="#",
        )
    except (ValueError, pd.errors.ParserError):
        row = _locate_bad_row(path, delimiter, has_header)
        raise ParseError(f"{path}: non-numeric value in row {row}") from None

    n_cols = frame.shape[1]
    for name, col in schema.items():
        if not (0 <= int(col) < n_cols):
            raise SchemaError(
                f"{path}: column {col} for channel {name!r} not present "
                f"({n_cols} columns found)"
            )
    values = frame.to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(values)):
        bad_row = int(np.argwhere(~np.isfinite(values))[0, 0]) + 1 + int(has_header)
        raise ParseError(f"{path}: non-finite value in row {bad_row}")

    channels = {
        name: TimeSeries(values[:, int(col)], rate) for name, col in schema.items()
    }
    if meta is None:
        meta = RecordingMeta(notes=f"loaded from {path}")
    return Recording(channels, meta)


def save_recording(recording: Recording, path: str, sig_digits: int = 9) -> None:
    """Write channels as comma-separated columns with a header line.

    Values are written with ``sig_digits`` significant digits; reloading
    reproduces that decimal form exactly.
    """
    names = list(recording.channels)
    data = np.column_stack([recording.channels[n].samples for n in names])
    frame = pd.DataFrame(data, columns=names)
    buf = io.StringIO()
    frame.to_csv(buf, index=False, float_format=f"%.{int(sig_digits)}g")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())

import numpy as np
import pytest

from trapcal.models import ModelKind, model_eval
from trapcal.signals import TimeSeries


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def make_series(values, rate=1000.0):
    return TimeSeries(np.asarray(values, dtype=float), rate)


@pytest.fixture
def white_series(rng):
    return TimeSeries(rng.standard_normal(2**14), 10_000.0)


def draw_params(kind, rng, dark=None):
    """Random model parameters with every term contributing within a few
    orders of the total, so a finite-difference probe stays above its own
    rounding floor (a parameter a million times below the model is not
    resolvable by any difference quotient, nor by a fit)."""
    fc = rng.uniform(50.0, 2000.0)
    d0 = 10.0 ** rng.uniform(-14, -10)
    dc_r = d0 / (np.pi**2 * fc**2)
    if kind in (ModelKind.LORENTZIAN, ModelKind.AL):
        return [d0, fc]
    if kind is ModelKind.AL_CONST:
        return [d0, fc, dc_r * 10.0 ** rng.uniform(-3, 0)]
    if kind is ModelKind.AL_DARK:
        beta = rng.uniform(0.1, 10.0)
        level = beta * float(np.median(dark.power))
        d0 = level * np.pi**2 * fc**2 * 10.0 ** rng.uniform(-1.5, 1.0)
        return [d0, fc, beta]
    fc_z = rng.uniform(20.0, 450.0)
    d_z = d0 * (fc_z / fc) ** 2 * 10.0 ** rng.uniform(-1, 1)
    dc_z = d_z / (np.pi**2 * fc_z**2)
    floor = max(dc_r, dc_z) * 10.0 ** rng.uniform(-3, 0)
    return [d0, fc, d_z, fc_z, floor]


def central_difference(spec, params, freqs, i, rel_step=1e-6):
    h = rel_step * abs(params[i])
    up = np.array(params, dtype=float)
    dn = np.array(params, dtype=float)
    up[i] += h
    dn[i] -= h
    return (model_eval(spec, up, freqs) - model_eval(spec, dn, freqs)) / (2 * h)

"""Weighted nonlinear least squares over spectra.

The fit minimizes chi^2 = sum ((P_k - M(f_k; theta)) / sigma_k)^2 with a
damped (Levenberg-Marquardt style) iteration driven by the models'
analytic gradients: damping is raised on rejected steps and lowered on
accepted ones, which stays robust when the model is nearly flat along the
noise floor. Parameter covariance is the inverse of the weighted normal
matrix at the optimum, conservatively scaled by max(1, reduced chi^2).

Weights default to the measured per-bin errors. Because a bin that
fluctuates low also gets a small sigma, data-based weights carry a known
small-sample bias; an optional refinement pass refits once with
sigma_k = M(f_k; theta_hat) / sqrt(n_blocks) to remove it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BandMismatch,
    DegenerateAbscissa,
    DegenerateSpectrum,
    NoConvergence,
    SingularNormalMatrix,
)
from .models import ModelKind, ModelSpec, model_eval, model_gradient
from .spectral import Spectrum

__all__ = [
    "FitOptions",
    "FitResult",
    "ModelComparison",
    "OriginFit",
    "init_guess",
    "wls_fit",
    "compare_models",
    "linear_origin_fit",
]


@dataclass(frozen=True)
class FitOptions:
    """Knobs of the damped least-squares iteration."""

    max_iterations: int = 200
    step_tol: float = 1e-8        # relative parameter step
    chi2_tol: float = 1e-10       # relative chi^2 decrease
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.25
    damping_cap: float = 1e14
    weight_refine: bool = False   # one model-weight refinement pass
    lower_bounds: tuple | None = None  # default: zeros
    upper_bounds: tuple | None = None  # default: +inf


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters with errors, covariance and goodness of fit.

    ``param_sigma`` and ``covariance`` include the max(1, chi2_reduced)
    scaling; the unscaled errors are kept in ``param_sigma_raw``.
    """

    param_names: tuple[str, ...]
    params: np.ndarray
    param_sigma: np.ndarray
    param_sigma_raw: np.ndarray
    covariance: np.ndarray
    chi2: float
    chi2_reduced: float
    n_points: int
    n_iterations: int
    converged: bool
    band: tuple[float, float]
    model: dict = field(default_factory=dict)
    weight_mode: str = "data"

    def __getitem__(self, name: str) -> float:
        return float(self.params[self.param_names.index(name)])

    def sigma(self, name: str) -> float:
        return float(self.param_sigma[self.param_names.index(name)])

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {n: float(v) for n, v in zip(self.param_names, self.params)},
            "param_sigma": {
                n: float(v) for n, v in zip(self.param_names, self.param_sigma)
            },
            "param_sigma_raw": {
                n: float(v) for n, v in zip(self.param_names, self.param_sigma_raw)
            },
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "chi2": float(self.chi2),
            "chi2_reduced": float(self.chi2_reduced),
            "n_points": int(self.n_points),
            "n_iterations": int(self.n_iterations),
            "converged": bool(self.converged),
            "band_hz": [float(self.band[0]), float(self.band[1])],
            "weight_mode": self.weight_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        names = tuple(data["model"]["param_names"])
        return cls(
            param_names=names,
            params=np.array([data["params"][n] for n in names]),
            param_sigma=np.array([data["param_sigma"][n] for n in names]),
            param_sigma_raw=np.array([data["param_sigma_raw"][n] for n in names]),
            covariance=np.array(data["covariance"]),
            chi2=float(data["chi2"]),
            chi2_reduced=float(data["chi2_reduced"]),
            n_points=int(data["n_points"]),
            n_iterations=int(data["n_iterations"]),
            converged=bool(data["converged"]),
            band=(float(data["band_hz"][0]), float(data["band_hz"][1])),
            model=dict(data["model"]),
            weight_mode=data.get("weight_mode", "data"),
        )


def init_guess(model: ModelSpec, spectrum: Spectrum) -> np.ndarray:
    """Starting parameters from a Lorentzian linearization.

    On the lower half of the band, 1/P is linear in f^2 for a pure
    Lorentzian: 1/P = a + b f^2 with fc = sqrt(a/b) and D = pi^2 / b.
    Floor-like parameters start from the mean power of the top-decade
    bins. Degenerate regressions fall back to fc = Nyquist / 10.
    """
    f = spectrum.freqs_hz
    p = spectrum.power
    if f.size < 8:
        raise DegenerateSpectrum(f"initial guess needs >= 8 bins, got {f.size}")
    half = f <= f[0] + 0.5 * (f[-1] - f[0])
    usable = half & (p > 0.0)
    if np.count_nonzero(usable) < 3:
        usable = p > 0.0
    if np.count_nonzero(usable) < 3:
        raise DegenerateSpectrum("spectrum has fewer than 3 positive-power bins")

    b, a = np.polyfit(f[usable] ** 2, 1.0 / p[usable], 1)
    if a > 0.0 and b > 0.0:
        fc0 = float(np.sqrt(a / b))
        d0 = float(np.pi**2 / b)
    else:
        fc0 = spectrum.source_rate_hz / 20.0
        f_mid = float(np.median(f[usable]))
        d0 = float(np.mean(p[usable])) * np.pi**2 * (fc0**2 + f_mid**2)

    top = f >= f[-1] / 10.0
    floor0 = float(np.mean(p[top])) if np.any(top) else float(np.mean(p))

    kind = model.kind
    if kind in (ModelKind.LORENTZIAN, ModelKind.AL):
        return np.array([d0, fc0])
    if kind is ModelKind.AL_CONST:
        return np.array([d0, fc0, floor0])
    if kind is ModelKind.AL_DARK:
        dark_top = float(np.mean(_dark_on_grid(model, f[top]))) if np.any(top) else 1.0
        beta0 = floor0 / dark_top if dark_top > 0 else 1.0
        return np.array([d0, fc0, beta0])
    if kind is ModelKind.TWO_AL_NOISE:
        return np.array([d0, fc0, d0 / 25.0, fc0 / 5.0, floor0])
    raise DegenerateSpectrum(f"no initial guess rule for kind {kind!r}")


def _dark_on_grid(model: ModelSpec, freqs: np.ndarray) -> np.ndarray:
    # AL_DARK with D = 0, beta = 1 evaluates to the dark spectrum itself
    return model_eval(model, [0.0, 1.0, 1.0], freqs)


def _correlation_note(normal: np.ndarray, names: tuple[str, ...]) -> str:
    d = np.sqrt(np.abs(np.diag(normal)))
    d[d == 0.0] = 1.0
    corr = normal / np.outer(d, d)
    np.fill_diagonal(corr, 0.0)
    i, j = np.unravel_index(np.argmax(np.abs(corr)), corr.shape)
    return f"strongest parameter correlation {names[i]}~{names[j]}: {corr[i, j]:+.6f}"


def _fit_core(freqs, power, sigma, model, init, options):
    """Damped least squares on raw arrays. Returns (theta, chi2, normal, n_iter, converged)."""
    n_params = len(init)
    lower = np.zeros(n_params) if options.lower_bounds is None else np.asarray(
        options.lower_bounds, dtype=np.float64
    )
    upper = np.full(n_params, np.inf) if options.upper_bounds is None else np.asarray(
        options.upper_bounds, dtype=np.float64
    )
    theta = np.clip(np.asarray(init, dtype=np.float64), lower, upper)
    w = 1.0 / sigma

    def chi2_at(t):
        r = (power - model_eval(model, t, freqs)) * w
        return float(r @ r)

    chi2 = chi2_at(theta)
    lam = options.initial_damping
    converged = False
    n_iter = 0
    scale_floor = 1e-30

    while n_iter < options.max_iterations and not converged:
        n_iter += 1
        jac = model_gradient(model, theta, freqs) * w  # (p, n)
        resid = (power - model_eval(model, theta, freqs)) * w
        normal = jac @ jac.T
        grad = jac @ resid
        diag = np.diag(normal).copy()
        if not np.all(np.isfinite(normal)) or np.all(diag == 0.0):
            raise SingularNormalMatrix(
                "normal matrix is not finite; "
                + _correlation_note(np.nan_to_num(normal), tuple(model.names))
            )
        diag[diag == 0.0] = np.max(diag)

        accepted = False
        while not accepted:
            try:
                delta = np.linalg.solve(normal + lam * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                delta = None
            step_rel = (
                float(np.max(np.abs(delta) / (np.abs(theta) + scale_floor)))
                if delta is not None
                else np.inf
            )
            if delta is not None and step_rel < options.step_tol:
                converged = True
                break
            trial = theta + delta if delta is not None else None
            in_bounds = trial is not None and np.all(trial >= lower) and np.all(
                trial <= upper
            )
            chi2_trial = chi2_at(trial) if in_bounds else np.inf
            if chi2_trial <= chi2:
                drop_rel = (chi2 - chi2_trial) / max(chi2, 1e-300)
                theta = trial
                chi2 = chi2_trial
                lam = max(lam * options.damping_down, 1e-12)
                accepted = True
                if drop_rel < options.chi2_tol or step_rel < options.step_tol:
                    converged = True
            else:
                lam *= options.damping_up
                if lam > options.damping_cap:
                    # cannot improve in any direction at any damping: treat
                    # the current iterate as the optimum
                    converged = True
                    break

    jac = model_gradient(model, theta, freqs) * w
    normal = jac @ jac.T
    return theta, chi2, normal, n_iter, converged


def _result_from(theta, chi2, normal, n_iter, converged, model, band, n_points, mode):
    names = model.names
    dof = n_points - len(theta)
    chi2_reduced = chi2 / dof if dof > 0 else np.nan
    # invert in correlation form: scale-free, so ill-conditioning reflects
    # genuine parameter degeneracy rather than unit choices
    d = np.sqrt(np.diag(normal))
    if not np.all(np.isfinite(d)) or np.any(d <= 0.0):
        raise SingularNormalMatrix(
            "a parameter has zero curvature at the optimum; "
            + _correlation_note(normal, names)
        )
    corr = normal / np.outer(d, d)
    cond = np.linalg.cond(corr)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularNormalMatrix(
            f"normal matrix singular at optimum (condition {cond:.3g}); "
            + _correlation_note(normal, names)
        )
    cov_raw = np.linalg.inv(corr) / np.outer(d, d)
    if np.any(np.diag(cov_raw) < 0):
        raise SingularNormalMatrix(
            "normal matrix not positive definite at optimum; "
            + _correlation_note(normal, names)
        )
    sigma_raw = np.sqrt(np.diag(cov_raw))
    scale = max(1.0, chi2_reduced) if np.isfinite(chi2_reduced) else 1.0
    return FitResult(
        param_names=names,
        params=theta,
        param_sigma=sigma_raw * np.sqrt(scale),
        param_sigma_raw=sigma_raw,
        covariance=cov_raw * scale,
        chi2=chi2,
        chi2_reduced=float(chi2_reduced),
        n_points=n_points,
        n_iterations=n_iter,
        converged=converged,
        band=band,
        model=model.to_dict(),
        weight_mode=mode,
    )


def _reorder_two_al(result: FitResult) -> FitResult:
    """Report the larger fitted corner as the radial component."""
    if result["fc_r"] >= result["fc_z"]:
        return result
    perm = [2, 3, 0, 1, 4]
    return replace(
        result,
        params=result.params[perm],
        param_sigma=result.param_sigma[perm],
        param_sigma_raw=result.param_sigma_raw[perm],
        covariance=result.covariance[np.ix_(perm, perm)],
    )


def wls_fit(
    spectrum: Spectrum,
    model: ModelSpec,
    init=None,
    options: FitOptions = FitOptions(),
) -> FitResult:
    """Fit a spectral model to a spectrum by damped least squares.

    Raises :class:`NoConvergence` (with the last iterate attached as
    ``partial``) if the iteration cap is hit, and
    :class:`SingularNormalMatrix` if the parameters are degenerate.
    """
    freqs = spectrum.freqs_hz
    power = spectrum.power
    sigma = spectrum.sigma
    if np.any(sigma <= 0.0):
        raise ValueError("fit needs strictly positive per-bin sigma")
    n_points = freqs.size
    if n_points <= model.n_params:
        raise ValueError(
            f"need more points ({n_points}) than parameters ({model.n_params})"
        )
    if init is None:
        init = init_guess(model, spectrum)

    theta, chi2, normal, n_iter, converged = _fit_core(
        freqs, power, sigma, model, init, options
    )
    mode = "data"
    if converged and options.weight_refine:
        refined = model_eval(model, theta, freqs) / np.sqrt(spectrum.n_blocks)
        floor = np.max(refined) * 1e-150 + 1e-300
        refined = np.maximum(refined, floor)
        theta, chi2, normal, n_iter2, converged = _fit_core(
            freqs, power, refined, model, theta, options
        )
        n_iter += n_iter2
        mode = "data+model_refined"

    result = _result_from(
        theta, chi2, normal, n_iter, converged, model, spectrum.band, n_points, mode
    )
    if model.kind is ModelKind.TWO_AL_NOISE:
        result = _reorder_two_al(result)
    if not converged:
        raise NoConvergence(
            f"no convergence in {options.max_iterations} iterations "
            f"(chi2={chi2:.6g})",
            partial=result,
        )
    return result


@dataclass(frozen=True)
class ModelComparison:
    labels: tuple[str, str]
    chi2_ratio: float
    chi2_reduced_a: float
    chi2_reduced_b: float

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "chi2_ratio": float(self.chi2_ratio),
            "chi2_reduced": {
                self.labels[0]: float(self.chi2_reduced_a),
                self.labels[1]: float(self.chi2_reduced_b),
            },
        }


def compare_models(
    fit_a: FitResult, fit_b: FitResult, labels: tuple[str, str] = ("a", "b")
) -> ModelComparison:
    """Diagnostic chi^2 ratio between two fits of the same spectrum band."""
    same_band = np.allclose(fit_a.band, fit_b.band, rtol=1e-9, atol=1e-12)
    if not same_band or fit_a.n_points != fit_b.n_points:
        raise BandMismatch(
            f"fits cover different data: bands {fit_a.band} vs {fit_b.band}, "
            f"{fit_a.n_points} vs {fit_b.n_points} points"
        )
    return ModelComparison(
        labels=tuple(labels),
        chi2_ratio=fit_a.chi2 / fit_b.chi2,
        chi2_reduced_a=fit_a.chi2_reduced,
        chi2_reduced_b=fit_b.chi2_reduced,
    )


@dataclass(frozen=True)
class OriginFit:
    slope: float
    slope_sigma: float
    chi2: float
    n_points: int

    def to_dict(self) -> dict:
        return {
            "slope": float(self.slope),
            "slope_sigma": float(self.slope_sigma),
            "chi2": float(self.chi2),
            "n_points": int(self.n_points),
        }


def linear_origin_fit(points) -> OriginFit:
    """Weighted through-origin line fit y = slope * x.

    ``points`` is an iterable of (x, y, y_sigma). Closed form:
    slope = sum(w x y) / sum(w x^2), var = 1 / sum(w x^2), w = 1/sigma^2.
    """
    pts = [(float(x), float(y), float(s)) for x, y, s in points]
    if not pts:
        raise ValueError("need at least one point")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    s = np.array([p[2] for p in pts])
    if np.any(s <= 0.0):
        raise ValueError("point sigmas must be positive")
    w = 1.0 / s**2
    denom = float(np.sum(w * x * x))
    if denom == 0.0:
        raise DegenerateAbscissa("all abscissa values are zero")
    slope = float(np.sum(w * x * y)) / denom
    chi2 = float(np.sum(w * (y - slope * x) ** 2))
    return OriginFit(
        slope=slope,
        slope_sigma=float(1.0 / np.sqrt(denom)),
        chi2=chi2,
        n_points=len(pts),
    )

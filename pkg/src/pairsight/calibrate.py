"""Source and camera calibration from measured data.

Phasematching: recover the sinc-envelope scalars (mu00, alpha_lz, delta_lz,
amplitude) by gradient descent on the summed L2 distance between predicted
and observed mean fields over a set of SLM patterns, with gradients from the
autodiff tape and a backtracking (Armijo) line search.

EM gain: fit the dark-frame histogram's read-noise peak with a Gaussian
``A exp(-(x - mu)^2 / sigma^2)`` and the single-photon tail above
``mu + 2 sigma`` with an exponential whose decay constant is the gain. The
tail estimate is the mean excess over the threshold, corrected for the
Gaussian counts that leak past it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from . import autodiff as ad
from .errors import FitError, InvalidParameterError, TailRegionError
from .optics import (MeanField, PhasematchParams, PixelGrid, SlmPhase,
                     greens_from_spectrum_t, mean_from_greens_t,
                     spectrum_from_phase_t)

__all__ = [
    "MeanFieldMeasurement",
    "PhasematchFitOptions",
    "PhasematchFitResult",
    "fit_phasematching",
    "GainFit",
    "GainFitOptions",
    "fit_gain",
]


# --------------------------------------------------------------------------
# phasematching fit
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MeanFieldMeasurement:
    """One (SLM pattern, observed mean field) calibration pair."""

    slm: SlmPhase
    observed: MeanField


@dataclass(frozen=True)
class PhasematchFitOptions:
    max_iters: int = 2000
    rel_tol: float = 1e-9
    armijo_c: float = 1e-4
    shrink: float = 0.5
    grow: float = 2.0
    init_step: float = 1.0
    precondition: bool = True  # fixed diagonal curvature scaling from init


@dataclass
class PhasematchFitResult:
    params: PhasematchParams
    objective_trace: np.ndarray
    converged: bool
    underdetermined: bool
    iterations: int


def _distinct_patterns(measurements) -> int:
    seen = set()
    for m in measurements:
        seen.add((m.slm.phase.tobytes(), m.slm.aperture.tobytes()))
    return len(seen)


def fit_phasematching(measurements: list[MeanFieldMeasurement],
                      init: PhasematchParams, grid: PixelGrid,
                      opts: PhasematchFitOptions | None = None
                      ) -> PhasematchFitResult:
    """Minimize sum_m ||predicted_mean(theta; slm_m) - observed_m||_2^2.

    Returns the parameters at the best objective encountered, the objective
    trace, and flags for non-convergence and identifiability (fewer than two
    distinct SLM patterns).
    """
    opts = opts or PhasematchFitOptions()
    if not measurements:
        raise InvalidParameterError("need at least one measurement")
    for m in measurements:
        if m.observed.values.shape != (grid.n, grid.n):
            raise InvalidParameterError("observed mean field does not match grid")
    underdetermined = _distinct_patterns(measurements) < 2

    # pump spectra do not depend on the fitted scalars; evaluate once
    spectra = []
    for m in measurements:
        v_re, v_im = spectrum_from_phase_t(ad.constant(m.slm.phase),
                                           m.slm.aperture, grid)
        spectra.append((v_re.value, v_im.value))
    observed = [m.observed.values for m in measurements]

    def objective_and_grad(theta: np.ndarray, want_grad: bool):
        leaves = [ad.Tensor(v, requires_grad=want_grad) for v in theta]
        total = ad.constant(0.0)
        for (nu_re, nu_im), obs in zip(spectra, observed):
            s_re, s_im = greens_from_spectrum_t(nu_re, nu_im, *leaves, grid)
            mean = mean_from_greens_t(s_re, s_im, grid.n)
            diff = ad.sub(mean, obs)
            total = ad.add(total, ad.sum_(ad.square(diff)))
        if not want_grad:
            return float(total.value), None
        ad.backward(total)
        return float(total.value), np.array([l.grad.item() for l in leaves])

    theta = init.as_array()
    obj, grad = objective_and_grad(theta, True)
    if not np.isfinite(obj):
        raise FitError("non-finite objective at iteration 0")

    # fixed diagonal scaling from a one-time curvature probe; equalizes the
    # wildly different sensitivities of the four scalars
    scale = np.ones(4)
    if opts.precondition:
        curv = np.zeros(4)
        for k in range(4):
            h = 1e-4 * max(abs(theta[k]), 1.0)
            probe = theta.copy()
            probe[k] += h
            _, g_probe = objective_and_grad(probe, True)
            curv[k] = (g_probe[k] - grad[k]) / h
        positive = curv[curv > 0]
        floor = positive.min() * 1e-3 if positive.size else 1.0
        scale = 1.0 / np.maximum(curv, floor)
        scale /= scale.max()

    trace = [obj]
    best_theta, best_obj = theta.copy(), obj
    step = opts.init_step
    converged = False
    iteration = 0
    for iteration in range(1, opts.max_iters + 1):
        direction = -scale * grad
        slope = float(grad @ direction)  # negative for any descent direction
        if slope == 0.0:
            converged = True
            break
        # Armijo backtracking from the current (grown) step
        accepted = False
        while step > 1e-20:
            candidate = theta + step * direction
            cand_obj, _ = objective_and_grad(candidate, False)
            if not np.isfinite(cand_obj):
                raise FitError(f"non-finite objective at iteration {iteration}")
            if cand_obj <= obj + opts.armijo_c * step * slope:
                accepted = True
                break
            step *= opts.shrink
        if not accepted:
            converged = True  # no progress possible at float precision
            break
        prev_obj = obj
        theta = candidate
        obj, grad = objective_and_grad(theta, True)
        trace.append(obj)
        if obj < best_obj:
            best_obj, best_theta = obj, theta.copy()
        step *= opts.grow
        if prev_obj - obj <= opts.rel_tol * max(abs(prev_obj), 1e-300):
            converged = True
            break

    params = PhasematchParams(mu00=best_theta[0], alpha_lz=best_theta[1],
                              delta_lz=best_theta[2],
                              amplitude=abs(best_theta[3]))
    return PhasematchFitResult(params=params,
                               objective_trace=np.asarray(trace),
                               converged=converged,
                               underdetermined=underdetermined,
                               iterations=iteration)


# --------------------------------------------------------------------------
# EM gain fit
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GainFitOptions:
    min_tail_excess: float = 100.0  # samples above the read-noise region


@dataclass(frozen=True)
class GainFit:
    """Read-noise Gaussian and single-photon exponential tail parameters."""

    g: float
    mu: float
    sigma: float
    a: float
    tail_start: float

    def __post_init__(self):
        if self.g <= 0:
            raise InvalidParameterError("gain must be positive")
        if self.sigma <= 0:
            raise InvalidParameterError("sigma must be positive")


def _gaussian(x, a, mu, sigma):
    return a * np.exp(-((x - mu) ** 2) / sigma**2)


def _fit_peak(values: np.ndarray, counts: np.ndarray):
    mode = values[int(np.argmax(counts))]
    peak = counts.max()
    above = counts >= 0.5 * peak
    if above.sum() >= 2:
        fwhm = values[above].max() - values[above].min()
    else:
        fwhm = max(np.diff(np.sort(values)).min(), 1e-6)
    sigma0 = max(fwhm / 2.355 * np.sqrt(2.0), 1e-9)
    window = np.abs(values - mode) <= 3.0 * sigma0
    if window.sum() < 3:
        window = np.ones_like(values, dtype=bool)
    lo, hi = values[window].min(), values[window].max()
    span = max(hi - lo, 1e-9)
    try:
        # the peak must live inside its own window; keeps heavy one-sided
        # tails from being "explained" by a far-off, very wide Gaussian
        popt, _ = curve_fit(_gaussian, values[window], counts[window],
                            p0=(peak, mode, min(sigma0, span)),
                            bounds=([0.0, lo, 1e-9], [2 * peak, hi, span]),
                            maxfev=10_000)
        a, mu, sigma = popt[0], popt[1], abs(popt[2])
        if not np.all(np.isfinite([a, mu, sigma])) or sigma <= 0 or a <= 0:
            raise RuntimeError
    except RuntimeError:
        # moment fallback keeps degenerate (tail-only) inputs usable
        w = counts[window] / counts[window].sum()
        mu = float(values[window] @ w)
        var = float(((values[window] - mu) ** 2) @ w)
        sigma = max(np.sqrt(2.0 * var), 1e-9)
        a = float(peak)
    return a, mu, sigma


def fit_gain(histogram, opts: GainFitOptions | None = None) -> GainFit:
    """EM gain from a dark-frame pixel-value histogram (values, counts).

    Least-squares Gaussian on the central peak, then a closed-form
    exponential MLE on the counts above ``tail_start = mu + 2 sigma``: the
    gain is the mean value excess over the threshold after subtracting the
    Gaussian's own predicted counts there.
    """
    opts = opts or GainFitOptions()
    hist = np.asarray(histogram, dtype=np.float64)
    if hist.ndim == 2 and hist.shape[1] == 2:
        values, counts = hist[:, 0], hist[:, 1]
    elif isinstance(histogram, tuple) and len(histogram) == 2:
        values = np.asarray(histogram[0], dtype=np.float64)
        counts = np.asarray(histogram[1], dtype=np.float64)
    else:
        raise InvalidParameterError(
            "histogram must be (values, counts) or an (N, 2) array")
    if values.shape != counts.shape or values.ndim != 1:
        raise InvalidParameterError("values and counts must be equal vectors")
    if counts.min() < 0:
        raise InvalidParameterError("counts must be >= 0")

    order = np.argsort(values)
    values, counts = values[order], counts[order]
    a, mu, sigma = _fit_peak(values, counts)
    tail_start = mu + 2.0 * sigma

    in_tail = values > tail_start
    tail_v = values[in_tail]
    tail_c = counts[in_tail]
    gauss_c = _gaussian(tail_v, a, mu, sigma)
    excess_n = float(tail_c.sum() - gauss_c.sum())
    if excess_n < opts.min_tail_excess:
        raise TailRegionError(
            f"only {excess_n:.1f} counts above the read-noise region "
            f"(need >= {opts.min_tail_excess:g})")
    num = float(((tail_v - tail_start) * (tail_c - gauss_c)).sum())
    g = num / excess_n
    if not np.isfinite(g) or g <= 0:
        raise FitError("tail fit produced a non-positive gain")
    return GainFit(g=g, mu=mu, sigma=sigma, a=a, tail_start=tail_start)

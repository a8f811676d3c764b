"""Exact two-mode toy model: where photon correlations help classification.

Two threshold detectors watch two optical modes. Four equally likely object
classes either pass or block each mode (class 0: both pass, class 1: mode 1
blocked, class 2: mode 0 blocked, class 3: both blocked). Each detector can
also fire on background with probability eps. Enumerating the sixteen
(measurement, class) probabilities gives the exact single-shot error of the
maximum-posterior rule, for a coherent state behind a beamsplitter and for a
two-mode squeezed pair source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

__all__ = [
    "ToySource",
    "ThresholdPMF",
    "source_pmf",
    "outcome_table",
    "map_error",
    "optimize_beamsplitter",
    "decorrelated",
    "error_sweep",
]

# event/measurement order: |00>, |10>, |01>, |11>  (mode0, mode1)
_PATTERNS = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.int64)
# class -> which modes are blocked
_BLOCKS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.int64)


@dataclass(frozen=True)
class ToySource:
    """Illumination model: 'coherent' (plus beamsplitter) or 'squeezed'."""

    kind: str
    mean_photons: float = 0.1
    bs_angle: float = 0.0

    def __post_init__(self):
        if self.kind not in ("coherent", "squeezed"):
            raise InvalidParameterError("kind must be 'coherent' or 'squeezed'")
        if self.mean_photons < 0:
            raise InvalidParameterError("mean_photons must be >= 0")


@dataclass(frozen=True)
class ThresholdPMF:
    """Click-pattern probabilities (|00>, |10>, |01>, |11>) before the object."""

    p0: float
    p1: float
    p2: float
    p3: float

    def __post_init__(self):
        probs = self.as_array()
        if probs.min() < -1e-15:
            raise InvalidParameterError("pattern probabilities must be >= 0")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidParameterError("pattern probabilities must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.p0, self.p1, self.p2, self.p3], dtype=np.float64)


def source_pmf(src: ToySource) -> ThresholdPMF:
    """Threshold-detector pattern pmf for a toy source.

    Coherent: the beamsplitter splits mean photons mu into independent
    Poisson modes mu cos^2(theta), mu sin^2(theta); a detector clicks with
    probability 1 - exp(-mu_k). Squeezed: photons arrive only in cross-mode
    pairs whose number is thermal with mean mu/2, so only |00> and |11>
    occur and p0 = 1 / (1 + mu/2).
    """
    mu = src.mean_photons
    if src.kind == "coherent":
        c0 = 1.0 - np.exp(-mu * np.cos(src.bs_angle) ** 2)
        c1 = 1.0 - np.exp(-mu * np.sin(src.bs_angle) ** 2)
        return ThresholdPMF(
            p0=(1 - c0) * (1 - c1),
            p1=c0 * (1 - c1),
            p2=(1 - c0) * c1,
            p3=c0 * c1,
        )
    p0 = 1.0 / (1.0 + mu / 2.0)
    return ThresholdPMF(p0=p0, p1=0.0, p2=0.0, p3=1.0 - p0)


def outcome_table(pmf: ThresholdPMF, eps: float) -> np.ndarray:
    """Joint P(measurement, class) table, shape (4, 4), rows = measurements.

    A detector clicks if a surviving photon reaches it, or on background
    with probability eps; classes are equally likely (prior 1/4). Columns
    each sum to 1/4 and the table sums to 1.
    """
    if not (0.0 <= eps <= 1.0):
        raise InvalidParameterError("eps must lie in [0, 1]")
    probs = pmf.as_array()
    table = np.zeros((4, 4))
    for cls in range(4):
        passes = 1 - _BLOCKS[cls]
        for ev in range(4):
            survive = _PATTERNS[ev] * passes  # photons still present per mode
            # click probability per mode given survivors
            click = np.where(survive > 0, 1.0, eps)
            for meas in range(4):
                want = _PATTERNS[meas]
                per_mode = np.where(want > 0, click, 1.0 - click)
                table[meas, cls] += 0.25 * probs[ev] * per_mode.prod()
    return table


def map_error(table: np.ndarray, classes=None) -> float:
    """Single-shot error of the maximum-posterior decision rule.

    ``classes`` restricts the prior to a subset (renormalized uniform),
    e.g. (1, 2) for the mode-1-blocked vs mode-0-blocked task.
    """
    table = np.asarray(table, dtype=np.float64)
    if classes is None:
        sub = table
    else:
        cols = np.asarray(sorted(classes), dtype=np.int64)
        sub = table[:, cols] * (4.0 / len(cols))
    return float(1.0 - sub.max(axis=1).sum())


def optimize_beamsplitter(eps: float, mean_photons: float,
                          grid_steps: int = 181) -> tuple[float, float]:
    """Grid search the beamsplitter angle over [0, pi/2]; lowest index wins ties."""
    if grid_steps < 2:
        raise InvalidParameterError("grid_steps must be >= 2")
    thetas = np.linspace(0.0, np.pi / 2.0, grid_steps)
    errors = np.array([
        map_error(outcome_table(
            source_pmf(ToySource("coherent", mean_photons, t)), eps))
        for t in thetas
    ])
    best = int(np.argmin(errors))
    return float(thetas[best]), float(errors[best])


def decorrelated(pmf: ThresholdPMF) -> ThresholdPMF:
    """Independent-detector counterpart with the same per-mode click rates.

    Removes the joint structure while keeping each detector's marginal
    click probability, isolating what the correlations themselves carry.
    """
    m0 = pmf.p1 + pmf.p3
    m1 = pmf.p2 + pmf.p3
    return ThresholdPMF(
        p0=(1 - m0) * (1 - m1),
        p1=m0 * (1 - m1),
        p2=(1 - m0) * m1,
        p3=m0 * m1,
    )


def error_sweep(eps_values, mean_photons: float = 0.1,
                grid_steps: int = 181) -> list[dict]:
    """Correlated vs grid-optimized uncorrelated error per background level."""
    rows = []
    squeezed = source_pmf(ToySource("squeezed", mean_photons))
    for eps in eps_values:
        corr = map_error(outcome_table(squeezed, eps))
        theta, uncorr = optimize_beamsplitter(eps, mean_photons, grid_steps)
        rows.append({
            "eps": float(eps),
            "error_correlated": corr,
            "error_uncorrelated": uncorr,
            "best_theta": theta,
        })
    return rows

"""Down-conversion source model: pump spectrum, Green's functions, statistics.

The source is a two-mode-squeezing Gaussian map ``a_out = C a_in + S a_in^†``
on a discrete grid of transverse momenta (camera pixels). In the low-gain
regime used here ``C = I`` and

    S[qs, qi] = amplitude * nu_pump(qs + qi) * sinc(mu00
                - alpha_lz * (qs_x + qi_x) + delta_lz * |qs - qi|^2)

with ``nu_pump`` the pump's angular spectrum on the sum-coordinate grid.
From ``S`` follow the mean photon number per pixel, the pixel-pixel photon
covariance, and the normalized joint distribution of photon-pair positions.

Each quantity has a plain numpy entry point operating on the frozen domain
types, backed by a differentiable core (``*_t`` functions) that runs on the
:mod:`pairsight.autodiff` tape so gradients can reach the SLM phase and the
phasematching parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .errors import DegenerateDistributionError, DimensionError, InvalidParameterError

__all__ = [
    "PixelGrid",
    "SlmPhase",
    "PumpSpectrum",
    "PhasematchParams",
    "GreenPair",
    "MeanField",
    "CovarianceMatrix",
    "JointPairDistribution",
    "pair_index",
    "pair_unindex",
    "pair_table",
    "phasematch_coeffs",
    "phasematch",
    "pump_spectrum_from_slm",
    "build_greens",
    "mean_field",
    "covariance",
    "biphoton_jpd",
    "spectrum_from_phase_t",
    "greens_from_spectrum_t",
    "mean_from_greens_t",
    "jpd_from_s_matrix",
]


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PixelGrid:
    """Square pixel grid in the transverse-momentum plane.

    ``q = (index - center) * dq`` per axis, with ``center = n // 2`` so the
    zero-momentum pixel sits at the conventional FFT center.
    """

    n: int
    dq: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise InvalidParameterError("grid needs n >= 2")
        if not (np.isfinite(self.dq) and self.dq > 0):
            raise InvalidParameterError("dq must be positive and finite")

    @property
    def center(self) -> int:
        return self.n // 2

    @property
    def n_pixels(self) -> int:
        return self.n * self.n

    @property
    def spectrum_size(self) -> int:
        """Side length of the sum-coordinate grid holding ``q_s + q_i``."""
        return 2 * self.n - 1

    def momenta(self) -> tuple[np.ndarray, np.ndarray]:
        """(qx, qy) per flattened pixel, pixel p = row * n + col."""
        axis = (np.arange(self.n) - self.center) * self.dq
        qy, qx = np.meshgrid(axis, axis, indexing="ij")
        return qx.ravel(), qy.ravel()

    def pair_geometry(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Constant matrices used in the Green's function over pixel pairs.

        Returns (flat sum-coordinate index, qs_x + qi_x, |qs - qi|^2),
        each of shape (n^2, n^2). Cached per (n, dq).
        """
        return _pair_geometry(self.n, self.dq)


@dataclass(frozen=True)
class SlmPhase:
    """Phase pattern (radians) and pump amplitude profile on the modulator."""

    phase: np.ndarray
    aperture: np.ndarray

    def __post_init__(self):
        phase = np.asarray(self.phase, dtype=np.float64)
        aperture = np.asarray(self.aperture, dtype=np.float64)
        if phase.ndim != 2 or phase.shape[0] != phase.shape[1]:
            raise DimensionError("phase must be a square matrix")
        if aperture.shape != phase.shape:
            raise DimensionError("aperture shape must match phase shape")
        if not np.all(np.isfinite(phase)):
            raise InvalidParameterError("phase entries must be finite")
        if aperture.min() < 0 or aperture.max() > 1:
            raise InvalidParameterError("aperture entries must lie in [0, 1]")
        object.__setattr__(self, "phase", phase)
        object.__setattr__(self, "aperture", aperture)

    @property
    def size(self) -> int:
        return self.phase.shape[0]


@dataclass(frozen=True)
class PumpSpectrum:
    """Pump angular spectrum sampled on the (2n-1)^2 sum-coordinate grid."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionError("pump spectrum must be square")
        if values.shape[0] % 2 != 1:
            raise DimensionError("pump spectrum side must be odd (2n-1)")
        if not np.all(np.isfinite(values)):
            raise InvalidParameterError("pump spectrum entries must be finite")
        if not np.any(values != 0):
            raise InvalidParameterError("pump spectrum must have a nonzero entry")
        object.__setattr__(self, "values", values)

    @property
    def grid_n(self) -> int:
        return (self.values.shape[0] + 1) // 2


@dataclass(frozen=True)
class PhasematchParams:
    """Fitted scalars of the sinc phasematching envelope."""

    mu00: float
    alpha_lz: float
    delta_lz: float
    amplitude: float = 1.0

    def __post_init__(self):
        vals = (self.mu00, self.alpha_lz, self.delta_lz, self.amplitude)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidParameterError("phasematch parameters must be finite")
        if self.amplitude < 0:
            raise InvalidParameterError("amplitude must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.mu00, self.alpha_lz, self.delta_lz, self.amplitude])


@dataclass(frozen=True)
class GreenPair:
    """The (C, S) matrices defining the Gaussian source."""

    c: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.complex128)
        s = np.asarray(self.s, dtype=np.complex128)
        if c.shape != s.shape or c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DimensionError("c and s must be equal square matrices")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "s", s)

    @classmethod
    def from_s(cls, s: np.ndarray) -> "GreenPair":
        s = np.asarray(s, dtype=np.complex128)
        return cls(c=np.eye(s.shape[0], dtype=np.complex128), s=s)

    @property
    def n(self) -> int:
        root = int(round(np.sqrt(self.s.shape[0])))
        if root * root != self.s.shape[0]:
            raise DimensionError("Green's matrices are not n^2 x n^2")
        return root


@dataclass(frozen=True)
class MeanField:
    """Expected photons per shot per pixel."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionError("mean field must be a square matrix")
        if values.min() < 0:
            raise InvalidParameterError("mean field entries must be >= 0")
        object.__setattr__(self, "values", values)

    @property
    def total(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class CovarianceMatrix:
    """Photon-number covariance over flattened pixel pairs."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DimensionError("covariance must be square")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class JointPairDistribution:
    """Normalized probabilities over unordered pixel pairs {i, j}, i <= j.

    Stored as a length n^2 (n^2 + 1) / 2 vector in row-major triangular
    order; ``pair_table`` gives the (i, j) decoding.
    """

    probs: np.ndarray
    n_pixels: int

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        expected = self.n_pixels * (self.n_pixels + 1) // 2
        if probs.shape != (expected,):
            raise DimensionError(
                f"pair vector has length {probs.shape}, expected ({expected},)")
        if probs.min() < 0:
            raise InvalidParameterError("pair probabilities must be >= 0")
        total = probs.sum()
        if not np.isclose(total, 1.0, rtol=0, atol=1e-10):
            raise InvalidParameterError(f"pair probabilities sum to {total}, not 1")
        object.__setattr__(self, "probs", probs)

    @property
    def n(self) -> int:
        return int(round(np.sqrt(self.n_pixels)))

    def marginal(self) -> np.ndarray:
        """Per-pixel pair marginal: each pair contributes per photon landed."""
        i_idx, j_idx = pair_table(self.n_pixels)
        out = np.zeros(self.n_pixels)
        np.add.at(out, i_idx, self.probs)
        np.add.at(out, j_idx, self.probs)
        return out


@lru_cache(maxsize=4)
def _pair_geometry(n: int, dq: float):
    grid = PixelGrid(n, dq)
    qx, qy = grid.momenta()
    rows, cols = np.divmod(np.arange(grid.n_pixels), n)
    m = grid.spectrum_size
    sum_idx = (rows[:, None] + rows[None, :]) * m + (cols[:, None] + cols[None, :])
    sum_qx = qx[:, None] + qx[None, :]
    diff2 = (qx[:, None] - qx[None, :]) ** 2 + (qy[:, None] - qy[None, :]) ** 2
    return sum_idx, sum_qx, diff2


# --------------------------------------------------------------------------
# unordered-pair (triangular) indexing
# --------------------------------------------------------------------------

def pair_index(i, j, n_pixels: int):
    """Index of unordered pair {i, j} (any order) in the triangular layout."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    lo = np.minimum(i, j)
    hi = np.maximum(i, j)
    return lo * n_pixels - lo * (lo - 1) // 2 + (hi - lo)


def pair_unindex(k, n_pixels: int):
    """Inverse of :func:`pair_index`: triangular index -> (i, j) with i <= j."""
    k = np.asarray(k, dtype=np.int64)
    rows = np.arange(n_pixels, dtype=np.int64)
    starts = rows * n_pixels - rows * (rows - 1) // 2
    i = np.searchsorted(starts, k, side="right") - 1
    j = k - starts[i] + i
    return i, j


def pair_table(n_pixels: int) -> tuple[np.ndarray, np.ndarray]:
    """(i, j) arrays for every triangular index, i <= j."""
    i, j = np.triu_indices(n_pixels)
    return i.astype(np.int64), j.astype(np.int64)


# --------------------------------------------------------------------------
# phasematching
# --------------------------------------------------------------------------

def phasematch_coeffs(n_o: float, n_e: float, theta: float):
    """Dispersion coefficients (alpha, beta, gamma, eta) of the tilted crystal.

    alpha = (n_o^2 - n_e^2) sin(t) cos(t) / (n_o^2 sin^2 t + n_e^2 cos^2 t)
    beta  = n_o n_e / (n_o^2 sin^2 t + n_e^2 cos^2 t)
    gamma = n_o / sqrt(n_o^2 sin^2 t + n_e^2 cos^2 t)
    eta   = n_o n_e / sqrt(n_o^2 sin^2 t + n_e^2 cos^2 t)
    """
    for name, v in (("n_o", n_o), ("n_e", n_e)):
        if not np.isfinite(v) or v <= 0:
            raise InvalidParameterError(f"{name} must be positive and finite")
    if not np.isfinite(theta) or not (0.0 <= theta <= np.pi / 2):
        raise InvalidParameterError("theta must lie in [0, pi/2]")
    st, ct = np.sin(theta), np.cos(theta)
    denom = n_o**2 * st**2 + n_e**2 * ct**2
    alpha = (n_o**2 - n_e**2) * st * ct / denom
    beta = n_o * n_e / denom
    gamma = n_o / np.sqrt(denom)
    eta = n_o * n_e / np.sqrt(denom)
    return alpha, beta, gamma, eta


def _sinc(x):
    # unnormalized sin(x)/x; np.sinc carries the pi factor
    return np.sinc(np.asarray(x, dtype=np.float64) / np.pi)


def phasematch(q_s, q_i, pm: PhasematchParams):
    """Sinc phasematching envelope for a signal/idler momentum pair.

    Symmetric under q_s <-> q_i since it depends on the sum of the x
    components and the squared difference only.
    """
    q_s = np.asarray(q_s, dtype=np.float64)
    q_i = np.asarray(q_i, dtype=np.float64)
    arg = (pm.mu00
           - pm.alpha_lz * (q_s[..., 0] + q_i[..., 0])
           + pm.delta_lz * np.sum((q_s - q_i) ** 2, axis=-1))
    out = _sinc(arg)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# pump spectrum from the modulator
# --------------------------------------------------------------------------

def _dft_matrices(grid: PixelGrid) -> tuple[np.ndarray, np.ndarray]:
    """Unitary centered DFT matrix for the sum-coordinate window, as (re, im).

    Row s corresponds to sum frequency (s - 2*center); together the rows
    cover every residue mod (2n-1), so the transform is exactly unitary and
    the spectrum power equals the windowed field power (Parseval).
    """
    m = grid.spectrum_size
    freqs = np.arange(m) - 2 * grid.center
    pos = np.arange(m) - m // 2
    angle = -2.0 * np.pi * np.outer(freqs, pos) / m
    scale = 1.0 / np.sqrt(m)
    return np.cos(angle) * scale, np.sin(angle) * scale


def _crop_window(size: int, target: int) -> slice:
    if size < target:
        raise DimensionError(
            f"SLM of size {size} is smaller than the {target}-wide spectrum window")
    start = (size - target) // 2
    return slice(start, start + target)


def spectrum_from_phase_t(phase, aperture: np.ndarray, grid: PixelGrid):
    """Differentiable pump spectrum: (re, im) tensors on the sum grid.

    The modulated field ``aperture * exp(i phase)`` is center-cropped to the
    (2n-1)^2 window and transformed by the unitary centered DFT.
    """
    phase = ad._lift(phase)
    m = grid.spectrum_size
    win = _crop_window(phase.value.shape[0], m)
    ap = np.asarray(aperture, dtype=np.float64)[win, win]
    phase_w = ad.getitem(phase, (win, win))
    u_re = ad.mul(ad.cos(phase_w), ap)
    u_im = ad.mul(ad.sin(phase_w), ap)
    d_re, d_im = _dft_matrices(grid)
    # V = D U D^T with complex products expanded over (re, im)
    t_re = ad.sub(ad.matmul(d_re, u_re), ad.matmul(d_im, u_im))
    t_im = ad.add(ad.matmul(d_re, u_im), ad.matmul(d_im, u_re))
    v_re = ad.sub(ad.matmul(t_re, d_re.T), ad.matmul(t_im, d_im.T))
    v_im = ad.add(ad.matmul(t_re, d_im.T), ad.matmul(t_im, d_re.T))
    return v_re, v_im


def pump_spectrum_from_slm(slm: SlmPhase, grid: PixelGrid) -> PumpSpectrum:
    """Pump angular spectrum produced by an SLM phase pattern."""
    v_re, v_im = spectrum_from_phase_t(ad.constant(slm.phase), slm.aperture, grid)
    return PumpSpectrum(v_re.value + 1j * v_im.value)


# --------------------------------------------------------------------------
# Green's functions and derived statistics
# --------------------------------------------------------------------------

def greens_from_spectrum_t(nu_re, nu_im, mu00, alpha_lz, delta_lz, amplitude,
                           grid: PixelGrid):
    """Differentiable S matrix: (re, im) tensors of shape (n^2, n^2).

    Accepts tensors or plain scalars/arrays for every argument, so the same
    code path serves SLM training (grad to the spectrum) and phasematch
    fitting (grad to the four scalars).
    """
    sum_idx, sum_qx, diff2 = grid.pair_geometry()
    arg = ad.add(
        ad.sub(ad._lift(mu00), ad.mul(ad._lift(alpha_lz), sum_qx)),
        ad.mul(ad._lift(delta_lz), diff2),
    )
    xi = ad.sinc(arg)
    scale = ad.mul(ad._lift(amplitude), xi)
    s_re = ad.mul(ad.take(ad._lift(nu_re), sum_idx), scale)
    s_im = ad.mul(ad.take(ad._lift(nu_im), sum_idx), scale)
    return s_re, s_im


def build_greens(nu: PumpSpectrum, pm: PhasematchParams, grid: PixelGrid) -> GreenPair:
    """Assemble the low-gain Green's pair: C = I, S from pump and phasematch.

    S is exactly symmetric by construction (the sum coordinate and the
    phasematching argument are symmetric under index exchange).
    """
    if nu.values.shape[0] != grid.spectrum_size:
        raise DimensionError(
            f"pump spectrum side {nu.values.shape[0]} does not match grid "
            f"({grid.spectrum_size})")
    s_re, s_im = greens_from_spectrum_t(
        nu.values.real, nu.values.imag,
        pm.mu00, pm.alpha_lz, pm.delta_lz, pm.amplitude, grid)
    return GreenPair.from_s(s_re.value + 1j * s_im.value)


def mean_from_greens_t(s_re, s_im, n: int):
    """Differentiable mean field (n, n): row sums of |S|^2."""
    power = ad.add(ad.square(ad._lift(s_re)), ad.square(ad._lift(s_im)))
    return ad.reshape(ad.sum_(power, axis=1), (n, n))


def mean_field(g: GreenPair) -> MeanField:
    """Mean photons per pixel: diag(S S^dagger) reshaped to the frame."""
    mean = mean_from_greens_t(g.s.real, g.s.imag, g.n)
    return MeanField(mean.value)


def covariance(g: GreenPair) -> CovarianceMatrix:
    """Photon-number covariance (S* S^T o C C^dag) + (S* C^dag o C S^T).

    Implemented for a general C; in the low-gain regime C = I, where the
    first term is the diagonal and the second holds the pair correlations.
    """
    s, c = g.s, g.c
    term1 = (s.conj() @ s.T) * (c @ c.conj().T)
    term2 = (s.conj() @ c.conj().T) * (c @ s.T)
    return CovarianceMatrix((term1 + term2).real)


def jpd_from_s_matrix(s: np.ndarray) -> JointPairDistribution:
    """Normalize the biphoton term of a symmetric S into pair probabilities.

    P({i,j}) = 2 |S_ij|^2 / Tr[S^dag S] for i < j and
    P({i,i}) = |S_ii|^2 / Tr[S^dag S]; the total is 1 by the symmetric-sum
    identity.
    """
    s = np.asarray(s, dtype=np.complex128)
    power = np.abs(s) ** 2
    trace = power.sum()
    if trace <= 0:
        raise DegenerateDistributionError("S is zero everywhere; no pairs to draw")
    n_pixels = s.shape[0]
    i_idx, j_idx = pair_table(n_pixels)
    weight = np.where(i_idx == j_idx, 1.0, 2.0)
    probs = weight * power[i_idx, j_idx] / trace
    return JointPairDistribution(probs=probs, n_pixels=n_pixels)


def biphoton_jpd(g: GreenPair) -> JointPairDistribution:
    return jpd_from_s_matrix(g.s)

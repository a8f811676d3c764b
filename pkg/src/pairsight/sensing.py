"""Stochastic frame acquisition: pair sampling, masking, loss, camera noise.

A shot is produced by drawing photon-pair events from the source's joint
pair distribution, aggregating them into pixel counts, thinning each photon
through the absorptive object (masking happens after sampling), and adding
per-pixel background clicks drawn from the camera's noise pmf. A coherent
(uncorrelated) source instead draws independent Poisson counts from its
mean field.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DimensionError, InvalidParameterError
from .optics import JointPairDistribution, MeanField, PixelGrid, pair_unindex

__all__ = [
    "Frame",
    "FrameSet",
    "ObjectMask",
    "CameraModel",
    "EventIndexer",
    "truncated_geometric_pmf",
    "sample_pairs",
    "events_to_frame",
    "apply_mask",
    "apply_transmission",
    "add_background",
    "coherent_frame",
    "process_raw_frame",
    "acquire_set",
    "sample_frame_batch",
    "mask_frame_batch",
    "background_frame_batch",
]


@dataclass(frozen=True)
class Frame:
    """One camera shot: integer clicks or non-negative processed estimates."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DimensionError("frame must be square")
        if not np.all(np.isfinite(counts)):
            raise InvalidParameterError("frame entries must be finite")
        if counts.min() < 0:
            raise InvalidParameterError("frame entries must be >= 0")
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True)
class FrameSet:
    """An unordered collection of shots, stored as a (S, n, n) array."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or data.shape[1] != data.shape[2]:
            raise DimensionError("frame set must be (S, n, n)")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_frames(cls, frames: list[Frame]) -> "FrameSet":
        if not frames:
            raise DimensionError("cannot build a set from zero frames")
        return cls(np.stack([f.counts for f in frames]))

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.data.shape[0]

    def __iter__(self):
        return (Frame(c) for c in self.data)


@dataclass(frozen=True)
class ObjectMask:
    """Per-pixel transmittance in [0, 1]."""

    transmittance: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.transmittance, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise DimensionError("mask must be square")
        if t.min() < 0 or t.max() > 1:
            raise InvalidParameterError("transmittance must lie in [0, 1]")
        object.__setattr__(self, "transmittance", t)

    @property
    def n(self) -> int:
        return self.transmittance.shape[0]

    @property
    def is_binary(self) -> bool:
        t = self.transmittance
        return bool(np.all((t == 0) | (t == 1)))


def truncated_geometric_pmf(mean: float, k_max: int) -> np.ndarray:
    """Geometric click pmf on {0..k_max} with the requested mean.

    Stand-in for the camera's empirical dark-count distribution; the decay
    ratio is solved so the truncated mean matches exactly.
    """
    if mean <= 0:
        pmf = np.zeros(k_max + 1)
        pmf[0] = 1.0
        return pmf
    k = np.arange(k_max + 1)
    if mean >= k_max / 2:
        raise InvalidParameterError("mean too large for the truncation range")

    def truncated_mean(ratio):
        w = ratio**k
        return (k * w).sum() / w.sum() - mean

    ratio = brentq(truncated_mean, 1e-12, 1 - 1e-12)
    pmf = ratio**k
    return pmf / pmf.sum()


@dataclass(frozen=True)
class CameraModel:
    """EMCCD parameters: gain chain for calibration, click pmf for noise."""

    em_gain: float = 1000.0
    electrons_per_count: float = 1.85
    quantum_efficiency: float = 0.905
    background_pmf: np.ndarray = field(
        default_factory=lambda: truncated_geometric_pmf(0.05, 5))

    def __post_init__(self):
        if self.em_gain <= 0:
            raise InvalidParameterError("em_gain must be positive")
        if not (0 < self.quantum_efficiency <= 1):
            raise InvalidParameterError("quantum_efficiency must be in (0, 1]")
        pmf = np.asarray(self.background_pmf, dtype=np.float64)
        if pmf.ndim != 1 or pmf.min() < 0:
            raise InvalidParameterError("background pmf must be a nonnegative vector")
        if abs(pmf.sum() - 1.0) > 1e-10:
            raise InvalidParameterError("background pmf must sum to 1")
        object.__setattr__(self, "background_pmf", pmf)

    @property
    def background_mean(self) -> float:
        return float(np.arange(len(self.background_pmf)) @ self.background_pmf)


@dataclass(frozen=True)
class EventIndexer:
    """Bijection between ordered pixel pairs and flat event indices.

    Replaces the N^4 x N^2 lookup table with index arithmetic.
    """

    n_pixels: int

    def encode(self, i, j):
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        if np.any((i < 0) | (i >= self.n_pixels) | (j < 0) | (j >= self.n_pixels)):
            raise DimensionError("pixel index out of range")
        return i * self.n_pixels + j

    def decode(self, event):
        event = np.asarray(event, dtype=np.int64)
        if np.any((event < 0) | (event >= self.n_pixels**2)):
            raise DimensionError("event index out of range")
        return np.divmod(event, self.n_pixels)

    @property
    def n_events(self) -> int:
        return self.n_pixels**2


# --------------------------------------------------------------------------
# sampling operations
# --------------------------------------------------------------------------

def sample_pairs(jpd: JointPairDistribution, n_events: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Draw ``n_events`` unordered pair events; shape (n_events, 2), i <= j."""
    if n_events < 0:
        raise InvalidParameterError("n_events must be >= 0")
    if n_events == 0:
        return np.empty((0, 2), dtype=np.int64)
    k = rng.choice(len(jpd.probs), size=n_events, p=jpd.probs)
    i, j = pair_unindex(k, jpd.n_pixels)
    return np.stack([i, j], axis=1)


def events_to_frame(events: np.ndarray, grid: PixelGrid) -> Frame:
    """Aggregate pair events into pixel clicks; a double (i, i) adds 2."""
    events = np.asarray(events, dtype=np.int64).reshape(-1, 2)
    if events.size and (events.min() < 0 or events.max() >= grid.n_pixels):
        raise DimensionError("event pixel index out of range")
    counts = np.bincount(events.ravel(), minlength=grid.n_pixels)
    return Frame(counts.reshape(grid.n, grid.n))


def _thin(counts: np.ndarray, p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    binary = np.all((p == 0) | (p == 1))
    if binary:
        return (counts * p).astype(counts.dtype)
    if not np.issubdtype(counts.dtype, np.integer):
        if not np.all(counts == np.round(counts)):
            raise InvalidParameterError(
                "per-photon thinning needs integer click counts")
        counts = counts.astype(np.int64)
    return rng.binomial(counts, np.broadcast_to(p, counts.shape))


def apply_mask(frame: Frame, mask: ObjectMask,
               rng: np.random.Generator | None = None) -> Frame:
    """Bernoulli-thin each photon by the local transmittance.

    Binary masks act deterministically and need no generator.
    """
    if mask.n != frame.n:
        raise DimensionError("mask and frame dimensions differ")
    t = mask.transmittance
    if rng is None and not mask.is_binary:
        raise InvalidParameterError("fractional masks need a generator")
    return Frame(_thin(frame.counts, t, rng))


def apply_transmission(frame: Frame, t: float,
                       rng: np.random.Generator | None = None) -> Frame:
    """Uniform loss channel: every photon survives with probability t."""
    if not (0.0 <= t <= 1.0):
        raise InvalidParameterError("transmission must lie in [0, 1]")
    uniform = ObjectMask(np.full((frame.n, frame.n), t))
    return apply_mask(frame, uniform, rng)


def add_background(frame: Frame, cam: CameraModel,
                   rng: np.random.Generator) -> Frame:
    """Add an independent draw from the camera's click pmf to every pixel."""
    draws = rng.choice(len(cam.background_pmf), size=frame.counts.shape,
                       p=cam.background_pmf)
    return Frame(frame.counts + draws.astype(frame.counts.dtype))


def coherent_frame(mean: MeanField, budget: float,
                   rng: np.random.Generator) -> Frame:
    """Poisson shot from a mean field rescaled to ``budget`` photons."""
    total = mean.total
    if total <= 0:
        raise InvalidParameterError("mean field is all zero")
    if budget < 0:
        raise InvalidParameterError("photon budget must be >= 0")
    lam = mean.values * (budget / total)
    return Frame(rng.poisson(lam).astype(np.int64))


def process_raw_frame(raw: np.ndarray, bg_mean: np.ndarray,
                      cam: CameraModel) -> Frame:
    """Convert raw camera counts to photon estimates.

    Background-subtract, clamp negatives to zero, then scale by
    electrons_per_count / (quantum_efficiency * em_gain).
    """
    raw = np.asarray(raw, dtype=np.float64)
    bg = np.asarray(bg_mean, dtype=np.float64)
    if raw.shape != bg.shape:
        raise DimensionError("raw and background shapes differ")
    scale = cam.electrons_per_count / (cam.quantum_efficiency * cam.em_gain)
    return Frame(np.maximum(raw - bg, 0.0) * scale)


def acquire_set(source: JointPairDistribution | MeanField, mask: ObjectMask,
                cam: CameraModel, n_events: int, set_size: int,
                rng: np.random.Generator) -> FrameSet:
    """Acquire ``set_size`` independent shots through an object.

    A correlated source draws ``n_events`` pairs per shot; a mean-field
    source draws a Poisson frame with the same photon budget (2 n_events).
    Each shot uses its own deterministically spawned generator stream.
    """
    if set_size < 0:
        raise InvalidParameterError("set_size must be >= 0")
    if isinstance(source, JointPairDistribution):
        n = source.n
    else:
        n = source.values.shape[0]
    if mask.n != n:
        raise DimensionError("mask does not match source grid")
    grid = PixelGrid(n)
    frames = np.zeros((set_size, n, n), dtype=np.int64)
    streams = rng.spawn(set_size)
    for k, sub in enumerate(streams):
        if isinstance(source, JointPairDistribution):
            shot = events_to_frame(sample_pairs(source, n_events, sub), grid)
        else:
            shot = coherent_frame(source, 2.0 * n_events, sub)
        shot = apply_mask(shot, mask, sub)
        shot = add_background(shot, cam, sub)
        frames[k] = shot.counts
    return FrameSet(frames)


# --------------------------------------------------------------------------
# vectorized batch paths (single amortized draw; used by the trainer)
# --------------------------------------------------------------------------

def sample_frame_batch(jpd: JointPairDistribution, n_events: int, count: int,
                       rng: np.random.Generator) -> np.ndarray:
    """``count`` noiseless frames from one amortized categorical draw.

    Returns an int64 array (count, n, n); every frame sums to 2 n_events.
    """
    n = jpd.n
    if count == 0 or n_events == 0:
        return np.zeros((count, n, n), dtype=np.int64)
    k = rng.choice(len(jpd.probs), size=count * n_events, p=jpd.probs)
    i, j = pair_unindex(k, jpd.n_pixels)
    frame_of = np.repeat(np.arange(count, dtype=np.int64), n_events)
    flat = np.concatenate([frame_of * jpd.n_pixels + i,
                           frame_of * jpd.n_pixels + j])
    counts = np.bincount(flat, minlength=count * jpd.n_pixels)
    return counts.reshape(count, n, n)


def mask_frame_batch(frames: np.ndarray, transmittance: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Thin a (count, n, n) batch through a (n, n) or (count, n, n) mask."""
    t = np.broadcast_to(transmittance, frames.shape)
    if np.all((t == 0) | (t == 1)):
        return frames * t.astype(frames.dtype)
    return rng.binomial(frames, t)


def background_frame_batch(frames: np.ndarray, cam: CameraModel,
                           rng: np.random.Generator) -> np.ndarray:
    draws = rng.choice(len(cam.background_pmf), size=frames.shape,
                       p=cam.background_pmf)
    return frames + draws.astype(frames.dtype)

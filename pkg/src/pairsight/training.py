"""Optimizers, the straight-through frame sampler, and the 1:5 schedule.

Training alternates between two parameter groups: the physical illumination
parameters take one epoch of plain SGD while the digital classifier is
frozen, then the classifier takes five epochs of Adam while the source is
frozen. Sampling camera frames is not differentiable, so the sampler's
backward pass treats it as the identity and hands each frame's gradient,
averaged over the batch and set axes, straight to the source's mean field.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, InvalidParameterError
from .optics import JointPairDistribution
from .sensing import (CameraModel, ObjectMask, background_frame_batch,
                      mask_frame_batch, sample_frame_batch)

__all__ = [
    "sgd_step",
    "adaptive_step",
    "AdamState",
    "Sgd",
    "Adam",
    "ste_sample",
    "ScheduleConfig",
    "EpochRecord",
    "run_alternating",
]


# --------------------------------------------------------------------------
# optimizers
# --------------------------------------------------------------------------

def sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """Plain gradient step p - lr * g; skips (with a warning) on bad grads."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise DimensionError("parameter and gradient shapes differ")
    if not np.all(np.isfinite(grad)):
        warnings.warn("non-finite gradient; skipping update", RuntimeWarning)
        return param.copy()
    return param - lr * grad


@dataclass
class AdamState:
    """First/second-moment accumulators with the conventional constants."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidParameterError("learning rate must be positive")


def adaptive_step(param: np.ndarray, grad: np.ndarray,
                  state: AdamState) -> np.ndarray:
    """Adam update with bias correction; mutates ``state``."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise DimensionError("parameter and gradient shapes differ")
    if not np.all(np.isfinite(grad)):
        warnings.warn("non-finite gradient; skipping update", RuntimeWarning)
        return param.copy()
    if state.m is None:
        state.m = np.zeros_like(param)
        state.v = np.zeros_like(param)
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1**state.t)
    v_hat = state.v / (1 - state.beta2**state.t)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Sgd:
    """SGD over a named group of tape leaves."""

    def __init__(self, lr: float):
        if lr < 0:
            raise InvalidParameterError("learning rate must be >= 0")
        self.lr = lr
        self.skipped = 0

    def step(self, tensors: dict[str, ad.Tensor]) -> None:
        for t in tensors.values():
            if t.grad is None:
                continue
            if not np.all(np.isfinite(t.grad)):
                self.skipped += 1
                warnings.warn("non-finite gradient; skipping update", RuntimeWarning)
                continue
            t.value = t.value - self.lr * t.grad


class Adam:
    """Adam over a named group of tape leaves, one state per parameter."""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states: dict[str, AdamState] = {}
        self.skipped = 0

    def step(self, tensors: dict[str, ad.Tensor]) -> None:
        for name, t in tensors.items():
            if t.grad is None:
                continue
            if not np.all(np.isfinite(t.grad)):
                self.skipped += 1
                warnings.warn("non-finite gradient; skipping update", RuntimeWarning)
                continue
            state = self.states.setdefault(
                name, AdamState(lr=self.lr, beta1=self.beta1,
                                beta2=self.beta2, eps=self.eps))
            t.value = adaptive_step(t.value, t.grad, state)


# --------------------------------------------------------------------------
# straight-through sampling
# --------------------------------------------------------------------------

def _mask_array(mask, batch: int, n: int) -> np.ndarray:
    if isinstance(mask, ObjectMask):
        masks = np.broadcast_to(mask.transmittance, (batch, n, n))
    else:
        masks = np.stack([m.transmittance if isinstance(m, ObjectMask) else
                          np.asarray(m, dtype=np.float64) for m in mask])
    if masks.shape != (batch, n, n):
        raise DimensionError(f"need {batch} masks of shape ({n}, {n})")
    return masks


def ste_sample(mean, jpd: JointPairDistribution, mask, cam: CameraModel,
               batch: int, set_size: int, n_events: int,
               rng: np.random.Generator) -> ad.Tensor:
    """Sample a (batch, set, n, n) block of frames with identity gradients.

    Forward: one amortized categorical draw of every pair event the mini
    batch needs, aggregated into frames, thinned through the per-item mask,
    plus camera background; all detached. Backward: the incoming frame
    gradients averaged over the (batch, set) axes flow to ``mean``
    unchanged.
    """
    mean_t = ad._lift(mean)
    n = jpd.n
    if mean_t.value.shape != (n, n):
        raise DimensionError("mean field does not match the pair distribution grid")
    frames = sample_frame_batch(jpd, n_events, batch * set_size, rng)
    masks = _mask_array(mask, batch, n)
    per_shot = np.repeat(masks, set_size, axis=0)
    frames = mask_frame_batch(frames, per_shot, rng)
    frames = background_frame_batch(frames, cam, rng)
    value = frames.reshape(batch, set_size, n, n).astype(np.float64)

    out = ad.Tensor(value, name="sampled_frames")
    if mean_t.requires_grad:
        out.requires_grad = True
        out._edges = [(mean_t, lambda g: np.asarray(g).mean(axis=(0, 1)))]
    return out


# --------------------------------------------------------------------------
# alternating bi-level schedule
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScheduleConfig:
    """One cycle = physical_epochs of SGD then digital_epochs of Adam."""

    total_cycles: int
    physical_epochs: int = 1
    digital_epochs: int = 5

    def __post_init__(self):
        if min(self.total_cycles, self.physical_epochs, self.digital_epochs) < 1:
            raise InvalidParameterError("schedule counts must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    group: str
    loss: float
    train_acc: float
    test_acc: float
    seconds: float


def _group_bytes(tensors: dict[str, ad.Tensor]) -> bytes:
    return b"".join(tensors[k].value.tobytes() for k in sorted(tensors))


def run_alternating(physical: dict[str, ad.Tensor],
                    digital: dict[str, ad.Tensor],
                    epoch_fn, schedule: ScheduleConfig,
                    eval_fn=None) -> list[EpochRecord]:
    """Drive the bi-level loop.

    ``epoch_fn(group, epoch) -> (loss, train_acc)`` runs one epoch of
    batches and steps only the active group's optimizer; this function
    toggles ``requires_grad`` so the tape never builds gradients for the
    frozen group, and verifies the frozen group is bit-identical afterward.
    """
    records: list[EpochRecord] = []
    epoch = 0
    for _ in range(schedule.total_cycles):
        for group, count in (("physical", schedule.physical_epochs),
                             ("digital", schedule.digital_epochs)):
            frozen = digital if group == "physical" else physical
            active = physical if group == "physical" else digital
            for t in frozen.values():
                t.requires_grad = False
                t.grad = None
            for t in active.values():
                t.requires_grad = True
            for _ in range(count):
                before = _group_bytes(frozen)
                start = time.perf_counter()
                loss, train_acc = epoch_fn(group, epoch)
                test_acc = float("nan") if eval_fn is None else eval_fn(epoch)
                seconds = time.perf_counter() - start
                if _group_bytes(frozen) != before:
                    raise RuntimeError(f"frozen {group}-complement group changed")
                records.append(EpochRecord(epoch, group, float(loss),
                                           float(train_acc), float(test_acc),
                                           seconds))
                epoch += 1
    for t in list(physical.values()) + list(digital.values()):
        t.requires_grad = True
    return records

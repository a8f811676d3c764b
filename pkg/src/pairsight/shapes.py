"""Synthetic absorptive objects and the two data-sampling strategies.

Five parametric shape families (disk, ring, cross, triangle, bar) stand in
for a fabricated object set: binary transmittance masks rasterized into the
central object window of the frame, with per-instance rotation and scale
jitter. Each class splits 3 train / 2 test at five instances per class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidParameterError
from .optics import PixelGrid
from .sensing import FrameSet, ObjectMask

__all__ = [
    "SHAPE_FAMILIES",
    "ObjectRecord",
    "generate_shape_dataset",
    "augment_translate",
    "partition_pool_indices",
    "frame_sampler_without_replacement",
    "object_sampler_with_replacement",
]

SHAPE_FAMILIES = ("disk", "ring", "cross", "triangle", "bar")


@dataclass(frozen=True)
class ObjectRecord:
    mask: ObjectMask
    class_id: int
    split: str
    instance_id: int


def _rotate(xx, yy, angle):
    c, s = np.cos(angle), np.sin(angle)
    return c * xx + s * yy, -s * xx + c * yy


def _raster(family: str, region: int, rng: np.random.Generator) -> np.ndarray:
    """Binary region x region window for one jittered shape instance."""
    axis = np.linspace(-1.0, 1.0, region)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    angle = rng.uniform(0.0, 2.0 * np.pi)
    scale = rng.uniform(0.75, 1.0)
    xr, yr = _rotate(xx, yy, angle)
    rr = np.hypot(xx, yy)
    if family == "disk":
        patch = rr <= 0.55 * scale
    elif family == "ring":
        patch = (rr <= 0.8 * scale) & (rr >= 0.45 * scale)
    elif family == "cross":
        w = 0.22 * scale
        patch = ((np.abs(xr) <= w) | (np.abs(yr) <= w)) & (rr <= 0.85)
    elif family == "triangle":
        # equilateral triangle as three half-plane cuts
        r0 = 0.75 * scale
        patch = np.ones_like(xx, dtype=bool)
        for k in range(3):
            nx, ny = np.cos(angle + 2 * np.pi * k / 3), np.sin(angle + 2 * np.pi * k / 3)
            patch &= (nx * xx + ny * yy) <= r0 / 2
    elif family == "bar":
        patch = (np.abs(xr) <= 0.8 * scale) & (np.abs(yr) <= 0.18 * scale)
    else:
        raise InvalidParameterError(f"unknown shape family {family!r}")
    if not patch.any():
        raise InvalidParameterError("rasterized shape is empty")
    return patch.astype(np.float64)


def generate_shape_dataset(n_classes: int = 5, per_class: int = 5,
                           grid: PixelGrid | None = None, region: int = 23,
                           rng: np.random.Generator | None = None
                           ) -> list[ObjectRecord]:
    """Jittered binary masks, one shape family per class, split 3/2 at 5.

    Masks live in the central ``region x region`` window of the ``n x n``
    frame; pixels outside the object are opaque. For other per-class counts
    the train share is ceil(0.6 * per_class).
    """
    grid = grid or PixelGrid(37)
    rng = rng or np.random.default_rng()
    if n_classes < 1 or n_classes > len(SHAPE_FAMILIES):
        raise InvalidParameterError(
            f"n_classes must be in [1, {len(SHAPE_FAMILIES)}]")
    if region > grid.n:
        raise DimensionError(f"object region {region} exceeds frame {grid.n}")
    n_train = int(np.ceil(0.6 * per_class))
    start = (grid.n - region) // 2
    window = slice(start, start + region)
    records = []
    instance = 0
    for class_id in range(n_classes):
        family = SHAPE_FAMILIES[class_id]
        for k in range(per_class):
            full = np.zeros((grid.n, grid.n))
            full[window, window] = _raster(family, region, rng)
            records.append(ObjectRecord(
                mask=ObjectMask(full),
                class_id=class_id,
                split="train" if k < n_train else "test",
                instance_id=instance,
            ))
            instance += 1
    return records


def augment_translate(mask: ObjectMask, max_shift: int,
                      rng: np.random.Generator) -> ObjectMask:
    """Integer translation by uniform offsets in [-max_shift, max_shift]^2.

    Shifts are clipped so the mask support never leaves the frame;
    vacated pixels are zero-filled (opaque).
    """
    if max_shift < 0:
        raise InvalidParameterError("max_shift must be >= 0")
    t = mask.transmittance
    if max_shift == 0 or not t.any():
        return mask
    rows, cols = np.nonzero(t)
    n = mask.n
    dy = int(rng.integers(-max_shift, max_shift + 1))
    dx = int(rng.integers(-max_shift, max_shift + 1))
    dy = int(np.clip(dy, -rows.min(), n - 1 - rows.max()))
    dx = int(np.clip(dx, -cols.min(), n - 1 - cols.max()))
    out = np.zeros_like(t)
    out[rows + dy, cols + dx] = t[rows, cols]
    return ObjectMask(out)


def partition_pool_indices(pool_size: int, set_size: int,
                           rng: np.random.Generator) -> list[np.ndarray]:
    """Disjoint index sets of ``set_size`` covering the pool; remainder dropped."""
    if set_size < 1:
        raise InvalidParameterError("set_size must be >= 1")
    if pool_size < set_size:
        raise InvalidParameterError(
            f"pool of {pool_size} frames cannot fill a set of {set_size}")
    perm = rng.permutation(pool_size)
    n_sets = pool_size // set_size
    return [perm[k * set_size:(k + 1) * set_size] for k in range(n_sets)]


def frame_sampler_without_replacement(pool: FrameSet, set_size: int,
                                      rng: np.random.Generator
                                      ) -> list[FrameSet]:
    """One epoch of disjoint sets from an object's frame pool.

    No frame appears twice within the epoch; leftover frames that cannot
    fill a set are dropped.
    """
    groups = partition_pool_indices(len(pool), set_size, rng)
    return [FrameSet(pool.data[idx]) for idx in groups]


def object_sampler_with_replacement(records: list[ObjectRecord], batch: int,
                                    rng: np.random.Generator
                                    ) -> list[ObjectRecord]:
    """Uniform draws of objects to sense; duplicates give independent sets."""
    if not records:
        raise InvalidParameterError("no records to sample from")
    if batch < 0:
        raise InvalidParameterError("batch must be >= 0")
    picks = rng.integers(0, len(records), size=batch)
    return [records[k] for k in picks]

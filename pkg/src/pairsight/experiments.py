"""Experiment drivers: sources, the CAT training loop, evaluation, audits.

Four illumination kinds share one interface: a differentiable mean field
(where trainable), a joint pair distribution for correlated kinds, and a
frame-batch sampler. The trainer wires a source and a set-transformer into
the alternating schedule; evaluation sweeps photon budget and shot count
into accuracy tables.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import optics, sensing, shapes, training
from . import transformer as tfm
from .config import ExperimentConfig
from .errors import CheckpointError, ConfigError, InvalidParameterError
from .sensing import CameraModel, FrameSet, ObjectMask

__all__ = [
    "make_source",
    "SpdcSlmSource",
    "SpdcIdealSource",
    "SpdcFixedSource",
    "CoherentSource",
    "CatTrainer",
    "EvalResult",
    "pair_survival_probability",
    "correlation_audit_rows",
    "illumination_clicks",
]


def _gaussian_profile(size: int, waist_fraction: float) -> np.ndarray:
    axis = np.arange(size) - size // 2
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    waist = max(waist_fraction * (size // 2), 1e-6)
    return np.exp(-(xx**2 + yy**2) / (2.0 * waist**2))


def keyed_rng(seed: int, *key) -> np.random.Generator:
    """Independent, reproducible stream for a (seed, key...) pair.

    Key elements may be ints or strings; strings hash stably via crc32
    (Python's builtin hash is randomized per process).
    """
    parts = tuple(k if isinstance(k, (int, np.integer))
                  else zlib.crc32(str(k).encode()) for k in key)
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=parts))


# --------------------------------------------------------------------------
# illumination sources
# --------------------------------------------------------------------------

class SpdcSlmSource:
    """Down-conversion source driven by a trainable SLM phase pattern."""

    kind = "spdc-trained"
    is_correlated = True

    def __init__(self, grid: optics.PixelGrid, pm: optics.PhasematchParams,
                 slm_size: int | None = None, aperture_width: float = 0.8,
                 quant_levels: int = 0, trainable: bool = True):
        self.grid = grid
        self.pm = pm
        size = slm_size or grid.spectrum_size
        self.aperture = _gaussian_profile(size, aperture_width)
        self.quant_levels = quant_levels
        self.phase = ad.leaf(np.zeros((size, size)), name="slm.phase")
        self.trainable = trainable
        if not trainable:
            self.phase.requires_grad = False

    @property
    def physical(self) -> dict[str, ad.Tensor]:
        return {"slm.phase": self.phase} if self.trainable else {}

    def _phase_node(self):
        if self.quant_levels:
            return ad.quantize_ste(self.phase, self.quant_levels)
        return self.phase

    def _greens_t(self):
        v_re, v_im = optics.spectrum_from_phase_t(self._phase_node(),
                                                  self.aperture, self.grid)
        return optics.greens_from_spectrum_t(
            v_re, v_im, self.pm.mu00, self.pm.alpha_lz, self.pm.delta_lz,
            self.pm.amplitude, self.grid)

    def mean_tensor(self) -> ad.Tensor:
        s_re, s_im = self._greens_t()
        return optics.mean_from_greens_t(s_re, s_im, self.grid.n)

    def s_matrix(self) -> np.ndarray:
        s_re, s_im = self._greens_t()
        return s_re.value + 1j * s_im.value

    def jpd(self) -> optics.JointPairDistribution:
        return optics.jpd_from_s_matrix(self.s_matrix())

    def mean_field(self) -> optics.MeanField:
        return optics.MeanField(self.mean_tensor().value)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"slm.phase": self.phase.value.copy()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        if arrays["slm.phase"].shape != self.phase.value.shape:
            raise CheckpointError("SLM phase shape mismatch")
        self.phase.value = arrays["slm.phase"].copy()


class SpdcFixedSource(SpdcSlmSource):
    """Plane-wave-pumped source: same optics, frozen flat phase."""

    kind = "spdc-untrained"

    def __init__(self, grid, pm, slm_size=None, aperture_width=0.8):
        super().__init__(grid, pm, slm_size, aperture_width, trainable=False)


class SpdcIdealSource:
    """Free symmetric Green's function, as from engineered phasematching."""

    kind = "spdc-ideal"
    is_correlated = True

    def __init__(self, grid: optics.PixelGrid, pm: optics.PhasematchParams,
                 slm_size: int | None = None, aperture_width: float = 0.8):
        self.grid = grid
        # start from the physical plane-wave source rather than noise
        seed_source = SpdcFixedSource(grid, pm, slm_size, aperture_width)
        s0 = seed_source.s_matrix()
        scale = np.abs(s0).max()
        s0 = s0 / scale if scale > 0 else s0
        self.s_re = ad.leaf(s0.real.copy(), name="ideal.s_re")
        self.s_im = ad.leaf(s0.imag.copy(), name="ideal.s_im")

    @property
    def physical(self) -> dict[str, ad.Tensor]:
        return {"ideal.s_re": self.s_re, "ideal.s_im": self.s_im}

    def _sym(self, t: ad.Tensor) -> ad.Tensor:
        return ad.mul(ad.add(t, ad.transpose(t)), 0.5)

    def mean_tensor(self) -> ad.Tensor:
        return optics.mean_from_greens_t(self._sym(self.s_re),
                                         self._sym(self.s_im), self.grid.n)

    def s_matrix(self) -> np.ndarray:
        re = (self.s_re.value + self.s_re.value.T) / 2
        im = (self.s_im.value + self.s_im.value.T) / 2
        return re + 1j * im

    def jpd(self) -> optics.JointPairDistribution:
        return optics.jpd_from_s_matrix(self.s_matrix())

    def mean_field(self) -> optics.MeanField:
        return optics.MeanField(self.mean_tensor().value)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"ideal.s_re": self.s_re.value.copy(),
                "ideal.s_im": self.s_im.value.copy()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, leafnode in self.physical.items():
            if arrays[name].shape != leafnode.value.shape:
                raise CheckpointError(f"{name} shape mismatch")
            leafnode.value = arrays[name].copy()


class CoherentSource:
    """Untrained uncorrelated illumination: a fixed Gaussian mean field."""

    kind = "coherent"
    is_correlated = False

    def __init__(self, grid: optics.PixelGrid, width_fraction: float = 0.45):
        self.grid = grid
        self.profile = optics.MeanField(_gaussian_profile(grid.n, width_fraction))

    @property
    def physical(self) -> dict[str, ad.Tensor]:
        return {}

    def mean_tensor(self) -> ad.Tensor:
        return ad.constant(self.profile.values)

    def jpd(self):
        return None

    def mean_field(self) -> optics.MeanField:
        return self.profile

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"coherent.profile": self.profile.values.copy()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.profile = optics.MeanField(arrays["coherent.profile"])


def make_source(cfg: ExperimentConfig, quant_levels: int | None = None):
    src = cfg.source
    grid = cfg.grid()
    levels = cfg.train.quant_levels if quant_levels is None else quant_levels
    if src.kind == "coherent":
        return CoherentSource(grid, src.coherent_width)
    if src.kind == "spdc-untrained":
        return SpdcFixedSource(grid, src.phasematch(), src.slm_size,
                               src.aperture_width)
    if src.kind == "spdc-trained":
        return SpdcSlmSource(grid, src.phasematch(), src.slm_size,
                             src.aperture_width, quant_levels=levels)
    if src.kind == "spdc-ideal":
        return SpdcIdealSource(grid, src.phasematch(), src.slm_size,
                               src.aperture_width)
    raise ConfigError(f"unknown source kind {src.kind!r}")


# --------------------------------------------------------------------------
# frame generation without gradients (evaluation, simulate)
# --------------------------------------------------------------------------

def sample_set_batch(source, masks: np.ndarray, cam: CameraModel,
                     n_events: int, set_size: int,
                     rng: np.random.Generator,
                     transmission: float = 1.0) -> np.ndarray:
    """(B, S, n, n) frames through per-item masks; detached from the tape.

    ``transmission`` adds a uniform loss channel on top of the object
    (thinning composes multiplicatively).
    """
    batch = masks.shape[0]
    n = source.grid.n
    count = batch * set_size
    if source.is_correlated:
        frames = sensing.sample_frame_batch(source.jpd(), n_events, count, rng)
    else:
        mean = source.mean_field()
        lam = mean.values / mean.total * (2.0 * n_events)
        frames = rng.poisson(lam, size=(count, n, n)).astype(np.int64)
    effective = np.repeat(masks, set_size, axis=0) * transmission
    frames = sensing.mask_frame_batch(frames, effective, rng)
    frames = sensing.background_frame_batch(frames, cam, rng)
    return frames.reshape(batch, set_size, n, n)


def illumination_clicks(source, n_events: int, cam: CameraModel,
                        region: int) -> float:
    """Mean clicks per shot over the central object window, no object."""
    mean = source.mean_field()
    n = source.grid.n
    start = (n - region) // 2
    window = slice(start, start + region)
    scaled = mean.values / mean.total * (2.0 * n_events)
    return float(scaled[window, window].sum()
                 + cam.background_mean * region * region)


# --------------------------------------------------------------------------
# analytic pair-transmission audit
# --------------------------------------------------------------------------

def pair_survival_probability(jpd: optics.JointPairDistribution,
                              mask: ObjectMask, n_events: int) -> float:
    """P(at least one drawn pair passes the object with both photons)."""
    if n_events < 0:
        raise InvalidParameterError("n_events must be >= 0")
    t = mask.transmittance.ravel()
    i_idx, j_idx = optics.pair_table(jpd.n_pixels)
    per_event = float(jpd.probs @ (t[i_idx] * t[j_idx]))
    return 1.0 - (1.0 - per_event) ** n_events


def correlation_audit_rows(jpd_before, jpd_after, records, n_events: int,
                           split: str = "test") -> list[dict]:
    rows = []
    for rec in records:
        if rec.split != split:
            continue
        rows.append({
            "instance_id": rec.instance_id,
            "class_id": rec.class_id,
            "p_before": pair_survival_probability(jpd_before, rec.mask, n_events),
            "p_after": pair_survival_probability(jpd_after, rec.mask, n_events),
        })
    return rows


# --------------------------------------------------------------------------
# trainer
# --------------------------------------------------------------------------

@dataclass
class EvalResult:
    accuracy: float
    stderr: float
    n_sets: int


class CatTrainer:
    """Correlation-aware training of one source + transformer pair."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.grid = cfg.grid()
        self.cam = cfg.camera.model()
        self.records = shapes.generate_shape_dataset(
            n_classes=cfg.dataset.classes, per_class=cfg.dataset.per_class,
            grid=self.grid, region=cfg.dataset.region,
            rng=keyed_rng(cfg.seed, "dataset"))
        self.train_records = [r for r in self.records if r.split == "train"]
        self.test_records = [r for r in self.records if r.split == "test"]
        self.source = make_source(cfg)
        self.params = tfm.init_transformer(
            self.grid.n_pixels, cfg.dataset.classes,
            dim=cfg.transformer.dim, heads=cfg.transformer.heads,
            ff_mult=cfg.transformer.ff_mult, hidden=cfg.transformer.hidden,
            rng=keyed_rng(cfg.seed, "init"))
        self.trace: list[training.EpochRecord] = []

    # -- data ---------------------------------------------------------------
    def _batch_masks(self, batch_records, rng) -> np.ndarray:
        masks = []
        for rec in batch_records:
            mask = rec.mask
            if self.cfg.train.augment:
                mask = shapes.augment_translate(mask, self.cfg.dataset.max_shift,
                                                rng)
            masks.append(mask.transmittance)
        return np.stack(masks)

    def _epoch_rng(self, epoch: int) -> np.random.Generator:
        return keyed_rng(self.cfg.seed, "train", epoch)

    # -- one training epoch --------------------------------------------------
    def _run_epoch(self, group: str, epoch: int, opt_physical, opt_digital):
        cfg = self.cfg
        rng = self._epoch_rng(epoch)
        n_batches = max(1, int(np.ceil(len(self.train_records)
                                       / cfg.train.batch_size)))
        losses, correct, total = [], 0, 0
        leaves = dict(self.source.physical)
        leaves.update(self.params.tensors)
        for _ in range(n_batches):
            batch_records = shapes.object_sampler_with_replacement(
                self.train_records, cfg.train.batch_size, rng)
            labels = np.array([r.class_id for r in batch_records])
            masks = self._batch_masks(batch_records, rng)
            if self.source.is_correlated:
                jpd = self.source.jpd()
                if group == "physical":
                    mean_node = self.source.mean_tensor()
                else:
                    mean_node = ad.constant(self.source.mean_field().values)
                frames = training.ste_sample(
                    mean_node, jpd, [ObjectMask(m) for m in masks], self.cam,
                    cfg.train.batch_size, cfg.train.set_size, cfg.n_events, rng)
            else:
                raw = sample_set_batch(self.source, masks, self.cam,
                                       cfg.n_events, cfg.train.set_size, rng)
                frames = ad.constant(raw.astype(np.float64))
            logits = tfm.forward_batch_t(frames, self.params)
            loss = tfm.cross_entropy_t(logits, labels)
            ad.zero_grads(leaves.values())
            ad.backward(loss)
            if group == "physical":
                opt_physical.step(self.source.physical)
            else:
                opt_digital.step(self.params.tensors)
            losses.append(float(loss.value))
            correct += int((logits.value.argmax(axis=1) == labels).sum())
            total += len(labels)
        return float(np.mean(losses)), correct / total

    # -- full runs ------------------------------------------------------------
    def train(self, eval_each_epoch: bool = True) -> list[training.EpochRecord]:
        cfg = self.cfg
        opt_physical = training.Sgd(cfg.train.lr_physical)
        opt_digital = training.Adam(lr=cfg.train.lr_digital)

        def epoch_fn(group, epoch):
            return self._run_epoch(group, epoch, opt_physical, opt_digital)

        def eval_fn(epoch):
            result = self.evaluate(sets_per_object=2, rng_key=("epoch", epoch))
            return result.accuracy

        eval_cb = eval_fn if eval_each_epoch else None
        if self.source.physical:
            schedule = training.ScheduleConfig(
                total_cycles=cfg.train.cycles,
                physical_epochs=cfg.train.physical_epochs,
                digital_epochs=cfg.train.digital_epochs)
            self.trace = training.run_alternating(
                self.source.physical, self.params.tensors, epoch_fn, schedule,
                eval_cb)
        else:
            self.trace = self._train_digital_only(epoch_fn, eval_cb)
        return self.trace

    def _train_digital_only(self, epoch_fn, eval_fn):
        import time
        cfg = self.cfg
        records = []
        n_epochs = cfg.train.cycles * cfg.train.digital_epochs
        for epoch in range(n_epochs):
            start = time.perf_counter()
            loss, train_acc = epoch_fn("digital", epoch)
            test_acc = float("nan") if eval_fn is None else eval_fn(epoch)
            records.append(training.EpochRecord(
                epoch, "digital", loss, train_acc, test_acc,
                time.perf_counter() - start))
        return records

    # -- evaluation -----------------------------------------------------------
    def evaluate(self, n_events: int | None = None,
                 set_size: int | None = None,
                 sets_per_object: int | None = None,
                 augment: bool | None = None,
                 transmission: float = 1.0,
                 rng_key=("eval",)) -> EvalResult:
        """Accuracy over freshly sampled test sets.

        With augmentation, repeats over ``augment_passes`` independently
        seeded passes (translated objects each pass) and averages.
        """
        cfg = self.cfg
        n_events = cfg.n_events if n_events is None else n_events
        set_size = cfg.train.set_size if set_size is None else set_size
        sets_per_object = (cfg.eval.sets_per_object if sets_per_object is None
                           else sets_per_object)
        augment = cfg.eval.augment if augment is None else augment
        passes = cfg.eval.augment_passes if augment else 1

        key = tuple(hash(str(k)) % (2**31) for k in rng_key)
        accuracies = []
        n_total = 0
        correct_total = 0
        for pass_idx in range(passes):
            rng = np.random.default_rng(np.random.SeedSequence(
                entropy=self._eval_seq.entropy,
                spawn_key=key + (pass_idx,)))
            masks, labels = [], []
            for rec in self.test_records:
                for _ in range(sets_per_object):
                    mask = rec.mask
                    if augment:
                        mask = shapes.augment_translate(
                            mask, cfg.dataset.max_shift, rng)
                    masks.append(mask.transmittance)
                    labels.append(rec.class_id)
            masks = np.stack(masks)
            labels = np.array(labels)
            hits = 0
            for lo in range(0, len(labels), 128):
                hi = min(lo + 128, len(labels))
                frames = sample_set_batch(self.source, masks[lo:hi], self.cam,
                                          n_events, set_size, rng,
                                          transmission)
                logits = tfm.forward_batch_t(
                    ad.constant(frames.astype(np.float64)), self.params)
                hits += int((logits.value.argmax(axis=1) == labels[lo:hi]).sum())
            accuracies.append(hits / len(labels))
            n_total += len(labels)
            correct_total += hits
        accuracy = float(np.mean(accuracies))
        if passes > 1:
            stderr = float(np.std(accuracies, ddof=1) / np.sqrt(passes))
        else:
            p = correct_total / n_total
            stderr = float(np.sqrt(p * (1 - p) / n_total))
        return EvalResult(accuracy=accuracy, stderr=stderr, n_sets=n_total)

    def eval_surface(self, budgets, shot_grid, threads: int = 1) -> list[dict]:
        """Accuracy per (photon budget, shots) cell, optionally threaded."""
        cells = [(b, s) for b in budgets for s in shot_grid]

        def run_cell(idx):
            budget, shots_ = cells[idx]
            res = self.evaluate(n_events=budget, set_size=shots_,
                                rng_key=("surface", budget, shots_))
            return {
                "budget_pairs": budget,
                "photons_per_shot": 2 * budget,
                "clicks_per_shot": illumination_clicks(
                    self.source, budget, self.cam, self.cfg.dataset.region),
                "shots": shots_,
                "accuracy": res.accuracy,
                "stderr": res.stderr,
                "n_sets": res.n_sets,
            }

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(run_cell, range(len(cells))))
        else:
            rows = [run_cell(i) for i in range(len(cells))]
        return rows

    # -- persistence ----------------------------------------------------------
    def checkpoint_arrays(self) -> dict[str, np.ndarray]:
        arrays = {f"source.{k}": v for k, v in self.source.state_arrays().items()}
        arrays.update({f"model.{k}": v for k, v in self.params.state_dict().items()})
        return arrays

    def checkpoint_meta(self, cfg_hash: str) -> dict:
        return {"source_kind": self.source.kind, "n": self.cfg.n,
                "n_classes": self.cfg.dataset.classes,
                "dim": self.cfg.transformer.dim, "config_sha256": cfg_hash}

    def load_checkpoint_arrays(self, arrays: dict[str, np.ndarray],
                               meta: dict) -> None:
        if meta.get("n") != self.cfg.n:
            raise CheckpointError(
                f"checkpoint grid n={meta.get('n')} != config n={self.cfg.n}")
        if meta.get("source_kind") != self.source.kind:
            raise CheckpointError(
                f"checkpoint source {meta.get('source_kind')!r} != "
                f"config source {self.source.kind!r}")
        source_state = {k[len("source."):]: v for k, v in arrays.items()
                        if k.startswith("source.")}
        model_state = {k[len("model."):]: v for k, v in arrays.items()
                       if k.startswith("model.")}
        self.source.load_state(source_state)
        self.params.load_state(model_state)

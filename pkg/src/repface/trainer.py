"""Mini-batch training loop with auxiliary-sample cleaning and the split pipeline.

Before ``start_epoch`` every sample trains on the baseline margin/mining
loss, gated only by the auxiliary-sample indicator. From ``start_epoch``
on, samples are split into clean / ambiguous / closed-set noise and trained
with their own soft labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from . import pipeline as pl
from .core_math import MarginParams
from .errors import ConfigError, NumericalError
from .evaluation import NoiseMetrics, holdout_accuracy, noise_metrics
from .synth import OPEN, NoisyDataset

AUX_PER_256 = 32


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 0.02
    lr_decay_epochs: tuple[int, ...] | None = None
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    start_epoch: int | None = None
    embed_dim: int = 16
    hidden: tuple[int, ...] = (64,)
    tau: float = pl.DEFAULT_TAU
    alpha: float = pl.DEFAULT_ALPHA
    beta: float = pl.FUSION_BANK_WEIGHT
    n_aux: int = AUX_PER_256
    scale: float = 64.0
    margin: float = 0.5
    t: float = 0.2
    eta_momentum: float = 0.0
    imprint: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.n_aux < self.batch_size:
            raise ConfigError(f"n_aux must satisfy 0 <= n_aux < batch_size, got {self.n_aux}")
        if self.start_epoch is not None and not 0 <= self.start_epoch <= self.epochs:
            raise ConfigError(f"start_epoch must lie in [0, epochs], got {self.start_epoch}")
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if not 0 <= self.eta_momentum < 1:
            raise ConfigError("eta_momentum must lie in [0, 1)")
        if self.embed_dim < 2:
            raise ConfigError("embed_dim must be >= 2")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        try:
            MarginParams(self.scale, self.margin, self.t)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def margin_params(self) -> MarginParams:
        return MarginParams(self.scale, self.margin, self.t)

    @property
    def resolved_start_epoch(self) -> int:
        if self.start_epoch is not None:
            return self.start_epoch
        return int(round(0.2 * self.epochs))

    @property
    def resolved_decay_epochs(self) -> tuple[int, ...]:
        if self.lr_decay_epochs is not None:
            return self.lr_decay_epochs
        return tuple(int(round(f * self.epochs)) for f in (0.3, 0.6, 0.87))

    def lr_at(self, epoch: int) -> float:
        n = sum(epoch >= e for e in self.resolved_decay_epochs)
        return self.lr * self.lr_decay_factor ** n


def seed_streams(seed: int):
    """(init, data order, auxiliary draws) generators."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def init_state(config: TrainConfig, dataset: NoisyDataset, rng) -> mdl.ModelState:
    state = mdl.init_model(dataset.d_in, config.hidden, config.embed_dim, dataset.num_classes, rng)
    if config.imprint:
        mdl.imprint_centers(state, dataset.features, dataset.noisy_labels)
    return state


def epoch_batches(rng, n: int, batch_size: int):
    order = rng.permutation(n)
    return [order[i: i + batch_size] for i in range(0, n, batch_size)]


def aux_count(n_aux: int, batch_size: int, batch_len: int) -> int:
    """Auxiliary samples for a (possibly short) batch, scaled with its size."""
    if n_aux == 0:
        return 0
    m = n_aux if batch_len == batch_size else int(round(n_aux * batch_len / batch_size))
    return max(1, min(m, batch_len - 1)) if batch_len > 1 else 0


@dataclass
class Batch:
    indices: np.ndarray  # dataset rows that receive gradient
    features: np.ndarray  # (B + M, d_in): training rows then auxiliary duplicates
    labels: np.ndarray  # noisy labels, then random labels for the duplicates
    aux_source: np.ndarray  # batch positions the duplicates were copied from

    @property
    def n_train(self) -> int:
        return len(self.indices)

    @property
    def n_aux(self) -> int:
        return len(self.aux_source)


def make_batch(dataset: NoisyDataset, indices, M: int, rng) -> Batch:
    indices = np.asarray(indices)
    if M > len(indices):
        raise ConfigError(f"cannot draw {M} auxiliary samples from a batch of {len(indices)}")
    C = dataset.num_classes
    labels = dataset.noisy_labels[indices].astype(np.int64)
    src = np.sort(rng.choice(len(indices), size=M, replace=False)) if M else np.zeros(0, np.int64)
    rand = (labels[src] + rng.integers(1, C, size=M)) % C
    feats = np.concatenate([dataset.features[indices], dataset.features[indices][src]])
    return Batch(indices, feats, np.concatenate([labels, rand]), src)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    holdout_acc: float | None
    metrics: NoiseMetrics
    cumulative: NoiseMetrics
    n_clean: int
    n_ambiguous: int
    n_noise: int
    n_filtered: int
    lr: float
    mean_eta: float | None
    open_detected_rate: float | None = None

    def to_json(self) -> str:
        def num(v):
            return None if v is None or (isinstance(v, float) and math.isnan(v)) else v

        d = {
            "epoch": self.epoch,
            "loss": self.loss,
            "holdout_acc": num(self.holdout_acc),
            "det_precision": self.metrics.detection_precision,
            "det_recall": self.metrics.detection_recall,
            "corr_acc": self.metrics.correction_accuracy,
            "n_clean": self.n_clean,
            "n_ambiguous": self.n_ambiguous,
            "n_noise": self.n_noise,
            "n_filtered": self.n_filtered,
            "cum_det_precision": self.cumulative.detection_precision,
            "cum_det_recall": self.cumulative.detection_recall,
            "cum_corr_acc": self.cumulative.correction_accuracy,
            "lr": self.lr,
            "eta": num(self.mean_eta),
        }
        if self.open_detected_rate is not None:
            d["open_detected_rate"] = self.open_detected_rate
            d["closed_det_precision"] = self.closed_precision
        return json.dumps(d)

    closed_precision: float | None = None


@dataclass
class TrainResult:
    state: mdl.ModelState
    history: list[EpochRecord]
    bank: pl.MemoryBank
    batch_losses: list[float] = field(default_factory=list)


def train(config: TrainConfig, dataset: NoisyDataset, holdout: NoisyDataset | None = None,
          on_epoch=None, state: mdl.ModelState | None = None) -> TrainResult:
    """Train on ``dataset``; ``on_epoch(record)`` fires after every epoch."""
    C = dataset.num_classes
    rng_init, rng_order, rng_aux = seed_streams(config.seed)
    if state is None:
        state = init_state(config, dataset, rng_init)
    margin = config.margin_params
    bank = pl.MemoryBank(config.beta)
    start = config.resolved_start_epoch
    X = dataset.features
    true = dataset.true_labels
    is_open = true == OPEN
    has_open = bool(is_open.any())
    history, batch_losses = [], []
    cumulative = NoiseMetrics()
    eta_run = None

    for epoch in range(config.epochs):
        full = epoch >= start
        lr = config.lr_at(epoch)
        n = len(dataset)
        cats = np.zeros(n, np.int8)
        keep = np.ones(n, bool)
        nearest = np.zeros(n, np.int64)
        loss_sum = 0.0
        etas = []
        for b, idx in enumerate(epoch_batches(rng_order, n, config.batch_size)):
            M = aux_count(config.n_aux, config.batch_size, len(idx))
            batch = make_batch(dataset, idx, M, rng_aux)
            cos, cache = mdl.forward(state, batch.features)
            B = batch.n_train
            main = cos[:B]
            labels = batch.labels[:B]
            if M:
                aux_cos = cos[np.arange(B, B + M), batch.labels[B:]]
                eta = pl.asc_threshold(aux_cos, config.alpha).eta
                if config.eta_momentum and eta_run is not None:
                    eta = config.eta_momentum * eta_run + (1 - config.eta_momentum) * eta
                eta_run = eta
                etas.append(eta)
                ind = pl.noise_indicator(main[np.arange(B), labels], eta)
            else:
                ind = np.ones(B, np.int8)
            res = pl.batch_loss(main, labels, ind, idx, bank, margin, config.tau, config.beta, full=full)
            if not np.all(np.isfinite(res.losses)):
                bad = np.flatnonzero(~np.isfinite(res.losses))
                branches = sorted({pl.Category(int(res.categories[r])).tag for r in bad})
                raise NumericalError(
                    f"non-finite loss in epoch {epoch}, batch {b} (branches: {', '.join(branches)})",
                    epoch, b, branches)
            batch_loss = float(np.sum(res.losses)) / B
            batch_losses.append(batch_loss)
            loss_sum += float(np.sum(res.losses))
            g = np.zeros_like(cos)
            g[:B] = res.grad / B
            grads = mdl.backward(state, cache, g)
            mdl.sgd_step(state, grads, lr, config.momentum, config.weight_decay)
            if not np.all(np.isfinite(state.centers)):
                raise NumericalError(f"non-finite parameters after epoch {epoch}, batch {b}", epoch, b)
            cats[idx] = res.categories
            keep[idx] = ind.astype(bool)
            nearest[idx] = res.nearest

        slc = full & (cats == pl.Category.NOISE)
        detected = slc | ~keep
        corrected = slc & keep
        closed_only = ~is_open
        m_epoch = noise_metrics(detected[closed_only], dataset.flipped[closed_only],
                                corrected[closed_only], nearest[closed_only],
                                true[closed_only].astype(np.int64))
        if has_open:
            all_m = noise_metrics(detected, dataset.flipped, corrected, nearest, true.astype(np.int64))
            open_rate = float(np.mean(detected[is_open]))
        else:
            all_m, open_rate = m_epoch, None
        cumulative = cumulative + all_m
        rec = EpochRecord(
            epoch=epoch,
            loss=loss_sum / n,
            holdout_acc=holdout_accuracy(state, holdout) if holdout is not None else None,
            metrics=all_m,
            cumulative=cumulative,
            n_clean=int(np.sum(cats == pl.Category.CLEAN)),
            n_ambiguous=int(np.sum(cats == pl.Category.AMBIGUOUS)),
            n_noise=int(np.sum(cats == pl.Category.NOISE)),
            n_filtered=int(np.sum(~keep)),
            lr=lr,
            mean_eta=float(np.mean(etas)) if etas else None,
            open_detected_rate=open_rate,
            closed_precision=m_epoch.detection_precision if has_open else None,
        )
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return TrainResult(state, history, bank, batch_losses)

"""Noise filtering, three-way splitting, label fusion and label correction.

The per-sample functions (``split_sample``, ``assemble_loss``) follow the
textbook form one row at a time; ``batch_loss`` is the vectorised path the
trainer uses. Both share the same conventions, so they must agree to
round-off (checked in the tests and against the loop oracle in
``repface.evaluation``).

Soft labels, the smoothing coefficient k and the N1/N2 branch choices are
treated as targets: they are computed from forward values and carry no
gradient.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import core_math as cm
from .errors import ConfigError, InvariantViolation, NoHistoryError

DEFAULT_TAU = 0.2
DEFAULT_ALPHA = 0.05
# Two weights kept apart on purpose: the bank EMA puts this weight on the
# *new* logit, the fusion step puts it on the *bank* distribution.
BANK_NEW_WEIGHT = 0.9
FUSION_BANK_WEIGHT = 0.9


class Category(enum.IntEnum):
    CLEAN = 0
    AMBIGUOUS = 1
    NOISE = 2

    @property
    def tag(self) -> str:
        return ("Clean", "Ambiguous", "ClosedSetNoise")[self]


@dataclass(frozen=True)
class AscThreshold:
    eta: float
    alpha: float
    aux_cosines: tuple


@dataclass(frozen=True)
class SampleCategory:
    category: Category
    d_i: float
    nearest_negative: int


def asc_threshold(aux_cosines, alpha: float = DEFAULT_ALPHA) -> AscThreshold:
    """Mean cosine of the auxiliary samples to their random labels, plus alpha."""
    aux = np.asarray(aux_cosines, dtype=np.float64).ravel()
    if aux.size == 0:
        raise ConfigError("ASC threshold needs at least one auxiliary sample (M = 0)")
    if alpha < 0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    return AscThreshold(float(aux.mean() + alpha), float(alpha), tuple(aux.tolist()))


def noise_indicator(cos_y, eta):
    """1 keeps the sample, 0 filters it (strictly below eta)."""
    return (np.asarray(cos_y) >= eta).astype(np.int8)[()]


def _tag_from_d(d, tau):
    if d > tau:
        return Category.NOISE
    if d >= 0:
        return Category.AMBIGUOUS
    return Category.CLEAN


def split_sample(logits, target: int, tau: float = DEFAULT_TAU) -> SampleCategory:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[0] < 2:
        raise ConfigError("splitting needs at least two classes")
    neg = logits.copy()
    neg[target] = -np.inf
    j = int(np.argmax(neg))
    d = float(logits[j] - logits[target])
    return SampleCategory(_tag_from_d(d, tau), d, j)


def split_batch(cos, labels, tau: float = DEFAULT_TAU):
    """Vectorised ``split_sample``: returns (d, nearest_negative, categories)."""
    rows = np.arange(cos.shape[0])
    neg = cos.copy()
    neg[rows, labels] = -np.inf
    nearest = np.argmax(neg, axis=1)
    d = cos[rows, nearest] - cos[rows, labels]
    cats = np.where(d > tau, Category.NOISE,
                    np.where(d >= 0, Category.AMBIGUOUS, Category.CLEAN)).astype(np.int8)
    return d, nearest, cats


class MemoryBank:
    """Per-sample record of EMA-accumulated max cosine logits, keyed by class."""

    def __init__(self, beta: float = BANK_NEW_WEIGHT):
        if not 0 < beta < 1:
            raise ConfigError(f"bank beta must lie in (0, 1), got {beta}")
        self.beta = beta
        self.entries: dict[int, dict[int, float]] = {}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, sample_index):
        return sample_index in self.entries

    def __eq__(self, other):
        return isinstance(other, MemoryBank) and self.beta == other.beta and self.entries == other.entries

    def copy(self) -> "MemoryBank":
        out = MemoryBank(self.beta)
        out.entries = {i: dict(r) for i, r in self.entries.items()}
        return out

    def update(self, sample_index: int, class_j: int, cos_max: float) -> None:
        rec = self.entries.setdefault(int(sample_index), {})
        old = rec.get(int(class_j))
        if old is None:
            rec[int(class_j)] = float(cos_max)
        else:
            rec[int(class_j)] = (1.0 - self.beta) * old + self.beta * float(cos_max)

    def soft_label(self, sample_index: int, num_classes: int, label: int) -> np.ndarray:
        """Normalised positive part of the stored logits.

        Falls back to onehot(label) when no stored logit is positive; raises
        ``NoHistoryError`` when the sample has never been recorded.
        """
        rec = self.entries.get(int(sample_index))
        if not rec:
            raise NoHistoryError(sample_index)
        p = np.zeros(num_classes)
        for c, v in rec.items():
            p[c] = max(v, 0.0)
        total = p.sum()
        if total <= 0:
            return onehot(label, num_classes)
        return p / total


def bank_update(bank: MemoryBank, sample_index: int, class_j: int, cos_max: float) -> MemoryBank:
    bank.update(sample_index, class_j, cos_max)
    return bank


def bank_soft_label(bank: MemoryBank, sample_index: int, num_classes: int, label: int) -> np.ndarray:
    return bank.soft_label(sample_index, num_classes, label)


def onehot(index: int, num_classes: int) -> np.ndarray:
    v = np.zeros(num_classes)
    v[index] = 1.0
    return v


def fuse_label(p, y_i: int, beta: float = FUSION_BANK_WEIGHT) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return beta * p + (1.0 - beta) * onehot(y_i, p.shape[0])


def smooth_correct_label(y_i: int, y_j: int, k: float, num_classes: int) -> np.ndarray:
    if y_i == y_j:
        raise InvariantViolation(f"corrected class equals the given label ({y_i})")
    q = np.zeros(num_classes)
    q[y_i] = 1.0 - k
    q[y_j] = k
    return q


@dataclass
class SampleTargets:
    """Gradient-free ingredients of one sample's loss."""

    label: int
    soft_label: np.ndarray
    hard_weight: np.ndarray  # per-class multiplier of t; target entry unused
    k: float = float("nan")


def adjusted_logits(cos_row, targets: SampleTargets, margin: cm.MarginParams):
    z = np.asarray(cos_row, dtype=np.float64) + margin.t * targets.hard_weight
    z[targets.label] = cm.margin_target(cos_row[targets.label], margin.m)
    return z


def loss_given_targets(cos_row, targets: SampleTargets, margin: cm.MarginParams, indicator=1):
    """Loss and d loss / d cos_row with soft label and branches held fixed."""
    if not indicator:
        return 0.0, np.zeros(len(cos_row))
    cos_row = np.asarray(cos_row, dtype=np.float64)
    z = adjusted_logits(cos_row, targets, margin)
    loss = float(cm.soft_ce_loss(z, margin.s, targets.soft_label))
    g, _ = cm.soft_ce_grad(z, margin.s, targets.soft_label)
    y = targets.label
    g[y] *= cm.margin_target_grad(cos_row[y], margin.m)[0]
    return loss, g


def sample_targets(cos_row, label: int, category: SampleCategory | None, margin: cm.MarginParams,
                   bank: MemoryBank | None = None, sample_index: int | None = None,
                   beta: float = FUSION_BANK_WEIGHT, update_bank: bool = True) -> SampleTargets:
    """Build the soft label and mining weights for one sample.

    ``category=None`` means the baseline form (one-hot label, N1 mining).
    For ambiguous samples the bank is updated first, then read. With
    ``bank=None`` label fusion is off and the one-hot label is used.
    """
    cos_row = np.asarray(cos_row, dtype=np.float64)
    C = cos_row.shape[0]
    T_true = cm.margin_target(cos_row[label], margin.m)
    w = cm.is_hard(cos_row, T_true).astype(np.float64)
    w[label] = 0.0
    q = onehot(label, C)
    k = float("nan")
    if category is None or category.category == Category.CLEAN:
        pass
    elif category.category == Category.AMBIGUOUS:
        if bank is not None:
            if update_bank:
                j = int(np.argmax(cos_row))
                bank.update(sample_index, j, cos_row[j])
            try:
                q = fuse_label(bank.soft_label(sample_index, C, label), label, beta)
            except NoHistoryError:
                pass
    else:
        y_j = category.nearest_negative
        k = float(cm.smoothing_coefficient(category.d_i))
        T_corr = cm.margin_target(cos_row[y_j], margin.m)
        w2 = cm.is_hard(cos_row, T_corr).astype(np.float64)
        w = (1.0 - k) * w + k * w2
        w[label] = 0.0
        q = smooth_correct_label(label, y_j, k, C)
    return SampleTargets(label, q, w, k)


def assemble_loss(cos_row, label: int, category: SampleCategory | None, indicator: int,
                  bank: MemoryBank | None, margin: cm.MarginParams, sample_index: int | None = None,
                  beta: float = FUSION_BANK_WEIGHT, update_bank: bool = True):
    """Per-sample loss and gradient w.r.t. the raw cosine row."""
    targets = sample_targets(cos_row, label, category, margin, bank, sample_index, beta, update_bank)
    return loss_given_targets(cos_row, targets, margin, indicator)


@dataclass
class BatchResult:
    losses: np.ndarray
    grad: np.ndarray
    d: np.ndarray
    nearest: np.ndarray
    categories: np.ndarray
    k: np.ndarray
    soft_labels: np.ndarray = field(repr=False)


def batch_loss(cos, labels, indicator, sample_ids, bank: MemoryBank | None,
               margin: cm.MarginParams, tau: float = DEFAULT_TAU,
               beta: float = FUSION_BANK_WEIGHT, full: bool = True) -> BatchResult:
    """Vectorised per-sample losses for one mini-batch of training rows.

    ``full=False`` is the pre-start-epoch form: one-hot labels and N1 mining
    for every sample, only the indicator gating applies. Categories are still
    reported. Bank updates happen in ascending row order.
    """
    cos = np.asarray(cos, dtype=np.float64)
    labels = np.asarray(labels)
    B, C = cos.shape
    rows = np.arange(B)
    d, nearest, cats = split_batch(cos, labels, tau)

    cos_y = cos[rows, labels]
    T_true = cm.margin_target(cos_y, margin.m)
    w = (cos > T_true[:, None]).astype(np.float64)
    q = np.zeros((B, C))
    q[rows, labels] = 1.0
    k = np.full(B, np.nan)

    if full:
        noise = cats == Category.NOISE
        if noise.any():
            kn = cm.smoothing_coefficient(d[noise])
            k[noise] = kn
            yj = nearest[noise]
            T_corr = cm.margin_target(cos[noise, yj], margin.m)
            w2 = (cos[noise] > T_corr[:, None]).astype(np.float64)
            w[noise] = (1.0 - kn)[:, None] * w[noise] + kn[:, None] * w2
            nrows = np.flatnonzero(noise)
            q[nrows, labels[noise]] = 1.0 - kn
            q[nrows, yj] = kn
        if bank is not None:
            amb = np.flatnonzero(cats == Category.AMBIGUOUS)
            top = np.argmax(cos, axis=1)
            for r in amb:
                sid = int(sample_ids[r])
                bank.update(sid, int(top[r]), cos[r, top[r]])
                q[r] = fuse_label(bank.soft_label(sid, C, int(labels[r])), int(labels[r]), beta)

    w[rows, labels] = 0.0
    z = cos + margin.t * w
    z[rows, labels] = T_true
    losses, g = cm.soft_ce_loss_and_grad(z, margin.s, q)
    g[rows, labels] *= cm.margin_target_grad(cos_y, margin.m)[0]
    keep = np.asarray(indicator) != 0
    losses = np.where(keep, losses, 0.0)
    g = np.where(keep[:, None], g, 0.0)
    return BatchResult(losses, g, d, nearest, cats, k, q)

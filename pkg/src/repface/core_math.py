"""Stateless numerical kernels for the margin/mining head and their gradients.

Everything here is a pure function of its arguments. Scalar inputs give
scalar outputs; most kernels also broadcast over numpy arrays, which the
batched pipeline relies on.

Gradient conventions:
  * the N1 branch is picked on forward values and held fixed when
    differentiating, so d N1 / d cos_j = 1 on both branches and the
    threshold receives no gradient;
  * cosines are clamped to [-1 + EPS, 1 - EPS] before any arccos.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, LabelValidationError

EPS = 1e-7
LABEL_SUM_TOL = 1e-9
SLC_SHARPNESS = 10.0


@dataclass(frozen=True)
class MarginParams:
    s: float = 64.0
    m: float = 0.5
    t: float = 0.2

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale s must be positive, got {self.s}")
        if not 0 <= self.m < np.pi / 2:
            raise ValueError(f"margin m must lie in [0, pi/2), got {self.m}")
        if not self.t >= 0:
            raise ValueError(f"mining boost t must be non-negative, got {self.t}")


def normalize(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=axis, keepdims=True)


def clamp_cos(c):
    return np.clip(c, -1.0 + EPS, 1.0 - EPS)


def cosine_logits(embedding, centers):
    """Cosines between unit embedding(s) and unit class centers, clamped.

    ``embedding`` may be a single vector (d,) or a batch (B, d); ``centers``
    is (C, d).
    """
    e = np.asarray(embedding, dtype=np.float64)
    w = np.asarray(centers, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("centers must be a (C, d) matrix")
    if e.shape[-1] != w.shape[1]:
        raise DimensionMismatchError("embedding vs centers", e.shape[-1], w.shape[1])
    return clamp_cos(e @ w.T)


def margin_target(cos_y, m):
    """cos(theta_y + m), the margined target logit.

    Past theta_y + m > pi the angle form turns back up and training can park
    every sample antipodal to its center; there the linear fallback
    cos_y - m sin(m) is used instead.
    """
    c = clamp_cos(cos_y)
    theta = np.arccos(c)
    return np.where(theta + m <= np.pi, np.cos(theta + m), c - m * np.sin(m))[()]


def margin_target_grad(cos_y, m):
    """Partials of margin_target w.r.t. (cos_y, m)."""
    c = clamp_cos(cos_y)
    theta = np.arccos(c)
    angular = theta + m <= np.pi
    s_shift = np.sin(theta + m)
    d_c = np.where(angular, s_shift / np.sin(theta), 1.0)
    d_m = np.where(angular, -s_shift, -(np.sin(m) + m * np.cos(m)))
    return d_c[()], d_m[()]


def margin_fold_distance(cos_y, m):
    """Distance in cosine units from the angle/fallback switch point."""
    return np.abs(clamp_cos(cos_y) - np.cos(np.pi - m))


def is_hard(cos_j, T_val):
    # easy branch at equality
    return np.asarray(cos_j) > np.asarray(T_val)


def hard_mine_n1(t, cos_j, T_val):
    return np.where(is_hard(cos_j, T_val), cos_j + t, cos_j)[()]


def hard_mine_n1_grad(t, cos_j, T_val):
    """Partials of N1 w.r.t. (t, cos_j, T_val) with the branch frozen."""
    hard = is_hard(cos_j, T_val).astype(np.float64)[()]
    return hard, np.ones_like(hard)[()], np.zeros_like(hard)[()]


def smoothing_coefficient(d_i):
    """k = sigmoid(10 d_i)."""
    x = SLC_SHARPNESS * np.asarray(d_i, dtype=np.float64)
    # written to avoid overflow on either tail
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))[()]


def smoothing_coefficient_grad(d_i):
    k = smoothing_coefficient(d_i)
    return SLC_SHARPNESS * k * (1.0 - k)


def hard_mine_n2(t, cos_j, T_true, T_corr, k):
    """Blend of the N1 evaluations under the given-label and corrected thresholds."""
    return (1.0 - k) * hard_mine_n1(t, cos_j, T_true) + k * hard_mine_n1(t, cos_j, T_corr)


def hard_mine_n2_grad(t, cos_j, T_true, T_corr, k):
    """Partials of N2 w.r.t. (t, cos_j, T_true, T_corr, k)."""
    b1 = is_hard(cos_j, T_true).astype(np.float64)
    b2 = is_hard(cos_j, T_corr).astype(np.float64)
    d_t = (1.0 - k) * b1 + k * b2
    d_k = hard_mine_n1(t, cos_j, T_corr) - hard_mine_n1(t, cos_j, T_true)
    zero = np.zeros_like(d_t)
    return d_t[()], np.ones_like(d_t)[()], zero[()], zero[()], np.asarray(d_k)[()]


def validate_soft_label(q, tol=LABEL_SUM_TOL):
    q = np.asarray(q, dtype=np.float64)
    if np.any(q < 0):
        raise LabelValidationError(f"soft label has negative entries: min {q.min()!r}")
    sums = q.sum(axis=-1)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        raise LabelValidationError(
            f"soft label does not sum to 1 (got {np.atleast_1d(sums)[np.atleast_1d(bad)][0]!r})"
        )
    return q


def log_softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    mx = np.max(x, axis=axis, keepdims=True)
    shifted = x - mx
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def soft_ce_loss(adjusted_logits, s, q):
    """Cross-entropy of soft label ``q`` against softmax(s * adjusted_logits).

    Accepts a single row (C,) or a batch (B, C); returns a float or (B,).
    """
    q = validate_soft_label(q)
    lp = log_softmax(s * np.asarray(adjusted_logits, dtype=np.float64))
    return (-np.sum(q * lp, axis=-1))[()]


def soft_ce_grad(adjusted_logits, s, q):
    """Gradients of soft_ce_loss w.r.t. (adjusted_logits, s)."""
    q = validate_soft_label(q)
    z = np.asarray(adjusted_logits, dtype=np.float64)
    p = np.exp(log_softmax(s * z))
    diff = p - q
    return s * diff, np.sum(diff * z, axis=-1)[()]


def soft_ce_loss_and_grad(adjusted_logits, s, q):
    """Loss and gradient w.r.t. the adjusted logits in one pass (batched)."""
    q = validate_soft_label(q)
    z = np.asarray(adjusted_logits, dtype=np.float64)
    lp = log_softmax(s * z)
    loss = -np.sum(q * lp, axis=-1)
    return loss[()], s * (np.exp(lp) - q)

"""Metrics and independent reference implementations.

The oracles here are intentionally naive (pure-Python loops over ``math``)
and share no code with the vectorised loss path, so agreement between the
two is meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model as mdl


@dataclass(frozen=True)
class NoiseMetrics:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    corrected_right: int = 0
    corrected_wrong: int = 0

    @property
    def detection_precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def detection_recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def correction_accuracy(self) -> float:
        return _ratio(self.corrected_right, self.corrected_right + self.corrected_wrong)

    def __add__(self, other: "NoiseMetrics") -> "NoiseMetrics":
        return NoiseMetrics(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                            self.corrected_right + other.corrected_right,
                            self.corrected_wrong + other.corrected_wrong)


def _ratio(num, den):
    # vacuous case counts as perfect
    return 1.0 if den == 0 else num / den


def noise_metrics(detected, flipped, corrected=None, corrected_labels=None, true_labels=None) -> NoiseMetrics:
    """Detection and correction counts.

    ``detected``: sample flagged as noise (SLC-categorised or ASC-filtered).
    ``corrected``: sample received an SLC correction (detected as closed-set
    noise and not filtered); its correction is right when
    ``corrected_labels == true_labels``.
    """
    detected = np.asarray(detected, dtype=bool)
    flipped = np.asarray(flipped, dtype=bool)
    tp = int(np.sum(detected & flipped))
    fp = int(np.sum(detected & ~flipped))
    fn = int(np.sum(~detected & flipped))
    right = wrong = 0
    if corrected is not None:
        corrected = np.asarray(corrected, dtype=bool)
        hit = np.asarray(corrected_labels)[corrected] == np.asarray(true_labels)[corrected]
        right = int(hit.sum())
        wrong = int(hit.size - right)
    return NoiseMetrics(tp, fp, fn, right, wrong)


def nearest_center_accuracy(embeddings, centers, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    pred = np.argmax(np.asarray(embeddings) @ np.asarray(centers).T, axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def holdout_accuracy(state: mdl.ModelState, holdout) -> float:
    """Fraction of clean holdout samples whose max-cosine center is the true class."""
    return nearest_center_accuracy(mdl.embed(state, holdout.features), state.centers,
                                   holdout.true_labels.astype(np.int64))


# -- finite differences -----------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_coordinate: tuple | None
    n_checked: int
    n_rejected: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(f, x, step=1e-5, order=2):
    """Central differences; ``order=4`` uses the five-point stencil."""
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)

    def at(i, delta):
        old = x[i]
        x[i] = old + delta
        v = f(x)
        x[i] = old
        return v

    for i in np.ndindex(x.shape):
        if order == 2:
            g[i] = (at(i, step) - at(i, -step)) / (2 * step)
        else:
            g[i] = (8 * (at(i, step) - at(i, -step)) - (at(i, 2 * step) - at(i, -2 * step))) / (12 * step)
    return g


def check_gradient(f, grad, x, step=1e-5, order=2):
    """Max relative error between ``grad(x)`` and central differences of ``f``."""
    num = numeric_gradient(f, x, step, order)
    err = relative_error(grad(np.array(x, dtype=np.float64)), num)
    idx = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else None
    return float(err.max()) if err.size else 0.0, idx


def fd_gradient_check(f, grad, sampler, n_trials, rng, step=1e-5, tol=1e-4,
                      boundary_distance=None, max_redraws=10_000, order=2) -> GradCheckReport:
    """Run ``check_gradient`` on ``n_trials`` draws of ``sampler(rng)``.

    ``f``/``grad`` take the sample and a coordinate vector: ``f(sample, x)``.
    The sample's differentiable coordinates come from ``sample["x"]``.
    Draws within 10 steps of a branch point (``boundary_distance``) are
    rejected and redrawn.
    """
    worst, where, rejected, done = 0.0, None, 0, 0
    while done < n_trials:
        sample = sampler(rng)
        if boundary_distance is not None and boundary_distance(sample) <= 10 * step:
            rejected += 1
            if rejected > max_redraws:
                raise RuntimeError("sampler keeps landing on branch boundaries")
            continue
        err, idx = check_gradient(lambda x: f(sample, x), lambda x: grad(sample, x), sample["x"], step, order)
        if err >= worst:
            worst, where = err, (done, idx)
        done += 1
    return GradCheckReport(worst, where, done, rejected, tol)


# -- loss oracle ------------------------------------------------------------

def _clamp(c):
    return min(max(c, -1.0 + 1e-7), 1.0 - 1e-7)


def _margined(c, m):
    c = _clamp(c)
    th = math.acos(c)
    if th + m > math.pi:
        return c - m * math.sin(m)
    return math.cos(th + m)


def _n1(t, c, thresh):
    return c + t if c > thresh else c


def naive_sample_loss(cos_row, label, indicator, q, z):
    if not indicator:
        return 0.0
    mx = max(z)
    lse = mx + math.log(sum(math.exp(v - mx) for v in z))
    return -sum(qc * (zc - lse) for qc, zc in zip(q, z) if qc != 0.0)


def naive_loss_oracle(cos, labels, aux_cos, sample_ids, bank_entries, *, s, m, t, tau, alpha, beta,
                      full=True, bank_weight=None):
    """Loop-based per-sample losses for one batch.

    ``aux_cos`` are the auxiliary samples' cosines to their random labels;
    empty disables filtering. ``bank_entries`` is a ``{sample: {class: value}}``
    dict updated in place (pass ``None`` to disable label fusion).
    """
    bank_weight = beta if bank_weight is None else bank_weight
    aux = [float(v) for v in aux_cos]
    eta = (sum(aux) / len(aux) + alpha) if aux else None
    out = []
    for r, row in enumerate(cos):
        row = [float(v) for v in row]
        C = len(row)
        y = int(labels[r])
        keep = 1 if eta is None or row[y] >= eta else 0
        T = _margined(row[y], m)
        j_best, c_best = -1, -math.inf
        for j in range(C):
            if j != y and row[j] > c_best:
                j_best, c_best = j, row[j]
        d = c_best - row[y]
        q = [0.0] * C
        z = [0.0] * C
        for j in range(C):
            z[j] = T if j == y else _n1(t, row[j], T)
        if not full or d < 0:
            q[y] = 1.0
        elif d <= tau:
            q[y] = 1.0
            if bank_entries is not None:
                top = 0
                for j in range(1, C):
                    if row[j] > row[top]:
                        top = j
                rec = bank_entries.setdefault(int(sample_ids[r]), {})
                if top in rec:
                    rec[top] = (1 - bank_weight) * rec[top] + bank_weight * row[top]
                else:
                    rec[top] = row[top]
                total = sum(max(v, 0.0) for v in rec.values())
                p = [0.0] * C
                if total > 0:
                    for c, v in rec.items():
                        p[c] = max(v, 0.0) / total
                else:
                    p[y] = 1.0
                q = [beta * p[c] + (1 - beta) * (1.0 if c == y else 0.0) for c in range(C)]
        else:
            k = 1.0 / (1.0 + math.exp(-10.0 * d))
            T2 = _margined(row[j_best], m)
            for j in range(C):
                if j != y:
                    z[j] = (1 - k) * _n1(t, row[j], T) + k * _n1(t, row[j], T2)
            q[y] = 1 - k
            q[j_best] = k
        out.append(naive_sample_loss(row, y, keep, q, [s * v for v in z]))
    return out


# -- independent baseline training loop ------------------------------------

def plain_mvsoftmax_run(config, dataset):
    """Per-batch mean losses of a plain MV-Softmax run (no filtering, no splitting).

    Shares only the initialisation and the data order with the trainer;
    the head, loss, backprop and optimizer are recoded here.
    """
    from .trainer import epoch_batches, init_state, seed_streams

    rng_init, rng_order, _ = seed_streams(config.seed)
    st = init_state(config, dataset, rng_init)
    Ws = [w.copy() for w in st.weights]
    bs = [b.copy() for b in st.biases]
    centers = st.centers.copy()
    vel = {}
    s, m, t = config.scale, config.margin, config.t
    X_all = dataset.features.astype(np.float64)
    y_all = dataset.noisy_labels.astype(np.int64)
    losses = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        for idx in epoch_batches(rng_order, len(dataset), config.batch_size):
            x, y = X_all[idx], y_all[idx]
            n = len(idx)
            hs = [x]
            for i in range(len(Ws)):
                a = hs[-1] @ Ws[i] + bs[i]
                hs.append(a if i == len(Ws) - 1 else np.tanh(a))
            out = hs[-1]
            nrm = np.sqrt(np.sum(out * out, axis=1))[:, None]
            e = out / nrm
            raw = e @ centers.T
            cos = np.clip(raw, -1 + 1e-7, 1 - 1e-7)
            batch_loss = 0.0
            g_cos = np.zeros_like(cos)
            for r in range(n):
                c = cos[r]
                cy = c[y[r]]
                th = math.acos(cy)
                folded = th + m > math.pi
                T = cy - m * math.sin(m) if folded else math.cos(th + m)
                z = np.where(c > T, c + t, c)
                z[y[r]] = T
                logits = s * z
                mx = logits.max()
                p = np.exp(logits - mx)
                p /= p.sum()
                batch_loss += -math.log(p[y[r]])
                g = s * p
                slope = 1.0 if folded else math.cos(m) + cy * math.sin(m) / math.sqrt(1 - cy * cy)
                g[y[r]] = s * (p[y[r]] - 1.0) * slope
                g_cos[r] = np.where(raw[r] == c, g, 0.0) / n
            losses.append(batch_loss / n)
            grads = {"centers": g_cos.T @ e}
            g_e = g_cos @ centers
            g_out = (g_e - e * np.sum(g_e * e, axis=1, keepdims=True)) / nrm
            for i in reversed(range(len(Ws))):
                if i < len(Ws) - 1:
                    g_out = g_out * (1 - hs[i + 1] ** 2)
                grads[f"w{i}"] = hs[i].T @ g_out
                grads[f"b{i}"] = g_out.sum(axis=0)
                g_out = g_out @ Ws[i].T
            for name in grads:
                if name == "centers":
                    p_ = centers
                    g = grads[name]
                else:
                    p_ = (Ws if name[0] == "w" else bs)[int(name[1:])]
                    g = grads[name] + config.weight_decay * p_
                vel[name] = g.copy() if name not in vel else config.momentum * vel[name] + g
                p_ -= lr * vel[name]
            centers /= np.sqrt(np.sum(centers ** 2, axis=1))[:, None]
    return losses

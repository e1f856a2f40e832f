"""Loss kernels: softmax, normalized-softmax, fixed-margin and adaptive
per-class-margin cosine losses, plus the scale bound and temperature view.

All kernels are pure float64 functions. Feature inputs may be a single
vector (D,) or a batch (B, D); gradients come back in matching shape. Every
softmax is stabilized by max subtraction, so no finite input produces a
non-finite loss.

Gradient convention: losses are averaged over the batch, so a single-sample
call returns exactly the per-sample gradient.
"""

import numpy as np

from .errors import (DegenerateDenominator, DegenerateInput,
                     InvalidProbability, InvalidTemperature,
                     MultiLabelUnsupported, RowLengthMismatch)

NORM_EPSILON = 1e-12
DEFAULT_SCALE = 16.0


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _targets_to_rows(y, n, k):
    """Targets as (n, k) float rows; int labels become one-hot."""
    y = np.asarray(y)
    if y.ndim == 0:
        y = y[None]
    if y.ndim == 1 and np.issubdtype(y.dtype, np.integer):
        rows = np.zeros((n, k))
        rows[np.arange(n), y] = 1.0
        return rows
    rows = np.asarray(y, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape != (n, k):
        raise RowLengthMismatch(f"targets {rows.shape} vs ({n}, {k})")
    return rows


def stable_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_loss(logits, y):
    """Cross entropy over stabilized softmax.

    Returns (loss, dL_dlogits). Soft target rows are used as given, so the
    gradient is (sum_j y_j) * p - y averaged over the batch.
    """
    logits, squeeze = _as_batch(logits)
    n, k = logits.shape
    rows = _targets_to_rows(y, n, k)
    p = stable_softmax(logits)
    loss = -(rows * np.log(p + 1e-300)).sum(axis=1).mean()
    grad = (rows.sum(axis=1, keepdims=True) * p - rows) / n
    return loss, (grad[0] if squeeze else grad)


def cosine_logits(weights, features, norm_epsilon=NORM_EPSILON):
    """cos(theta_j) between each feature row and each class weight row.

    Output clamped to [-1, 1]; touches the clamp only through rounding.
    Raises DegenerateInput when any norm is at or below norm_epsilon.
    """
    cos, *_ = _cosine_parts(weights, features, norm_epsilon)
    return cos


def _cosine_parts(weights, features, norm_epsilon=NORM_EPSILON):
    w = np.asarray(weights, dtype=np.float64)
    f, squeeze = _as_batch(features)
    if f.shape[1] != w.shape[1]:
        raise RowLengthMismatch(f"features D={f.shape[1]} vs weights D={w.shape[1]}")
    wn = np.linalg.norm(w, axis=1)
    fn = np.linalg.norm(f, axis=1)
    if np.any(wn <= norm_epsilon):
        raise DegenerateInput("a class weight row has near-zero norm")
    if np.any(fn <= norm_epsilon):
        raise DegenerateInput("a feature vector has near-zero norm")
    wn = wn + norm_epsilon
    fn = fn + norm_epsilon
    what = w / wn[:, None]
    fhat = f / fn[:, None]
    cos = np.clip(fhat @ what.T, -1.0, 1.0)
    return cos, fhat, what, fn, wn, squeeze


def _cosine_margin_loss(weights, features, y, scale, margin_rows,
                        norm_epsilon=NORM_EPSILON):
    """Shared core: cross entropy over s*(cos - margin) with analytic grads."""
    cos, fhat, what, fn, wn, squeeze = _cosine_parts(weights, features, norm_epsilon)
    n, k = cos.shape
    rows = _targets_to_rows(y, n, k)
    u = scale * (cos - margin_rows)
    p = stable_softmax(u)
    loss = -(rows * np.log(p + 1e-300)).sum(axis=1).mean()
    g = scale * (rows.sum(axis=1, keepdims=True) * p - rows) / n
    # d cos_j / d f = what_j / ||f|| - cos_j * fhat / ||f||
    gc = (g * cos).sum(axis=1, keepdims=True)
    dfeat = (g @ what) / fn[:, None] - gc * fhat / fn[:, None]
    dw = (g.T @ fhat) / wn[:, None] - (g * cos).sum(axis=0)[:, None] * what / wn[:, None]
    if squeeze:
        return loss, dfeat[0], dw, p[0], cos[0]
    return loss, dfeat, dw, p, cos


def nsl_loss(weights, features, y, scale=DEFAULT_SCALE,
             norm_epsilon=NORM_EPSILON):
    """Normalized softmax: cross entropy over scaled cosine logits.

    Returns (loss, dL_dfeatures, dL_dweights, probabilities).
    """
    loss, dfeat, dw, p, _ = _cosine_margin_loss(
        weights, features, y, scale, 0.0, norm_epsilon)
    return loss, dfeat, dw, p


def lmcl_loss(weights, features, y, scale=DEFAULT_SCALE, margin=0.0,
              norm_epsilon=NORM_EPSILON):
    """Fixed-margin cosine loss: margin subtracted from the target cosine only.

    Requires hard single-label targets; soft or multi-hot rows raise
    MultiLabelUnsupported.
    """
    f, _ = _as_batch(features)
    n = f.shape[0]
    k = np.asarray(weights).shape[0]
    y_arr = np.asarray(y)
    if not (np.issubdtype(y_arr.dtype, np.integer) and y_arr.ndim <= 1):
        rows = _targets_to_rows(y, n, k)
        if np.any((rows > 0).sum(axis=1) != 1) or not np.allclose(rows.max(axis=1), 1.0):
            raise MultiLabelUnsupported(
                "target margin needs exactly one positive label per sample")
        y_arr = rows.argmax(axis=1)
    if y_arr.ndim == 0:
        y_arr = y_arr[None]
    margin_rows = np.zeros((n, k))
    margin_rows[np.arange(n), y_arr] = margin
    loss, dfeat, dw, p, _ = _cosine_margin_loss(
        weights, features, y_arr, scale, margin_rows, norm_epsilon)
    return loss, dfeat, dw, p


def mmdb_loss(weights, features, y, margin_rows, scale=DEFAULT_SCALE,
              norm_epsilon=NORM_EPSILON):
    """Adaptive-margin cosine loss: per-class margins on every logit.

    margin_rows is one length-K row per sample (a single row is broadcast).
    Soft target rows are allowed. Returns (loss, dL_dfeatures,
    dL_dweights, probabilities).
    """
    f, squeeze = _as_batch(features)
    n = f.shape[0]
    k = np.asarray(weights).shape[0]
    m = np.asarray(margin_rows, dtype=np.float64)
    if m.ndim == 1:
        if len(m) != k:
            raise RowLengthMismatch(f"margin row length {len(m)} vs {k} classes")
        m = np.broadcast_to(m, (n, k))
    elif m.shape != (n, k):
        raise RowLengthMismatch(f"margin rows {m.shape} vs ({n}, {k})")
    loss, dfeat, dw, p, _ = _cosine_margin_loss(
        weights, features, y, scale, m, norm_epsilon)
    return loss, dfeat, dw, p


def mmdb_backward(weights, features, y, margin_rows, scale=DEFAULT_SCALE,
                  norm_epsilon=NORM_EPSILON):
    """(dL_dfeatures, dL_dweights) of mmdb_loss."""
    _, dfeat, dw, _ = mmdb_loss(weights, features, y, margin_rows, scale,
                                norm_epsilon)
    return dfeat, dw


def scale_lower_bound(margin_row, target, p_target, omega=None):
    """Smallest scale s such that the ideal-configuration probability of the
    target class reaches p_target.

        s_min = ln(1/P - 1) / (m_i + mean_{j != i} m_j - 2)

    Raises InvalidProbability for P outside (0, 1) and
    DegenerateDenominator when the margin term reaches 2.
    """
    m = np.asarray(margin_row, dtype=np.float64)
    k = len(m) if omega is None else omega
    if len(m) != k:
        raise RowLengthMismatch(f"margin row length {len(m)} vs omega {k}")
    if not (0.0 < p_target < 1.0):
        raise InvalidProbability(f"P={p_target} not in (0, 1)")
    others = np.delete(m, target)
    denom = m[target] + others.mean() - 2.0
    if denom >= 0.0:
        raise DegenerateDenominator(f"margin term {denom + 2.0} >= 2")
    return np.log(1.0 / p_target - 1.0) / denom


def ideal_probability(margin_row, target, scale, omega=None):
    """Target-class probability in the ideal configuration, where non-target
    classes act through their mean margin:

        P(s) = 1 / (1 + exp(s * (m_i + mean_{j != i} m_j - 2)))

    This is the exact inverse of scale_lower_bound: evaluating at
    s = scale_lower_bound(m, i, P) returns P for any margin row. At
    omega = 2 the small-s limit is 1/omega.
    """
    m = np.asarray(margin_row, dtype=np.float64)
    k = len(m) if omega is None else omega
    if len(m) != k:
        raise RowLengthMismatch(f"margin row length {len(m)} vs omega {k}")
    others = np.delete(m, target)
    z = scale * (m[target] + others.mean() - 2.0)
    with np.errstate(over="ignore"):
        return float(1.0 / (1.0 + np.exp(z)))


def temperature_probs(weights, features, margin_row, scale=DEFAULT_SCALE,
                      norm_epsilon=NORM_EPSILON):
    """Per-class-temperature reading of the adaptive-margin softmax.

    p_i proportional to exp(s * cos_i) / T_i with T_i = exp(s * m_i);
    algebraically identical to the mmdb_loss probabilities.
    """
    cos, _, _, _, _, squeeze = _cosine_parts(weights, features, norm_epsilon)
    m = np.asarray(margin_row, dtype=np.float64)
    if m.shape[-1] != cos.shape[-1]:
        raise RowLengthMismatch(
            f"margin row length {m.shape[-1]} vs {cos.shape[-1]} classes")
    # computed in log space: s*cos - s*m, stabilized
    p = stable_softmax(scale * cos - scale * m)
    return p[0] if squeeze else p


def kd_softened_probs(logits, temperature):
    """Knowledge-distillation softening: softmax(logits / T)."""
    if not temperature > 0:
        raise InvalidTemperature(f"T={temperature} must be positive")
    logits = np.asarray(logits, dtype=np.float64)
    return stable_softmax(logits / temperature)


def entropy(p, base=2.0):
    """Shannon entropy of probability rows, 0*log0 := 0."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1) / np.log(base)

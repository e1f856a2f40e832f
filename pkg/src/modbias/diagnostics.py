"""Bias diagnosis: divergence of error patterns, probability sharpness, and
2-D feature embeddings.

The central diagnostic compares, per bias-factor value k, the training
label distribution given k against the model's averaged output over the
test samples with factor k that it got wrong. A model leaning on the bias
factor reproduces the training conditional on its mistakes, driving the
divergence toward zero.
"""

import csv
import os

import numpy as np

from . import losses, models
from .errors import (EmptyErrorSet, NotADistribution, ShapeMismatch,
                     TooFewSamples)

SHARPNESS_TEMPERATURES = (0.1, 1.0, 10.0)


def jsd(p, q, base=2.0):
    """Jensen-Shannon divergence between two probability vectors.

    0.5*KL(p||m) + 0.5*KL(q||m) with m = (p+q)/2, log base 2 by default,
    0*log0 := 0. Symmetric; bounded by 1 bit. Raises NotADistribution for
    negative entries, length mismatch, or sums off 1 by more than 1e-9.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise NotADistribution(f"shapes {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0):
            raise NotADistribution(f"{name} has a negative entry")
        if abs(v.sum() - 1.0) > 1e-9:
            raise NotADistribution(f"{name} sums to {v.sum():.12f}")
    m = 0.5 * (p + q)

    def kl(a):
        mask = a > 0
        return (a[mask] * np.log(a[mask] / m[mask])).sum()

    return float(0.5 * (kl(p) + kl(q)) / np.log(base))


def bias_jsd_report(probs, preds, labels, bias, train_counts,
                    mode="mean-softmax", n_factors=10):
    """Per-bias-factor divergence rows.

    For each factor k with at least one wrong prediction: p = row-normalized
    train_counts[k], q = mean of `probs` over wrong test samples with factor
    k (mode="mean-softmax") or the normalized histogram of their predicted
    classes (mode="argmax-hist"). Factors with no wrong predictions are
    absent from the result, not zero.

    Returns a list of {"factor", "n_wrong", "jsd_bits"} dicts.
    """
    probs = np.asarray(probs, dtype=np.float64)
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    bias = np.asarray(bias)
    if not (len(probs) == len(preds) == len(labels) == len(bias)):
        raise ShapeMismatch("probs/preds/labels/bias lengths differ")
    counts = np.asarray(train_counts, dtype=np.float64)
    n_classes = counts.shape[1]
    wrong = preds != labels
    rows = []
    for k in range(n_factors):
        sel = wrong & (bias == k)
        n_wrong = int(sel.sum())
        if n_wrong == 0:
            continue
        row_sum = counts[k].sum()
        if row_sum == 0:
            continue
        p = counts[k] / row_sum
        if mode == "mean-softmax":
            q = probs[sel].mean(axis=0)
            q = q / q.sum()
        elif mode == "argmax-hist":
            hist = np.bincount(preds[sel], minlength=n_classes).astype(np.float64)
            q = hist / hist.sum()
        else:
            raise NotADistribution(f"unknown mode {mode!r}")
        rows.append({"factor": k, "n_wrong": n_wrong, "jsd_bits": jsd(p, q)})
    if not rows:
        raise EmptyErrorSet("no wrong predictions in any bias factor")
    return rows


def model_probs(params, split, loss_kind="softmax", scale=losses.DEFAULT_SCALE,
                margin_table=None, batch=512):
    """Softmax output rows and argmax predictions for a whole split."""
    n = len(split)
    out = np.empty((n, models.N_CLASSES))
    preds = np.empty(n, dtype=np.int64)
    cosine = loss_kind != "softmax"
    for i in range(0, n, batch):
        px = split.float_pixels(slice(i, i + batch))
        feats, scores = models.features_and_scores(params, px, cosine=cosine)
        if loss_kind == "softmax":
            out[i:i + len(feats)] = losses.stable_softmax(scores)
        elif loss_kind == "mmdb" and margin_table is not None:
            rows = margin_table[split.bias[i:i + batch]]
            out[i:i + len(feats)] = losses.stable_softmax(scale * (scores - rows))
        else:
            out[i:i + len(feats)] = losses.stable_softmax(scale * scores)
        preds[i:i + len(feats)] = scores.argmax(axis=1)
    return out, preds


def write_jsd_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["factor", "n_wrong", "jsd_bits"])
        for r in rows:
            w.writerow([r["factor"], r["n_wrong"], f"{r['jsd_bits']:.9f}"])


def sharpness_compare(logits, margin_rows, scale=losses.DEFAULT_SCALE,
                      temperatures=SHARPNESS_TEMPERATURES):
    """Sorted probability profiles: distillation softening vs margin shaping.

    For each temperature T the rows of `logits` go through softmax(logits/T);
    the adaptive entry applies softmax(scale*(logits/scale - margins)) on the
    same rows using `margin_rows`. Rows are sorted ascending and averaged
    into one profile per method.

    Returns {"profiles": {method: length-K profile}, "entropy": {method:
    mean entropy in bits}}.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        logits = logits[None, :]
    result_profiles = {}
    result_entropy = {}
    for t in temperatures:
        p = losses.kd_softened_probs(logits, t)
        result_profiles[f"kd-T{t:g}"] = np.sort(p, axis=1).mean(axis=0)
        result_entropy[f"kd-T{t:g}"] = float(losses.entropy(p).mean())
    m = np.asarray(margin_rows, dtype=np.float64)
    if m.ndim == 1:
        m = np.broadcast_to(m, logits.shape)
    p = losses.stable_softmax(logits - scale * m)
    result_profiles["adaptive"] = np.sort(p, axis=1).mean(axis=0)
    result_entropy["adaptive"] = float(losses.entropy(p).mean())
    return {"profiles": result_profiles, "entropy": result_entropy}


def write_sharpness_csv(result, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "position", "mean_prob", "mean_entropy_bits"])
        for method, profile in result["profiles"].items():
            ent = result["entropy"][method]
            for pos, val in enumerate(profile):
                w.writerow([method, pos, f"{val:.9f}", f"{ent:.9f}"])


def export_embeddings(params, split, projection="linear-2d", classes=(0, 1),
                      batch=512, max_samples=None):
    """Per-sample 2-D coordinates from the feature extractor.

    projection="linear-2d": top-2 principal components of the zero-mean
    feature cloud. projection="cosine-angle": cosine similarity of each
    feature to the weight rows of two chosen classes. Returns (points
    (n, 2), labels, bias). Raises TooFewSamples below 3 samples.
    """
    n = len(split) if max_samples is None else min(len(split), max_samples)
    if n < 3:
        raise TooFewSamples(f"{n} samples; need at least 3")
    feats = np.empty((n, params["W"].shape[1]))
    for i in range(0, n, batch):
        end = min(i + batch, n)
        px = split.float_pixels(slice(i, end))
        feats[i:end], _ = models.forward(params, px)
    if projection == "linear-2d":
        centered = feats - feats.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        pts = centered @ vt[:2].T
    elif projection == "cosine-angle":
        w = params["W"][list(classes)]
        wn = np.linalg.norm(w, axis=1) + 1e-12
        fn = np.linalg.norm(feats, axis=1, keepdims=True) + 1e-12
        pts = (feats / fn) @ (w / wn[:, None]).T
    else:
        raise ShapeMismatch(f"unknown projection {projection!r}")
    return pts, split.labels[:n].copy(), split.bias[:n].copy()


def write_embedding_csv(points, labels, bias, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "label", "bias_factor"])
        for (x, y), lab, b in zip(points, labels, bias):
            w.writerow([f"{x:.9f}", f"{y:.9f}", int(lab), int(b)])


def class_separation_ratio(points, labels):
    """Between-class over within-class scatter of 2-D points."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    overall = points.mean(axis=0)
    between = 0.0
    within = 0.0
    for c in np.unique(labels):
        sel = points[labels == c]
        mu = sel.mean(axis=0)
        between += len(sel) * float(((mu - overall) ** 2).sum())
        within += float(((sel - mu) ** 2).sum())
    if within == 0:
        return np.inf
    return between / within


def svg_scatter(points, labels, path, size=420, pad=16):
    """Minimal SVG scatter of 2-D points colored by label."""
    points = np.asarray(points, dtype=np.float64)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    colors = ["#e6194b", "#3cb44b", "#4363d8", "#ffe119", "#f032e6",
              "#42d4f4", "#f58231", "#911eb4", "#9a6324", "#fabed4"]
    rows = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
            f'height="{size}" viewBox="0 0 {size} {size}">',
            f'<rect width="{size}" height="{size}" fill="white"/>']
    inner = size - 2 * pad
    for (x, y), lab in zip(points, labels):
        cx = pad + (x - lo[0]) / span[0] * inner
        cy = pad + (1 - (y - lo[1]) / span[1]) * inner
        rows.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="2" '
                    f'fill="{colors[int(lab) % 10]}" fill-opacity="0.6"/>')
    rows.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")

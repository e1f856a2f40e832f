"""Bias-conditional counts and the adaptive margin table.

For each bias-factor value k (here: color index) we count training labels,
then turn each count row into margins:

    m[k][i] = 1 - (n[k][i] + eps) / (sum_j n[k][j] + eps)

Frequent classes under a factor get small margins, rare ones large margins.
An all-zero row evaluates to margins of exactly 0 for every class; that
factor was never observed, so it carries no preference. Counts always come
from the training split.
"""

import csv

import numpy as np

from .errors import IndexOutOfRange, NegativeCount, ParseError

DEFAULT_EPSILON = 1e-6


def count_bias(labels, bias_factors, n_factors=10, n_classes=10):
    """Count matrix n[k][i] = number of samples with factor k and label i."""
    labels = np.asarray(labels, dtype=np.int64)
    bias_factors = np.asarray(bias_factors, dtype=np.int64)
    if labels.shape != bias_factors.shape:
        raise IndexOutOfRange(
            f"{len(labels)} labels vs {len(bias_factors)} factors")
    counts = np.zeros((n_factors, n_classes), dtype=np.int64)
    if len(labels) == 0:
        return counts
    if labels.min() < 0 or labels.max() >= n_classes:
        raise IndexOutOfRange(f"label outside [0, {n_classes})")
    if bias_factors.min() < 0 or bias_factors.max() >= n_factors:
        raise IndexOutOfRange(f"bias factor outside [0, {n_factors})")
    np.add.at(counts, (bias_factors, labels), 1)
    return counts


def margins_from_counts(counts, epsilon=DEFAULT_EPSILON):
    """Adaptive margin table from a count matrix."""
    counts = np.asarray(counts, dtype=np.float64)
    row_sums = counts.sum(axis=1, keepdims=True)
    return 1.0 - (counts + epsilon) / (row_sums + epsilon)


def load_counts_csv(path):
    """Read `bias_factor,label,count` rows into a count matrix.

    A header row is permitted. Raises ParseError with the offending line
    number, NegativeCount for negative entries.
    """
    entries = []
    max_k = -1
    max_i = -1
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1 and row[0].strip().lower() == "bias_factor":
                continue
            if len(row) != 3:
                raise ParseError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                k, i, c = int(row[0]), int(row[1]), int(row[2])
            except ValueError:
                raise ParseError(f"line {lineno}: non-integer field") from None
            if c < 0:
                raise NegativeCount(f"line {lineno}: count {c}")
            if k < 0 or i < 0:
                raise ParseError(f"line {lineno}: negative index")
            max_k = max(max_k, k)
            max_i = max(max_i, i)
            entries.append((k, i, c))
    counts = np.zeros((max_k + 1, max_i + 1), dtype=np.int64)
    for k, i, c in entries:
        counts[k, i] += c
    return counts


def save_counts_csv(counts, path):
    """Write a count matrix as `bias_factor,label,count` rows."""
    counts = np.asarray(counts)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bias_factor", "label", "count"])
        for k in range(counts.shape[0]):
            for i in range(counts.shape[1]):
                w.writerow([k, i, int(counts[k, i])])


def save_margin_table(table, path):
    """Write a margin table as `bias_factor,label,margin` with 9 decimals."""
    table = np.asarray(table)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bias_factor", "label", "margin"])
        for k in range(table.shape[0]):
            for i in range(table.shape[1]):
                w.writerow([k, i, f"{table[k, i]:.9f}"])


def load_margin_table(path):
    """Read a `bias_factor,label,margin` CSV back into a matrix."""
    entries = []
    max_k = -1
    max_i = -1
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1 and row[0].strip().lower() == "bias_factor":
                continue
            if len(row) != 3:
                raise ParseError(f"line {lineno}: expected 3 fields, got {len(row)}")
            try:
                k, i, m = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                raise ParseError(f"line {lineno}: bad field") from None
            max_k = max(max_k, k)
            max_i = max(max_i, i)
            entries.append((k, i, m))
    if not entries:
        raise ParseError("empty margin table")
    table = np.zeros((max_k + 1, max_i + 1))
    for k, i, m in entries:
        table[k, i] = m
    return table

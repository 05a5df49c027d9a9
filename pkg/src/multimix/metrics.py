"""Clustering evaluation metrics."""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidInputError


def _contingency(a, b):
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"label vectors differ in length: {a.size} vs {b.size}")
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ua.size, ub.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table, ua, ub


def _comb2(v):
    v = np.asarray(v, dtype=float)
    return v * (v - 1.0) / 2.0


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index between two partitions.

    Two single-cluster partitions (and any pair whose expected and maximum
    index coincide) score 1.0.
    """
    table, _, _ = _contingency(a, b)
    n = table.sum()
    if n == 0:
        raise InvalidInputError("cannot compare empty partitions")
    sum_cells = _comb2(table).sum()
    sum_rows = _comb2(table.sum(axis=1)).sum()
    sum_cols = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_rows * sum_cols / total if total > 0 else 0.0
    maximum = 0.5 * (sum_rows + sum_cols)
    if maximum == expected:
        return 1.0
    return float((sum_cells - expected) / (maximum - expected))


def confusion_matrix(a, b) -> np.ndarray:
    """Cross-tabulation of two labelings (rows: sorted labels of ``a``)."""
    return _contingency(a, b)[0]


def k_error(k_hat: int, k_true: int) -> float:
    """Relative absolute error of an estimated number of clusters."""
    if k_true <= 0:
        raise InvalidInputError("true number of clusters must be positive")
    return abs(k_hat - k_true) / k_true

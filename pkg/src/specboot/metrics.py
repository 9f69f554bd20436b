"""External cluster validity: classification rate and adjusted Rand index."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import comb


def harden(memberships) -> np.ndarray:
    """Row argmax of soft memberships; ties go to the lowest component."""
    return np.argmax(np.asarray(memberships), axis=1)


def contingency_table(true_labels, est_labels) -> np.ndarray:
    true_labels = np.asarray(true_labels)
    est_labels = np.asarray(est_labels)
    if true_labels.shape != est_labels.shape:
        raise ValueError("label vectors differ in length")
    _, t = np.unique(true_labels, return_inverse=True)
    _, e = np.unique(est_labels, return_inverse=True)
    table = np.zeros((t.max(initial=-1) + 1, e.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (t, e), 1)
    return table


def classification_rate(true_labels, est_labels) -> float:
    """Best fraction of agreement over all one-to-one relabelings."""
    table = contingency_table(true_labels, est_labels)
    if table.sum() == 0:
        raise ValueError("empty labelings")
    rows, cols = linear_sum_assignment(table, maximize=True)
    return float(table[rows, cols].sum() / table.sum())


def adjusted_rand_index(true_labels, est_labels) -> float:
    """Hubert-Arabie adjusted Rand index.

    When both partitions are trivial (the expected and maximum index
    coincide) the result is 1.0 by convention.
    """
    table = contingency_table(true_labels, est_labels)
    n = int(table.sum())
    if n < 2:
        raise ValueError("ARI needs at least two observations")
    index = comb(table, 2).sum()
    a = comb(table.sum(axis=1), 2).sum()
    b = comb(table.sum(axis=0), 2).sum()
    expected = a * b / comb(n, 2)
    max_index = 0.5 * (a + b)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))

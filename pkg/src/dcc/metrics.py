"""Agreement between two partitions: AMI, NMI and clustering accuracy.

Entropies are in nats. Expected mutual information follows the
hypergeometric (random permutation) model with fixed marginals.
"""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels
from .errors import LengthMismatchError

_DEGENERATE = 1e-12


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray    # rows: classes of the first labelling, columns: the second

    @property
    def row_sums(self):
        return self.counts.sum(axis=1)

    @property
    def col_sums(self):
        return self.counts.sum(axis=0)

    @property
    def n(self):
        return int(self.counts.sum())


def _labels(c, c_hat):
    c = np.asarray(c).ravel()
    c_hat = np.asarray(c_hat).ravel()
    if len(c) != len(c_hat):
        raise LengthMismatchError(f"labelings have lengths {len(c)} and {len(c_hat)}")
    return c, c_hat


def contingency(c, c_hat):
    """Counts of co-occurring classes, over the classes actually observed."""
    c, c_hat = _labels(c, c_hat)
    _, ci = np.unique(c, return_inverse=True)
    _, ki = np.unique(c_hat, return_inverse=True)
    counts = np.zeros((ci.max(initial=-1) + 1, ki.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(counts, (ci, ki), 1)
    return ContingencyTable(counts)


def _as_table(t):
    return t if isinstance(t, ContingencyTable) else ContingencyTable(np.asarray(t, dtype=np.int64))


def entropy(t, axis=0):
    """Entropy of the row (``axis=0``) or column (``axis=1``) marginal."""
    t = _as_table(t)
    m = t.row_sums if axis == 0 else t.col_sums
    p = m[m > 0] / t.n
    return float(-np.sum(p * np.log(p)))


def mutual_information(t):
    t = _as_table(t)
    n = t.n
    a, b = t.row_sums, t.col_sums
    u, v = np.nonzero(t.counts)
    nij = t.counts[u, v].astype(np.float64)
    return float(np.sum(nij / n * (np.log(n * nij) - np.log(a[u] * b[v].astype(np.float64)))))


def expected_mi(t):
    """Exact expected mutual information under random relabelling with fixed marginals."""
    t = _as_table(t)
    return _kernels.expected_mutual_info(t.row_sums, t.col_sums, t.n)


def _normalized(c, c_hat, adjust):
    t = contingency(c, c_hat)
    mi = mutual_information(t)
    h = np.sqrt(entropy(t, 0) * entropy(t, 1))
    emi = expected_mi(t) if adjust else 0.0
    denom = h - emi
    if denom <= _DEGENERATE:
        # both partitions trivial, the ratio is 0/0
        return 1.0 if _same_partition(t) else 0.0
    return float((mi - emi) / denom)


def _same_partition(t):
    counts = t.counts
    return counts.shape[0] == counts.shape[1] and np.count_nonzero(counts) == counts.shape[0]


def ami(c, c_hat):
    """Mutual information corrected for chance, scaled by the geometric mean entropy."""
    return _normalized(c, c_hat, adjust=True)


def nmi(c, c_hat):
    return _normalized(c, c_hat, adjust=False)


def acc(c, c_hat):
    """Fraction of points correct under the best one-to-one class matching."""
    t = contingency(c, c_hat)
    if t.n == 0:
        return 1.0
    size = max(t.counts.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[:t.counts.shape[0], :t.counts.shape[1]] = t.counts
    rows, cols = linear_sum_assignment(-padded)
    return float(padded[rows, cols].sum()) / t.n


def evaluate(c, c_hat):
    """``{"ami", "nmi", "acc"}`` for true labels ``c`` and predictions ``c_hat``."""
    return {"ami": ami(c, c_hat), "nmi": nmi(c, c_hat), "acc": acc(c, c_hat)}

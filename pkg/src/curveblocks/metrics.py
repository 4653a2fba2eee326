"""Partition agreement metrics: ARI and its co-clustering extension CARI.

CARI applies the adjusted Rand index to the cell partition a co-partition
induces on the n x d grid: cell (i, j) carries the label pair (z_i, w_j).
The contingency table of two induced cell partitions is the Kronecker
product of the row and column contingency tables, so no n*d materialization
is needed. Pair counts use exact integer arithmetic throughout.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .errors import ShapeError


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Integer contingency table of two equal-length label vectors."""
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _comb2(x: int) -> int:
    return x * (x - 1) // 2


def _ari_from_contingency(table: np.ndarray) -> float:
    n = int(table.sum())
    sum_cells = sum(_comb2(int(v)) for v in table.ravel())
    sum_rows = sum(_comb2(int(v)) for v in table.sum(axis=1))
    sum_cols = sum(_comb2(int(v)) for v in table.sum(axis=0))
    total = _comb2(n)
    if total == 0:
        return 1.0
    expected = Fraction(sum_rows * sum_cols, total)
    max_index = Fraction(sum_rows + sum_cols, 2)
    if max_index == expected:
        # both partitions put everything in one cluster (or are all singletons)
        return 1.0 if sum_cells == max_index else 0.0
    return float((sum_cells - expected) / (max_index - expected))


def ari(a, b) -> float:
    """Adjusted Rand index between two label vectors; 1 up to relabeling."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"label vectors must be 1-d and equal length, got {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ShapeError("label vectors must be nonempty")
    return _ari_from_contingency(_contingency(a, b))


def cari(z1, w1, z2, w2) -> float:
    """Co-clustering ARI between the cell partitions induced by (z1, w1) and (z2, w2).

    Equals 1 exactly when the block partitions agree up to a permutation.
    """
    z1 = np.asarray(z1)
    z2 = np.asarray(z2)
    w1 = np.asarray(w1)
    w2 = np.asarray(w2)
    if z1.shape != z2.shape or z1.ndim != 1 or z1.size == 0:
        raise ShapeError(f"row label vectors must be 1-d, nonempty and equal length, got {z1.shape} vs {z2.shape}")
    if w1.shape != w2.shape or w1.ndim != 1 or w1.size == 0:
        raise ShapeError(f"column label vectors must be 1-d, nonempty and equal length, got {w1.shape} vs {w2.shape}")
    cell_table = np.kron(_contingency(z1, z2), _contingency(w1, w2))
    return _ari_from_contingency(cell_table)

"""
Bicluster mining over a normalized feature matrix.

Per-column single-linkage seeds are expanded to all columns, then refined
by greedy single row/column deletion until the mean squared residue drops
to the acceptance threshold. Results are deduplicated and capped.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from config import KgdaError

logger = logging.getLogger(__name__)

# Candidates whose fast score lies this close to the best are rescored exactly
_RESCORE_BAND = 1e-9
_TIE_TOLERANCE = 1e-12


class BiclusterError(KgdaError):
    pass


@dataclass(frozen=True)
class Seed:
    column: int
    rows: tuple[int, ...]


@dataclass(frozen=True)
class MiningParams:
    epsilon: float = 0.05
    min_rows: int | None = None
    delta: float = 0.02
    min_cols: int = 2
    max_biclusters: int = 32
    workers: int = 1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise BiclusterError(f"epsilon must be > 0, got {self.epsilon}")
        if self.delta <= 0:
            raise BiclusterError(f"delta must be > 0, got {self.delta}")
        if self.min_rows is not None and self.min_rows < 2:
            raise BiclusterError(f"min_rows must be >= 2, got {self.min_rows}")
        if self.min_cols < 2:
            raise BiclusterError(f"min_cols must be >= 2, got {self.min_cols}")
        if self.max_biclusters < 1:
            raise BiclusterError(f"max_biclusters must be >= 1, got {self.max_biclusters}")
        if self.workers < 1:
            raise BiclusterError(f"workers must be >= 1, got {self.workers}")

    def resolved_min_rows(self, m):
        if self.min_rows is not None:
            return self.min_rows
        return max(4, math.ceil(0.05 * m))


@dataclass(frozen=True, eq=False)
class Bicluster:
    rows: tuple[int, ...]
    cols: tuple[int, ...]
    msr: float
    centroid: tuple[float, ...]

    @property
    def area(self):
        return len(self.rows) * len(self.cols)

    @property
    def key(self):
        return (tuple(sorted(self.rows)), tuple(sorted(self.cols)))

    def to_dict(self):
        return {'rows': list(self.rows), 'cols': list(self.cols),
                'msr': self.msr, 'centroid': list(self.centroid)}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(int(r) for r in data['rows']), tuple(int(c) for c in data['cols']),
                   float(data['msr']), tuple(float(v) for v in data['centroid']))


class DeletionStep(NamedTuple):
    axis: str
    index: int
    msr: float


def as_array(matrix):
    if isinstance(matrix, np.ndarray):
        return matrix
    return np.asarray(matrix.values, dtype=np.float64)


# ----------------------------------------------------------------------
# Mean squared residue
# ----------------------------------------------------------------------
def _msr_block(block):
    residue = (block
               - block.mean(axis=1, keepdims=True)
               - block.mean(axis=0, keepdims=True)
               + block.mean())
    return float(np.mean(residue * residue))


def msr(matrix, rows, cols):
    rows = list(rows)
    cols = list(cols)
    if not rows or not cols:
        raise BiclusterError("MSR needs at least one row and one column")
    return _msr_block(as_array(matrix)[np.ix_(rows, cols)])


def _deletion_scores(block):
    """Fast MSR of the block after deleting each row, then each column.

    Uses residual sum of squares = sum x^2 - c*sum(rowmean^2)
    - r*sum(colmean^2) + r*c*mean^2 on the reduced block.
    """
    r, c = block.shape
    sq = block * block
    row_sum = block.sum(axis=1)
    col_sum = block.sum(axis=0)
    total = row_sum.sum()
    total_sq = sq.sum()
    row_mean = row_sum / c
    col_mean = col_sum / r

    row_scores = np.full(r, np.inf)
    if r > 1:
        new_col_mean = (col_sum[None, :] - block) / (r - 1)
        resid = (total_sq - sq.sum(axis=1)
                 - c * (np.sum(row_mean ** 2) - row_mean ** 2)
                 - (r - 1) * np.sum(new_col_mean ** 2, axis=1)
                 + (total - row_sum) ** 2 / ((r - 1) * c))
        row_scores = np.maximum(resid, 0.0) / ((r - 1) * c)

    col_scores = np.full(c, np.inf)
    if c > 1:
        new_row_mean = (row_sum[:, None] - block) / (c - 1)
        resid = (total_sq - sq.sum(axis=0)
                 - r * (np.sum(col_mean ** 2) - col_mean ** 2)
                 - (c - 1) * np.sum(new_row_mean ** 2, axis=0)
                 + (total - col_sum) ** 2 / (r * (c - 1)))
        col_scores = np.maximum(resid, 0.0) / (r * (c - 1))
    return row_scores, col_scores


# ----------------------------------------------------------------------
# Seeds
# ----------------------------------------------------------------------
def seed_columns(matrix, epsilon, min_rows):
    """One-dimensional single-linkage clusters per column, cut at epsilon"""
    values = as_array(matrix)
    m, n = values.shape
    seeds = []
    if m < 2:
        return seeds
    for j in range(n):
        column = values[:, j]
        tree = linkage(column.reshape(-1, 1), method='single', metric='euclidean')
        labels = fcluster(tree, t=epsilon, criterion='distance')
        clusters = {}
        for i, label in enumerate(labels):
            clusters.setdefault(label, []).append(i)
        found = [tuple(rows) for rows in clusters.values() if len(rows) >= min_rows]
        found.sort(key=lambda rows: (float(column[list(rows)].min()), rows[0]))
        seeds.extend(Seed(column=j, rows=rows) for rows in found)
    return seeds


# ----------------------------------------------------------------------
# Greedy refinement
# ----------------------------------------------------------------------
def _best_deletion(values, rows, cols, can_drop_row, can_drop_col):
    block = values[np.ix_(rows, cols)]
    row_scores, col_scores = _deletion_scores(block)
    if not can_drop_row:
        row_scores[:] = np.inf
    if not can_drop_col:
        col_scores[:] = np.inf
    fast_best = min(row_scores.min(), col_scores.min())
    if not np.isfinite(fast_best):
        return None

    # Candidate order: rows before columns, each by ascending index
    near = [('row', i) for i in np.flatnonzero(row_scores <= fast_best + _RESCORE_BAND)]
    near += [('col', j) for j in np.flatnonzero(col_scores <= fast_best + _RESCORE_BAND)]
    exact = []
    for axis, pos in near:
        if axis == 'row':
            score = _msr_block(np.delete(block, pos, axis=0))
        else:
            score = _msr_block(np.delete(block, pos, axis=1))
        exact.append((axis, int(pos), score))
    best = min(score for _, _, score in exact)
    for axis, pos, score in exact:
        if score <= best + _TIE_TOLERANCE:
            return axis, pos, score
    return None


def refine(matrix, seed, params, trace=None):
    """Shrink seed.rows x all columns until MSR <= delta, or give up"""
    values = as_array(matrix)
    n = values.shape[1]
    rows = sorted(seed.rows)
    cols = list(range(n))
    if len(rows) < 2 or n < params.min_cols:
        return None

    score = msr(values, rows, cols)
    while score > params.delta:
        choice = _best_deletion(values, rows, cols,
                                can_drop_row=len(rows) > 2,
                                can_drop_col=len(cols) > params.min_cols)
        if choice is None:
            return None
        axis, pos, score = choice
        if axis == 'row':
            removed = rows.pop(pos)
        else:
            removed = cols.pop(pos)
        if trace is not None:
            trace.append(DeletionStep(axis, removed, score))

    score = msr(values, rows, cols)
    if score > params.delta:
        return None
    centroid = values[np.ix_(rows, cols)].mean(axis=0)
    return Bicluster(tuple(rows), tuple(cols), score, tuple(float(v) for v in centroid))


# ----------------------------------------------------------------------
# Dedup and mining
# ----------------------------------------------------------------------
def dedup(biclusters):
    seen = set()
    unique = []
    for bic in biclusters:
        if bic.key in seen:
            continue
        seen.add(bic.key)
        unique.append(bic)
    unique.sort(key=lambda b: (-b.area, b.key))
    return unique


def mine(matrix, params):
    if not getattr(matrix, 'normalized', True):
        raise BiclusterError("mining expects a normalized matrix")
    values = as_array(matrix)
    min_rows = params.resolved_min_rows(values.shape[0])
    seeds = seed_columns(values, params.epsilon, min_rows)

    if params.workers > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            refined = list(pool.map(lambda s: refine(values, s, params), seeds))
    else:
        refined = [refine(values, s, params) for s in seeds]

    found = dedup([b for b in refined if b is not None])
    result = found[:params.max_biclusters]
    logger.info("Mining: %d seeds, %d accepted, %d unique, %d kept",
                len(seeds), sum(b is not None for b in refined), len(found), len(result))
    return result


# ----------------------------------------------------------------------
# JSON dump
# ----------------------------------------------------------------------
def dump_biclusters(biclusters, path):
    text = json.dumps([b.to_dict() for b in biclusters], indent=2, sort_keys=True)
    Path(path).write_text(text + '\n', encoding='utf-8')


def load_biclusters(path):
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise BiclusterError(f"cannot read bicluster dump {path}: {e}") from e
    return [Bicluster.from_dict(item) for item in data]

"""
Property suites run by `app.py check`: each compares a production routine
against a brute-force oracle on random small instances.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from bicluster import MiningParams, Seed, mine, msr, refine
from dataset import normalize_minmax
from evaluation import roc_auc
from synthetic import feature_matrix, planted_additive_block, random_model
from tucker import loss_and_grads, score_all

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleReport:
    name: str
    trials: int
    failures: int
    max_error: float
    passed: bool

    def to_dict(self):
        return {'name': self.name, 'trials': self.trials, 'failures': self.failures,
                'max_error': self.max_error, 'passed': self.passed}


def _report(name, trials, failures, max_error, passed=None):
    failures = int(failures)
    report = OracleReport(name, int(trials), failures, float(max_error),
                          bool(failures == 0 if passed is None else passed))
    logger.info("%s: %d trials, %d failures, max error %.3g", name, trials, failures, max_error)
    return report


# ----------------------------------------------------------------------
# Greedy deletion vs exhaustive argmin
# ----------------------------------------------------------------------
def _exhaustive_choice(values, rows, cols, min_cols):
    """First (axis, index) with minimal MSR, rows before columns"""
    candidates = []
    if len(rows) > 2:
        candidates += [('row', i, msr(values, [r for r in rows if r != i], cols)) for i in rows]
    if len(cols) > min_cols:
        candidates += [('col', j, msr(values, rows, [c for c in cols if c != j])) for j in cols]
    if not candidates:
        return None, []
    best = min(score for _, _, score in candidates)
    return best, candidates


def check_greedy_oracle(trials=200, seed=0, tolerance=1e-9):
    failures = 0
    max_error = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        m = int(rng.integers(2, 7))
        n = int(rng.integers(2, 6))
        values = rng.uniform(0.0, 1.0, size=(m, n))
        params = MiningParams(delta=float(rng.uniform(1e-4, 0.05)), min_rows=2, min_cols=2)
        trace = []
        bic = refine(values, Seed(0, tuple(range(m))), params, trace)

        rows, cols = list(range(m)), list(range(n))
        ok = True
        for step in trace:
            best, candidates = _exhaustive_choice(values, rows, cols, params.min_cols)
            if best is None:
                ok = False
                break
            chosen = next(c for c in candidates if c[2] <= best + 1e-12)
            error = abs(step.msr - best)
            max_error = max(max_error, error)
            if (step.axis, step.index) != chosen[:2] or error > tolerance:
                ok = False
                break
            (rows if step.axis == 'row' else cols).remove(step.index)

        if ok and bic is not None:
            error = abs(bic.msr - msr(values, bic.rows, bic.cols))
            max_error = max(max_error, error)
            ok = error <= tolerance and bic.msr <= params.delta
        failures += not ok
    return _report('greedy_oracle', trials, failures, max_error)


# ----------------------------------------------------------------------
# Planted additive block recovery
# ----------------------------------------------------------------------
def check_planted_recovery(trials=100, seed=0, min_recall=0.9, min_fraction=0.95):
    params = MiningParams(epsilon=0.005, min_rows=4, delta=0.01)
    recovered = 0
    worst = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        values, rows, cols = planted_additive_block(rng)
        found = mine(normalize_minmax(feature_matrix(values)), params)
        best = 0.0
        for bic in found:
            row_recall = len(set(rows) & set(bic.rows)) / len(rows)
            col_recall = len(set(cols) & set(bic.cols)) / len(cols)
            best = max(best, min(row_recall, col_recall))
        worst = max(worst, 1.0 - best)
        recovered += best >= min_recall
    fraction = recovered / trials
    return _report('planted_recovery', trials, trials - recovered, worst,
                   passed=fraction >= min_fraction)


# ----------------------------------------------------------------------
# Tucker scoring and gradients
# ----------------------------------------------------------------------
def brute_force_scores(model, subject, relation):
    E, R, W = model.entity_embeddings, model.relation_embeddings, model.core
    k_e, k_r = W.shape[0], W.shape[1]
    phi = np.zeros(len(E))
    for o in range(len(E)):
        total = 0.0
        for a, b, c in itertools.product(range(k_e), range(k_r), range(k_e)):
            total += W[a, b, c] * E[subject, a] * R[relation, b] * E[o, c]
        phi[o] = total
    return expit(phi)


def check_tucker_contraction(trials=100, seed=0, tolerance=1e-10):
    failures = 0
    max_error = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        m_e, m_r = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        model = random_model(rng, m_e, m_r, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        s, r = int(rng.integers(0, m_e)), int(rng.integers(0, m_r))
        error = float(np.max(np.abs(score_all(model, s, r) - brute_force_scores(model, s, r))))
        max_error = max(max_error, error)
        failures += error > tolerance
    return _report('tucker_contraction', trials, failures, max_error)


def check_gradients(probes=100, seed=0, step=1e-6, tolerance=1e-4):
    """Central differences on single parameter entries, dropout masks held fixed"""
    failures = 0
    max_error = 0.0
    for probe in range(probes):
        rng = np.random.default_rng([seed, probe])
        m_e, m_r = 5, 2
        model = random_model(rng, m_e, m_r, 3, 2, batch_norm=bool(probe % 2),
                             input_dropout=0.2, hidden_dropout1=0.2, hidden_dropout2=0.2)
        for param in model.params.values():
            param *= 0.5
        # distinct subjects keep the batch variance away from zero
        queries = np.column_stack([rng.choice(m_e, size=3, replace=False), rng.integers(0, m_r, size=3)])
        targets = (rng.uniform(size=(3, m_e)) < 0.4).astype(np.float64)
        mask_seed = int(rng.integers(0, 2**31))

        def loss():
            return loss_and_grads(model, queries, targets, rng=np.random.default_rng(mask_seed))[0]

        _, grads = loss_and_grads(model, queries, targets, rng=np.random.default_rng(mask_seed))
        name = sorted(model.params)[int(rng.integers(0, len(model.params)))]
        param = model.params[name]
        index = tuple(int(rng.integers(0, d)) for d in param.shape)
        original = param[index]
        param[index] = original + step
        plus = loss()
        param[index] = original - step
        minus = loss()
        param[index] = original

        numeric = (plus - minus) / (2 * step)
        analytic = grads[name][index]
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)
        max_error = max(max_error, error)
        failures += error > tolerance
    return _report('gradients', probes, failures, max_error)


# ----------------------------------------------------------------------
# AUC vs pairwise Mann-Whitney count
# ----------------------------------------------------------------------
def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def check_auc(trials=1000, seed=0, tolerance=1e-12):
    failures = 0
    max_error = 0.0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        n = int(rng.integers(2, 21))
        labels = rng.integers(0, 2, size=n)
        labels[0], labels[1] = 0, 1
        rng.shuffle(labels)
        # few distinct values so ties are common
        scores = rng.integers(0, max(2, n // 2), size=n) / 4.0
        _, auc = roc_auc(scores, labels)
        error = abs(auc - pairwise_auc(scores, labels))
        max_error = max(max_error, error)
        failures += error > tolerance
    return _report('auc', trials, failures, max_error)


SUITES = {
    'greedy_oracle': check_greedy_oracle,
    'planted_recovery': check_planted_recovery,
    'tucker_contraction': check_tucker_contraction,
    'gradients': check_gradients,
    'auc': check_auc,
}

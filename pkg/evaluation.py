"""
Evaluation: confusion metrics, ROC/AUC, paired training-ratio sweeps,
the variance-reduction experiment, and CSV / workbook reports.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from typing import NamedTuple

import numpy as np
import pandas as pd
import xlsxwriter

from augment import distance_features, quantize_all
from bicluster import Bicluster, MiningParams, mine
from config import KgdaError
from dataset import UNLABELED, normalize_minmax, split_by_ratio
from kgraph import add_reciprocals, default_labels, fuse, holdout, patient_entity, triples_from_table
from synthetic import coherent_signal_plus_noise, feature_matrix
from tucker import diagnosis_scores, train

logger = logging.getLogger(__name__)

METRICS = ('acc', 'sen', 'spe', 'f1', 'auc')
NOT_APPLICABLE = 'n/a'
# Fixed so the workbook bytes depend only on the results
WORKBOOK_CREATED = datetime(2000, 1, 1)

# Published single-run numbers; BI-RADS and TI-RADS data are private
PUBLISHED_REFERENCE = {
    'BI-RADS': {
        0.1: {'baseline': (0.6492, 0.5615, 0.9926, 0.7192), 'augmented': (0.7074, 0.6361, 0.9925, 0.7767)},
        0.3: {'baseline': (0.9587, 0.9814, 0.8798, 0.9736), 'augmented': (0.9644, 0.9888, 0.8798, 0.9773)},
        0.5: {'baseline': (0.9650, 0.9817, 0.9179, 0.9764), 'augmented': (0.9663, 0.9781, 0.9333, 0.9772)},
        0.7: {'baseline': (0.9731, 0.9849, 0.9385, 0.9820), 'augmented': (0.9753, 0.9879, 0.9385, 0.9835)},
        0.9: {'baseline': (0.9597, 0.9724, 0.9249, 0.9724), 'augmented': (0.9597, 0.9816, 0.9250, 0.9727)},
    },
    'TI-RADS': {
        0.1: {'baseline': (0.8347, 0.9999, 0.6733, 0.8566), 'augmented': (0.8662, 0.9999, 0.7355, 0.8807)},
    },
    'POP': {
        0.1: {'baseline': (0.443, 0.5, 0.2631, 0.5769), 'augmented': (0.5569, 0.5666, 0.5263, 0.6601)},
    },
}


class EvaluationError(KgdaError):
    pass


# ----------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise EvaluationError(f"confusion counts must be nonnegative: {self}")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, labels, predictions):
        labels = np.asarray(labels, dtype=np.int64)
        predictions = np.asarray(predictions, dtype=np.int64)
        return cls(
            tp=int(np.sum((labels == 1) & (predictions == 1))),
            fp=int(np.sum((labels == 0) & (predictions == 1))),
            tn=int(np.sum((labels == 0) & (predictions == 0))),
            fn=int(np.sum((labels == 1) & (predictions == 0))),
        )


class Metrics(NamedTuple):
    """None marks a metric whose denominator is zero"""
    acc: float | None
    sen: float | None
    spe: float | None
    f1: float | None


def _ratio(num, den):
    return num / den if den else None


def metrics_from_confusion(counts):
    if counts.total == 0:
        raise EvaluationError("no patients were evaluated")
    return Metrics(
        acc=(counts.tp + counts.tn) / counts.total,
        sen=_ratio(counts.tp, counts.tp + counts.fn),
        spe=_ratio(counts.tn, counts.tn + counts.fp),
        f1=_ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn),
    )


class RocPoint(NamedTuple):
    fpr: float
    tpr: float
    threshold: float


def roc_auc(scores, labels):
    """ROC over every distinct threshold and its trapezoidal area.

    Tied scores move the curve diagonally, which makes the area equal to
    the midrank Mann-Whitney statistic. The first point (0, 0) has an
    infinite threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvaluationError("scores and labels must be 1-D arrays of equal length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError(f"ROC needs both classes, got {n_pos} positive and {n_neg} negative")

    order = np.argsort(-scores, kind='mergesort')
    sorted_scores = scores[order]
    positive = (labels[order] == 1).astype(np.int64)
    ends = np.r_[np.flatnonzero(np.diff(sorted_scores) != 0), len(scores) - 1]
    tps = np.r_[0, np.cumsum(positive)[ends]]
    fps = np.r_[0, np.cumsum(1 - positive)[ends]]

    # integer trapezoid sum, divided once
    area = int(np.sum(np.diff(fps) * (tps[1:] + tps[:-1])))
    auc = area / (2 * n_pos * n_neg)

    thresholds = np.r_[np.inf, sorted_scores[ends]]
    points = [RocPoint(fp / n_neg, tp / n_pos, float(t)) for tp, fp, t in zip(tps, fps, thresholds)]
    return points, auc


@dataclass(frozen=True)
class MetricReport:
    acc: float | None
    sen: float | None
    spe: float | None
    f1: float | None
    auc: float | None
    roc_points: tuple = ()
    counts: ConfusionCounts | None = None

    def metric(self, name):
        return getattr(self, name)


def evaluate_patients(model, graph, labels, patients, roc_score='raw'):
    """Score held-out patients on the diagnosis relation.

    `labels` holds 1 (positive), 0 (negative) or UNLABELED per patient;
    unlabeled patients are skipped.
    """
    labels = np.asarray(labels, dtype=np.int64)
    keep = labels != UNLABELED
    patients = [p for p, k in zip(patients, keep) if k]
    labels = labels[keep]
    if not patients:
        raise EvaluationError("no labeled patients to evaluate")

    p_neg, p_pos = diagnosis_scores(model, graph, patients)
    predictions = (p_pos > p_neg).astype(np.int64)
    counts = ConfusionCounts.from_predictions(labels, predictions)
    metrics = metrics_from_confusion(counts)

    scores = p_pos if roc_score == 'raw' else p_pos / (p_pos + p_neg)
    if np.any(labels == 1) and np.any(labels == 0):
        points, auc = roc_auc(scores, labels)
    else:
        points, auc = (), None
    return MetricReport(*metrics, auc=auc, roc_points=tuple(points), counts=counts)


# ----------------------------------------------------------------------
# Graph preparation shared by sweeps and the pipeline stages
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class PreparedGraphs:
    s_o: frozenset
    s_a: frozenset
    labels: tuple[str, str]
    biclusters: tuple
    features: tuple
    quantized: tuple


def mine_scoped(normalized, params, train_ids=None):
    """Mine on all rows, or only on `train_ids` with rows mapped back"""
    if train_ids is None:
        return mine(normalized, params)
    index = normalized.row_indices(train_ids)
    found = mine(normalized.values[index], params)
    return [Bicluster(tuple(int(index[r]) for r in b.rows), b.cols, b.msr, b.centroid) for b in found]


def prepare_graphs(raw, config, train_ids=None):
    scope = config.evaluation
    normalized = normalize_minmax(raw, train_ids if scope.normalization_scope == 'train' else None)
    biclusters = mine_scoped(normalized, config.mining,
                             train_ids if scope.mining_scope == 'train' else None)
    features = distance_features(normalized, biclusters)
    quantized = quantize_all(features, config.augment.n_bins)
    s_o, s_a = triples_from_table(raw, {q.feature.name: q.bins for q in quantized},
                                  n_bins=config.augment.n_bins,
                                  max_levels=config.augment.max_levels)
    return PreparedGraphs(s_o, s_a, default_labels(raw), tuple(biclusters),
                          tuple(features), tuple(quantized))


def variant_graph(prepared, variant, config):
    s_a = prepared.s_a if variant == 'augmented' else frozenset()
    graph = fuse(prepared.s_o, s_a, prepared.labels)
    if config.graph.reciprocal:
        graph = add_reciprocals(graph)
    return graph


# ----------------------------------------------------------------------
# Ratio sweep
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class CellResult:
    ratio: float
    variant: str
    seed: int
    report: MetricReport
    test_ids: tuple[str, ...]
    loss_history: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class SweepResult:
    dataset: str
    ratios: tuple[float, ...]
    variants: tuple[str, ...]
    seeds: tuple[int, ...]
    cells: tuple[CellResult, ...]

    def cell(self, ratio, variant, seed):
        for c in self.cells:
            if c.ratio == ratio and c.variant == variant and c.seed == seed:
                return c
        raise EvaluationError(f"no cell ratio={ratio} variant={variant} seed={seed}")

    def summary(self):
        """Mean over seeds per (ratio, variant), skipping undefined values"""
        rows = []
        for ratio in self.ratios:
            means = {}
            for variant in self.variants:
                cells = [c for c in self.cells if c.ratio == ratio and c.variant == variant]
                row = {'dataset': self.dataset, 'ratio': ratio, 'variant': variant}
                for name in METRICS:
                    defined = [c.report.metric(name) for c in cells if c.report.metric(name) is not None]
                    row[name] = float(np.mean(defined)) if defined else None
                    row[f'n_{name}'] = len(defined)
                means[variant] = row
                rows.append(row)
            if 'baseline' in means and 'augmented' in means:
                row = {'dataset': self.dataset, 'ratio': ratio, 'variant': 'improvement'}
                for name in METRICS:
                    a, b = means['augmented'][name], means['baseline'][name]
                    row[name] = a - b if a is not None and b is not None else None
                    row[f'n_{name}'] = min(means['augmented'][f'n_{name}'], means['baseline'][f'n_{name}'])
                rows.append(row)
        return rows


def run_cell(raw, config, prepared, ratio, variant, seed):
    split = split_by_ratio(raw, ratio, seed)
    if prepared is None:
        prepared = prepare_graphs(raw, config, split.train_ids)
    graph = variant_graph(prepared, variant, config)
    test_patients = [patient_entity(sid) for sid in split.test_ids]
    train_graph = holdout(graph, test_patients, strict=config.graph.strict_holdout)
    model, history = train(train_graph, dataclasses.replace(config.train, seed=seed))
    labels = raw.labels[raw.row_indices(split.test_ids)]
    report = evaluate_patients(model, graph, labels, test_patients, config.evaluation.roc_score)
    return CellResult(ratio, variant, seed, report, split.test_ids, tuple(history))


def _run_cell_job(job):
    raw, config, prepared, ratio, variant, seed = job
    try:
        return run_cell(raw, config, prepared, ratio, variant, seed)
    except KgdaError as e:
        raise EvaluationError(f"cell ratio={ratio} variant={variant} seed={seed}: {e}") from e


def transductive(config):
    scope = config.evaluation
    return scope.normalization_scope == 'all' and scope.mining_scope == 'all'


def ratio_sweep(raw, config, dataset_name=None, prepared=None):
    """Every (ratio, variant, seed) cell; both variants share each split.

    `prepared` supplies graphs built once for all cells; it is ignored
    when normalization or mining is scoped to the training rows.
    """
    scope = config.evaluation
    shared = None
    if transductive(config):
        shared = prepared if prepared is not None else prepare_graphs(raw, config)

    jobs = [(raw, config, shared, ratio, variant, seed)
            for ratio in scope.ratios for variant in scope.variants for seed in scope.seeds]
    logger.info("Sweep: %d ratios x %d variants x %d seeds = %d cells",
                len(scope.ratios), len(scope.variants), len(scope.seeds), len(jobs))

    if scope.workers > 1:
        with ProcessPoolExecutor(max_workers=scope.workers) as pool:
            cells = list(pool.map(_run_cell_job, jobs))
    else:
        cells = [_run_cell_job(job) for job in jobs]

    return SweepResult(dataset_name or config.dataset_name, tuple(scope.ratios),
                       tuple(scope.variants), tuple(scope.seeds), tuple(cells))


# ----------------------------------------------------------------------
# Variance-reduction experiment
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class SyntheticVarianceSpec:
    mu: float = 0.0
    sigma2: float = 0.01
    nu: float = 0.0
    tau2: float = 0.09
    m: int = 200
    n: int = 8
    trials: int = 100

    def __post_init__(self):
        if self.sigma2 <= 0 or self.tau2 <= 0:
            raise EvaluationError("signal and noise variances must be > 0")
        if self.m < 1 or self.n < 1 or self.trials < 1:
            raise EvaluationError("m, n and trials must be >= 1")


@dataclass(frozen=True)
class VarianceReport:
    raw_variance: float | None
    augmented_variance: float | None
    pass_fraction: float | None
    passes: int
    conclusive: int
    inconclusive: int

    def to_dict(self):
        return dataclasses.asdict(self)


def variance_reduction_check(spec, params=None, seed=0):
    """Compare the variance of bicluster centroid entries with the raw entries.

    A trial passes when the centroid variance is strictly smaller; trials
    where mining finds nothing are inconclusive.
    """
    params = params or MiningParams()
    raw_vars, aug_vars = [], []
    passes = inconclusive = 0
    for trial in range(spec.trials):
        rng = np.random.default_rng([seed, trial])
        values = coherent_signal_plus_noise(rng, spec.mu, spec.sigma2, spec.nu, spec.tau2, spec.m, spec.n)
        normalized = normalize_minmax(feature_matrix(values))
        biclusters = mine(normalized, params) if spec.m >= 2 else []
        centroid_entries = np.concatenate([b.centroid for b in biclusters]) if biclusters else np.empty(0)
        if len(centroid_entries) < 2 or normalized.values.size < 2:
            inconclusive += 1
            continue
        raw_var = float(np.var(normalized.values, ddof=1))
        aug_var = float(np.var(centroid_entries, ddof=1))
        raw_vars.append(raw_var)
        aug_vars.append(aug_var)
        passes += aug_var < raw_var

    conclusive = len(raw_vars)
    logger.info("Variance check: %d/%d passes, %d inconclusive", passes, conclusive, inconclusive)
    return VarianceReport(
        raw_variance=float(np.mean(raw_vars)) if raw_vars else None,
        augmented_variance=float(np.mean(aug_vars)) if aug_vars else None,
        pass_fraction=passes / conclusive if conclusive else None,
        passes=int(passes),
        conclusive=conclusive,
        inconclusive=inconclusive,
    )


# ----------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------
def _fmt(value):
    return NOT_APPLICABLE if value is None else f"{value:.6f}"


def _write_csv(rows, columns, path):
    pd.DataFrame(rows, columns=list(columns)).to_csv(path, index=False, lineterminator='\n')


def metric_rows(result):
    return [{'dataset': result.dataset, 'ratio': f"{c.ratio:g}", 'variant': c.variant, 'seed': c.seed,
             **{name: _fmt(c.report.metric(name)) for name in METRICS}}
            for c in result.cells]


def write_metrics_csv(result, path):
    _write_csv(metric_rows(result), ('dataset', 'ratio', 'variant', 'seed') + METRICS, path)


def write_summary_csv(result, path):
    columns = ('dataset', 'ratio', 'variant') + METRICS + tuple(f'n_{m}' for m in METRICS)
    rows = [{**row, 'ratio': f"{row['ratio']:g}", **{m: _fmt(row[m]) for m in METRICS}}
            for row in result.summary()]
    _write_csv(rows, columns, path)


def write_roc_csv(result, path):
    rows = [{'dataset': result.dataset, 'ratio': f"{c.ratio:g}", 'variant': c.variant, 'seed': c.seed,
             'fpr': f"{p.fpr:.6f}", 'tpr': f"{p.tpr:.6f}", 'threshold': repr(p.threshold)}
            for c in result.cells for p in c.report.roc_points]
    _write_csv(rows, ('dataset', 'ratio', 'variant', 'seed', 'fpr', 'tpr', 'threshold'), path)


def reference_rows():
    rows = []
    for dataset, ratios in PUBLISHED_REFERENCE.items():
        for ratio, variants in ratios.items():
            for variant, values in variants.items():
                rows.append({'dataset': dataset, 'ratio': ratio, 'variant': variant,
                             **dict(zip(('acc', 'sen', 'spe', 'f1'), values))})
    return rows


def write_workbook(result, path):
    """metrics / summary / reference sheets"""
    workbook = xlsxwriter.Workbook(str(path))
    workbook.set_properties({'title': f'KGDA sweep {result.dataset}', 'created': WORKBOOK_CREATED})
    bold = workbook.add_format({'bold': True})
    number = workbook.add_format({'num_format': '0.0000'})

    def sheet(name, columns, rows):
        ws = workbook.add_worksheet(name)
        for col, title in enumerate(columns):
            ws.write(0, col, title, bold)
        for r, row in enumerate(rows, start=1):
            for col, key in enumerate(columns):
                value = row.get(key)
                if value is None:
                    ws.write_string(r, col, NOT_APPLICABLE)
                elif isinstance(value, float):
                    ws.write_number(r, col, value, number)
                else:
                    ws.write(r, col, value)
        ws.freeze_panes(1, 0)

    cells = [{'dataset': result.dataset, 'ratio': c.ratio, 'variant': c.variant, 'seed': c.seed,
              **{name: c.report.metric(name) for name in METRICS}} for c in result.cells]
    sheet('metrics', ('dataset', 'ratio', 'variant', 'seed') + METRICS, cells)
    sheet('summary', ('dataset', 'ratio', 'variant') + METRICS, result.summary())
    sheet('reference', ('dataset', 'ratio', 'variant', 'acc', 'sen', 'spe', 'f1'), reference_rows())
    workbook.close()

"""
KGDA pipeline stages with on-disk artifacts.

Each stage writes into `<out>/<stage>.partial/` and is renamed to
`<out>/<stage>/` only when it completes; every stage directory carries a
`manifest.json` with the config hash, seed and SHA-256 of its inputs and
outputs. Later stages read only the artifacts of earlier ones.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import shutil
from contextlib import contextmanager
from pathlib import Path

import pandas as pd

from augment import distance_features, read_augmented, write_augmented
from bicluster import dump_biclusters, load_biclusters
from config import KgdaError
from dataset import SplitPlan, load_table, normalize_minmax, split_by_ratio
from evaluation import (CellResult, PreparedGraphs, SweepResult, SyntheticVarianceSpec,
                        evaluate_patients, mine_scoped, ratio_sweep, transductive,
                        variance_reduction_check, write_metrics_csv, write_roc_csv,
                        write_summary_csv, write_workbook)
from kgraph import (add_reciprocals, default_labels, fuse, holdout, patient_entity,
                    read_triples, triples_from_table, write_triples)
from oracles import SUITES
from tucker import load_checkpoint, save_checkpoint, train

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = 'kgda-manifest/1'
STAGES = ('mine', 'augment', 'fuse', 'train', 'eval', 'sweep', 'check')


class StageError(KgdaError):
    """A stage failed; carries the stage name and the underlying error"""

    def __init__(self, stage, message, cause=None):
        super().__init__(message)
        self.stage = stage
        self.cause = cause

    @property
    def error_name(self):
        return type(self.cause).__name__ if self.cause is not None else type(self).__name__

    def diagnostic(self):
        return {'stage': self.stage, 'error': self.error_name, 'message': str(self)}


# ----------------------------------------------------------------------
# Artifact helpers
# ----------------------------------------------------------------------
def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def tree_hashes(root):
    """relative path -> sha256 for every file below root, manifest excluded"""
    root = Path(root)
    return {p.relative_to(root).as_posix(): file_sha256(p)
            for p in sorted(root.rglob('*')) if p.is_file() and p.name != 'manifest.json'}


def write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')


@contextmanager
def stage_directory(output_dir, stage):
    final = Path(output_dir) / stage
    partial = Path(output_dir) / f'{stage}.partial'
    if partial.exists():
        shutil.rmtree(partial)
    partial.mkdir(parents=True)
    try:
        yield partial
    except BaseException:
        shutil.rmtree(partial, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    partial.rename(final)


def write_loss_history(history, path):
    frame = pd.DataFrame({'epoch': range(1, len(history) + 1), 'loss': [repr(v) for v in history]})
    frame.to_csv(path, index=False, lineterminator='\n')


# ----------------------------------------------------------------------
# Pipeline
# ----------------------------------------------------------------------
class Pipeline:
    """Stage runner for one resolved RunConfig"""

    def __init__(self, config, ledger=None, run_id=None):
        self.config = config
        self.output_dir = Path(config.output_dir)
        self.ledger = ledger
        self.run_id = run_id
        self._raw = None

    # ------------------------------------------------------------------
    # Shared inputs
    # ------------------------------------------------------------------
    @property
    def seed(self):
        return self.config.evaluation.seeds[0]

    @property
    def ratio(self):
        return self.config.evaluation.ratios[0]

    def raw(self):
        if self._raw is None:
            self._raw = load_table(self.config.dataset.path, self.config.dataset)
        return self._raw

    def primary_split(self):
        return split_by_ratio(self.raw(), self.ratio, self.seed)

    def _scoped_ids(self, scope):
        return self.primary_split().train_ids if scope == 'train' else None

    def normalized(self):
        scope = self.config.evaluation.normalization_scope
        return normalize_minmax(self.raw(), self._scoped_ids(scope))

    def artifact(self, stage, name):
        path = self.output_dir / stage / name
        if not path.exists():
            raise StageError(stage, f"missing artifact {path}; run `{stage}` first")
        return path

    def _log(self, stage, activity_type, description):
        if self.ledger is not None:
            self.ledger.log_activity(self.run_id, stage, activity_type, description)

    def _manifest(self, directory, stage, inputs, details=None):
        manifest = {
            'format': MANIFEST_FORMAT,
            'stage': stage,
            'config_hash': self.config.config_hash(),
            'seed': self.seed,
            'seeds': list(self.config.evaluation.seeds),
            'inputs': {str(k): v for k, v in sorted(inputs.items())},
            'outputs': tree_hashes(directory),
            'details': details or {},
        }
        write_json(Path(directory) / 'manifest.json', manifest)
        return manifest

    def _run(self, stage, body):
        """Run body(directory) -> (inputs, details) inside a partial directory"""
        self._log(stage, 'start', f"{stage} started")
        logger.info("stage %s -> %s", stage, self.output_dir / stage)
        try:
            with stage_directory(self.output_dir, stage) as directory:
                inputs, details = body(directory)
                manifest = self._manifest(directory, stage, inputs, details)
        except StageError as e:
            self._log(stage, 'failure', str(e))
            if e.stage != stage:
                raise StageError(stage, str(e), cause=e.cause) from e
            raise
        except KgdaError as e:
            self._log(stage, 'failure', f"{type(e).__name__}: {e}")
            raise StageError(stage, str(e), cause=e) from e
        self._log(stage, 'success', json.dumps(manifest['details'], sort_keys=True))
        return manifest

    # ------------------------------------------------------------------
    # Stages
    # ------------------------------------------------------------------
    def mine(self):
        def body(directory):
            scope = self.config.evaluation.mining_scope
            biclusters = mine_scoped(self.normalized(), self.config.mining, self._scoped_ids(scope))
            dump_biclusters(biclusters, directory / 'biclusters.json')
            inputs = {'dataset': file_sha256(self.config.dataset.path)}
            return inputs, {'n_biclusters': len(biclusters)}
        return self._run('mine', body)

    def augment(self):
        def body(directory):
            source = self.artifact('mine', 'biclusters.json')
            features = distance_features(self.normalized(), load_biclusters(source))
            write_augmented(self.raw(), features, directory / 'augmented.csv',
                            directory / 'bins.json', self.config.augment.n_bins)
            inputs = {'dataset': file_sha256(self.config.dataset.path),
                      'mine/biclusters.json': file_sha256(source)}
            return inputs, {'n_features': len(features), 'n_bins': self.config.augment.n_bins}
        return self._run('augment', body)

    def fuse(self):
        def body(directory):
            csv_path = self.artifact('augment', 'augmented.csv')
            bins_path = self.artifact('augment', 'bins.json')
            raw = self.raw()
            sample_ids, binned, _ = read_augmented(csv_path, bins_path)
            s_o, s_a = triples_from_table(raw, binned, augmented_ids=sample_ids,
                                          n_bins=self.config.augment.n_bins,
                                          max_levels=self.config.augment.max_levels)
            labels = default_labels(raw)
            write_triples(fuse(s_o, frozenset(), labels), directory / 's_o.tsv')
            write_triples(fuse(frozenset(), s_a, labels), directory / 's_a.tsv')
            fused = fuse(s_o, s_a, labels)
            write_triples(fused, directory / 'fused.tsv')
            inputs = {'dataset': file_sha256(self.config.dataset.path),
                      'augment/augmented.csv': file_sha256(csv_path),
                      'augment/bins.json': file_sha256(bins_path)}
            details = {'s_o': len(s_o), 's_a': len(s_a), 'fused': len(fused),
                       'entities': len(fused.entities), 'relations': len(fused.relations)}
            return inputs, details
        return self._run('fuse', body)

    def variant_graph(self, variant):
        """Graph of a variant as read back from the fuse artifacts"""
        name = 'fused.tsv' if variant == 'augmented' else 's_o.tsv'
        path = self.artifact('fuse', name)
        graph = read_triples(path)
        if self.config.graph.reciprocal:
            graph = add_reciprocals(graph)
        return graph, path

    def prepared(self):
        s_o = read_triples(self.artifact('fuse', 's_o.tsv'))
        s_a = read_triples(self.artifact('fuse', 's_a.tsv'))
        return PreparedGraphs(s_o.triples, s_a.triples, s_o.label_names, (), (), ())

    def train(self):
        def body(directory):
            split = self.primary_split()
            write_json(directory / 'split.json', split.to_dict())
            patients = [patient_entity(sid) for sid in split.test_ids]
            train_config = dataclasses.replace(self.config.train, seed=self.seed)
            inputs, details = {}, {}
            for variant in self.config.evaluation.variants:
                graph, path = self.variant_graph(variant)
                inputs[f'fuse/{path.name}'] = file_sha256(path)
                train_graph = holdout(graph, patients, strict=self.config.graph.strict_holdout)
                model, history = train(train_graph, train_config)
                save_checkpoint(model, directory / variant / 'checkpoint', graph)
                write_loss_history(history, directory / variant / 'loss_history.csv')
                details[variant] = {'epochs': len(history),
                                    'final_loss': history[-1] if history else None,
                                    'train_triples': len(train_graph)}
            details.update(ratio=split.ratio, n_train=len(split.train_ids), n_test=len(split.test_ids))
            return inputs, details
        return self._run('train', body)

    def evaluate(self):
        def body(directory):
            raw = self.raw()
            split_path = self.artifact('train', 'split.json')
            split = SplitPlan.from_dict(json.loads(split_path.read_text(encoding='utf-8')))
            patients = [patient_entity(sid) for sid in split.test_ids]
            labels = raw.labels[raw.row_indices(split.test_ids)]
            inputs = {'train/split.json': file_sha256(split_path)}
            cells = []
            for variant in self.config.evaluation.variants:
                graph, path = self.variant_graph(variant)
                checkpoint = self.artifact('train', f'{variant}/checkpoint')
                model = load_checkpoint(checkpoint, graph)
                inputs[f'fuse/{path.name}'] = file_sha256(path)
                inputs.update({f'train/{variant}/checkpoint/{k}': v
                               for k, v in tree_hashes(checkpoint).items()})
                report = evaluate_patients(model, graph, labels, patients,
                                           self.config.evaluation.roc_score)
                cells.append(CellResult(split.ratio, variant, split.seed, report, split.test_ids, ()))
            result = SweepResult(self.config.dataset_name, (split.ratio,),
                                 tuple(self.config.evaluation.variants), (split.seed,), tuple(cells))
            write_metrics_csv(result, directory / 'metrics.csv')
            write_roc_csv(result, directory / 'roc.csv')
            details = {c.variant: {m: c.report.metric(m) for m in ('acc', 'sen', 'spe', 'f1', 'auc')}
                       for c in cells}
            return inputs, details
        return self._run('eval', body)

    def sweep(self):
        """mine -> augment -> fuse, then every (ratio, variant, seed) cell"""
        self.mine()
        self.augment()
        self.fuse()

        def body(directory):
            prepared = self.prepared() if transductive(self.config) else None
            result = ratio_sweep(self.raw(), self.config, prepared=prepared)
            write_metrics_csv(result, directory / 'metrics.csv')
            write_summary_csv(result, directory / 'metrics_summary.csv')
            write_roc_csv(result, directory / 'roc.csv')
            write_workbook(result, directory / 'sweep.xlsx')
            inputs = {'dataset': file_sha256(self.config.dataset.path)}
            if prepared is not None:
                inputs.update({f'fuse/{n}': file_sha256(self.artifact('fuse', n))
                               for n in ('s_o.tsv', 's_a.tsv')})
            details = {'cells': len(result.cells),
                       'summary': [{k: v for k, v in row.items() if not k.startswith('n_')}
                                   for row in result.summary()]}
            return inputs, details
        return self._run('sweep', body)

    def check(self, suites=None, variance_trials=100):
        """Oracle suites plus the variance-reduction experiment"""
        names = list(suites or SUITES)

        def body(directory):
            reports = {}
            for name in names:
                reports[name] = SUITES[name](seed=self.seed).to_dict()
            variance = variance_reduction_check(SyntheticVarianceSpec(trials=variance_trials),
                                                params=self.config.mining, seed=self.seed)
            fraction = variance.pass_fraction
            reports['variance_reduction'] = {**variance.to_dict(),
                                             'passed': fraction is not None and fraction >= 0.95}
            write_json(directory / 'report.json', reports)
            return {}, {'passed': sorted(n for n, r in reports.items() if r['passed']),
                        'failed': sorted(n for n, r in reports.items() if not r['passed'])}
        return self._run('check', body)

import dataclasses
import json

import numpy as np
import pytest

from bicluster import MiningParams
from kgraph import read_triples
from pipeline import Pipeline, StageError, stage_directory, tree_hashes
from run_ledger import RunLedger
from tucker import init_model, load_checkpoint


def read_manifest(root, stage):
    return json.loads((root / stage / 'manifest.json').read_text(encoding='utf-8'))


def test_stages_in_order(run_config, tmp_path):
    ledger = RunLedger.for_output_dir(run_config.output_dir)
    run_id = ledger.start_run('all', run_config.config_hash(), 0)
    pipeline = Pipeline(run_config, ledger, run_id)
    out = tmp_path / 'out'

    mined = pipeline.mine()
    assert (out / 'mine' / 'biclusters.json').exists()
    assert mined['config_hash'] == run_config.config_hash()
    assert mined['seed'] == 0

    pipeline.augment()
    assert (out / 'augment' / 'bins.json').exists()

    fused = pipeline.fuse()
    details = fused['details']
    assert details['fused'] == details['s_o'] + details['s_a']

    trained = pipeline.train()
    assert (out / 'train' / 'baseline' / 'checkpoint' / 'meta.json').exists()
    assert (out / 'train' / 'augmented' / 'loss_history.csv').exists()
    assert trained['details']['n_test'] == 12

    evaluated = pipeline.evaluate()
    assert set(evaluated['details']) == {'baseline', 'augmented'}
    assert (out / 'eval' / 'metrics.csv').exists()

    manifest = read_manifest(out, 'eval')
    assert manifest['outputs'] == tree_hashes(out / 'eval')
    assert 'train/split.json' in manifest['inputs']
    types = [a['activity_type'] for a in ledger.recent_activity(limit=50)]
    assert types.count('success') == 5


def test_fuse_is_byte_identical_on_rerun(run_config, tmp_path):
    pipeline = Pipeline(run_config)
    pipeline.mine()
    pipeline.augment()
    pipeline.fuse()
    first = {name: (tmp_path / 'out' / 'fuse' / name).read_bytes()
             for name in ('s_o.tsv', 's_a.tsv', 'fused.tsv', 'manifest.json')}
    Pipeline(run_config).fuse()
    for name, data in first.items():
        assert (tmp_path / 'out' / 'fuse' / name).read_bytes() == data


def test_zero_epoch_checkpoint_is_initial_model(run_config, tmp_path):
    config = dataclasses.replace(run_config, train=dataclasses.replace(run_config.train, epochs=0))
    pipeline = Pipeline(config)
    pipeline.mine()
    pipeline.augment()
    pipeline.fuse()
    pipeline.train()

    graph = read_triples(tmp_path / 'out' / 'fuse' / 'fused.tsv')
    model = load_checkpoint(tmp_path / 'out' / 'train' / 'augmented' / 'checkpoint', graph)
    initial = init_model(len(graph.entities), len(graph.relations), config.train)
    for name in initial.params:
        np.testing.assert_array_equal(model.params[name], initial.params[name])


def test_sweep_is_reproducible_and_matches_stages(run_config, tmp_path):
    out = tmp_path / 'out'
    Pipeline(run_config).sweep()
    metrics = (out / 'sweep' / 'metrics.csv').read_bytes()
    manifest = (out / 'sweep' / 'manifest.json').read_bytes()
    assert (out / 'sweep' / 'sweep.xlsx').exists()
    assert (out / 'sweep' / 'metrics_summary.csv').exists()

    Pipeline(run_config).sweep()
    assert (out / 'sweep' / 'metrics.csv').read_bytes() == metrics
    assert (out / 'sweep' / 'manifest.json').read_bytes() == manifest

    pipeline = Pipeline(run_config)
    pipeline.train()
    pipeline.evaluate()
    assert (out / 'eval' / 'metrics.csv').read_bytes() == metrics


def test_missing_artifact(run_config):
    with pytest.raises(StageError, match="run `train` first"):
        Pipeline(run_config).evaluate()


def test_failed_stage_leaves_no_directory(run_config, tmp_path):
    config = dataclasses.replace(
        run_config, dataset=dataclasses.replace(run_config.dataset, path=str(tmp_path / 'gone.csv')))
    with pytest.raises(StageError) as info:
        Pipeline(config).mine()
    assert info.value.stage == 'mine'
    assert info.value.diagnostic()['error'] == 'DatasetError'
    assert not (tmp_path / 'out' / 'mine').exists()
    assert not (tmp_path / 'out' / 'mine.partial').exists()


def test_stage_directory_replaces_previous_output(tmp_path):
    with stage_directory(tmp_path, 'mine') as directory:
        (directory / 'a.txt').write_text('1', encoding='utf-8')
    with stage_directory(tmp_path, 'mine') as directory:
        (directory / 'b.txt').write_text('2', encoding='utf-8')
    assert sorted(p.name for p in (tmp_path / 'mine').iterdir()) == ['b.txt']


def test_check_stage(run_config, tmp_path):
    manifest = Pipeline(run_config).check(suites=['auc'], variance_trials=2)
    report = json.loads((tmp_path / 'out' / 'check' / 'report.json').read_text(encoding='utf-8'))
    assert set(report) == {'auc', 'variance_reduction'}
    assert 'auc' in manifest['details']['passed']


def test_check_stage_writes_gradient_report(run_config, tmp_path):
    manifest = Pipeline(run_config).check(suites=['gradients'], variance_trials=1)
    report = json.loads((tmp_path / 'out' / 'check' / 'report.json').read_text(encoding='utf-8'))
    assert report['gradients']['passed'] is True
    assert 'gradients' in manifest['details']['passed']


@pytest.mark.slow
def test_check_stage_with_every_suite(run_config, tmp_path):
    manifest = Pipeline(run_config).check(variance_trials=5)
    report = json.loads((tmp_path / 'out' / 'check' / 'report.json').read_text(encoding='utf-8'))
    assert set(report) == {'auc', 'gradients', 'greedy_oracle', 'planted_recovery',
                           'tucker_contraction', 'variance_reduction'}
    for name in ('auc', 'gradients', 'greedy_oracle', 'planted_recovery', 'tucker_contraction'):
        assert name in manifest['details']['passed']


def test_check_stage_uses_configured_mining(run_config, tmp_path):
    config = dataclasses.replace(run_config, mining=MiningParams(min_rows=500))
    Pipeline(config).check(suites=['auc'], variance_trials=2)
    report = json.loads((tmp_path / 'out' / 'check' / 'report.json').read_text(encoding='utf-8'))
    assert report['variance_reduction']['inconclusive'] == 2

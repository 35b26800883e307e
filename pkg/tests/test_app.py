import json

from click.testing import CliRunner

from app import cli
from run_ledger import RunLedger


def invoke(*args):
    return CliRunner().invoke(cli, list(args))


def last_diagnostic(result):
    return json.loads(result.stderr.strip().splitlines()[-1])


def test_stage_commands(config_file, tmp_path):
    for command in ('mine', 'augment', 'fuse', 'train', 'eval'):
        result = invoke(command, '--config', str(config_file))
        assert result.exit_code == 0, result.output
        assert f"✅ {command} complete" in result.stdout

    out = tmp_path / 'out'
    assert (out / 'eval' / 'metrics.csv').exists()
    runs = RunLedger.for_output_dir(out).runs()
    assert [r['command'] for r in runs] == ['mine', 'augment', 'fuse', 'train', 'eval']
    assert {r['status'] for r in runs} == {'success'}


def test_out_flag_and_variant(config_file, tmp_path):
    target = tmp_path / 'elsewhere'
    result = invoke('mine', '--config', str(config_file), '--out', str(target))
    assert result.exit_code == 0, result.output
    assert (target / 'mine' / 'manifest.json').exists()
    assert not (tmp_path / 'out' / 'mine').exists()


def test_sweep_command(config_file, tmp_path):
    result = invoke('sweep', '--config', str(config_file), '--variant', 'baseline')
    assert result.exit_code == 0, result.output
    assert 'cells: 1' in result.stdout
    assert (tmp_path / 'out' / 'sweep' / 'sweep.xlsx').exists()


def test_missing_data_reports_mine_stage(config_file, tmp_path):
    (tmp_path / 'patients.csv').unlink()
    result = invoke('mine', '--config', str(config_file))

    assert result.exit_code == 1
    diagnostic = last_diagnostic(result)
    assert diagnostic['stage'] == 'mine'
    assert diagnostic['error'] == 'DatasetError'
    assert not (tmp_path / 'out' / 'mine').exists()
    assert not (tmp_path / 'out' / 'mine.partial').exists()
    [run] = RunLedger.for_output_dir(tmp_path / 'out').runs()
    assert run['status'] == 'failed'


def test_eval_before_train(config_file):
    result = invoke('eval', '--config', str(config_file))
    assert result.exit_code == 1
    assert 'run `train` first' in last_diagnostic(result)['message']


def test_unknown_config_key(config_data, tmp_path):
    config_data['train']['momentum'] = 0.9
    path = tmp_path / 'bad.json'
    path.write_text(json.dumps(config_data), encoding='utf-8')

    result = invoke('mine', '--config', str(path))
    assert result.exit_code == 1
    diagnostic = last_diagnostic(result)
    assert diagnostic['stage'] == 'config'
    assert 'momentum' in diagnostic['message']


def test_missing_config_file(tmp_path):
    result = invoke('mine', '--config', str(tmp_path / 'none.json'))
    assert result.exit_code == 1
    assert last_diagnostic(result)['error'] == 'ConfigError'


def test_check_command(config_file, tmp_path):
    result = invoke('check', '--config', str(config_file), '--suite', 'auc', '--variance-trials', '3')
    assert result.exit_code in (0, 1), result.output
    assert '✅ auc' in result.stdout
    report = json.loads((tmp_path / 'out' / 'check' / 'report.json').read_text(encoding='utf-8'))
    assert report['auc']['passed']
    assert report['variance_reduction']['conclusive'] + report['variance_reduction']['inconclusive'] == 3

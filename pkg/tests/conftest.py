import json

import numpy as np
import pytest

from config import OUTPUT_DIR_ENV, config_from_dict

SHAPES = ('oval', 'round', 'irregular')


def write_patient_csv(path, n=24, seed=7):
    """Toy patient table: f_a and f_d lean on the label, f_b/f_c/shape are noise"""
    rng = np.random.default_rng(seed)
    lines = ['patient_id,f_a,f_b,f_c,f_d,shape,pathology']
    for i in range(n):
        label = i % 2
        f_a = label * 2 + int(rng.integers(0, 2))
        f_b = int(rng.integers(0, 4))
        f_c = int(rng.integers(0, 4))
        f_d = label + int(rng.integers(0, 3))
        shape = SHAPES[int(rng.integers(0, 3))]
        name = 'malignant' if label else 'benign'
        lines.append(f'p{i:02d},{f_a},{f_b},{f_c},{f_d},{shape},{name}')
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


@pytest.fixture(autouse=True)
def no_output_env(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


@pytest.fixture
def write_csv(tmp_path):
    def _write(text, name='table.csv'):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return path
    return _write


@pytest.fixture
def patient_csv(tmp_path):
    return write_patient_csv(tmp_path / 'patients.csv')


@pytest.fixture
def config_data(tmp_path, patient_csv):
    return {
        'dataset_name': 'toy',
        'dataset': {
            'path': patient_csv.name,
            'id_column': 'patient_id',
            'features': ['f_a', 'f_b', 'f_c', 'f_d', {'name': 'shape', 'levels': list(SHAPES)}],
            'label_column': 'pathology',
            'positive_labels': ['malignant'],
            'negative_labels': ['benign'],
        },
        'train': {'epochs': 3, 'entity_dim': 8, 'relation_dim': 8, 'batch_size': 16},
        'evaluation': {'ratios': [0.5], 'seeds': [0]},
        'output_dir': str(tmp_path / 'out'),
    }


@pytest.fixture
def config_file(tmp_path, config_data):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps(config_data), encoding='utf-8')
    return path


@pytest.fixture
def run_config(tmp_path, config_data):
    return config_from_dict(config_data, base_dir=tmp_path)

import numpy as np
import pytest

from dataset import (UNLABELED, ColumnSpec, DatasetError, FeatureMatrix, SchemaError, TableSchema,
                     load_table, normalize_minmax, schema_from_dict, split_by_ratio)
from synthetic import feature_matrix


def schema(path, **overrides):
    data = {
        'path': str(path),
        'id_column': 'id',
        'features': ['a', 'b'],
        'label_column': 'label',
        'positive_labels': ['malignant'],
        'negative_labels': ['benign'],
    }
    data.update(overrides)
    return schema_from_dict(data)


# ----------------------------------------------------------------------
# load_table
# ----------------------------------------------------------------------
def test_load_three_rows(write_csv):
    path = write_csv("id,a,b,label\nx1,1.5,2,malignant\nx2,0,3,benign\nx3,4,-1,benign\n")
    matrix = load_table(path, schema(path))

    assert matrix.sample_ids == ('x1', 'x2', 'x3')
    assert matrix.feature_names == ('a', 'b')
    assert matrix.values.shape == (3, 2)
    np.testing.assert_array_equal(matrix.values[:, 0], [1.5, 0.0, 4.0])
    np.testing.assert_array_equal(matrix.labels, [1, 0, 0])
    assert not matrix.values.flags.writeable


def test_label_column_is_never_a_feature(write_csv):
    path = write_csv("id,a,b,label\nx1,1,2,benign\n")
    with pytest.raises(SchemaError):
        schema(path, features=['a', 'label'])


def test_missing_column(write_csv):
    path = write_csv("id,a,label\nx1,1,benign\n")
    with pytest.raises(SchemaError, match="b"):
        load_table(path, schema(path))


def test_missing_file(tmp_path):
    path = tmp_path / 'nope.csv'
    with pytest.raises(DatasetError, match="not found"):
        load_table(path, schema(path))


def test_duplicate_id_names_row(write_csv):
    path = write_csv("id,a,b,label\nx1,1,2,benign\nx1,3,4,benign\n")
    with pytest.raises(DatasetError, match="duplicate sample ID 'x1' at row 2"):
        load_table(path, schema(path))


def test_unparsable_cell_names_row_and_column(write_csv):
    path = write_csv("id,a,b,label\nx1,1,2,benign\nx2,abc,4,benign\n")
    with pytest.raises(DatasetError, match="row 2, column 'a'"):
        load_table(path, schema(path))


def test_missing_cell_is_rejected(write_csv):
    path = write_csv("id,a,b,label\nx1,,2,benign\n")
    with pytest.raises(DatasetError, match="missing value"):
        load_table(path, schema(path))


def test_empty_label_is_unlabeled(write_csv):
    path = write_csv("id,a,b,label\nx1,1,2,\nx2,3,4,malignant\n")
    matrix = load_table(path, schema(path))
    np.testing.assert_array_equal(matrix.labels, [UNLABELED, 1])


def test_unknown_label(write_csv):
    path = write_csv("id,a,b,label\nx1,1,2,maybe\n")
    with pytest.raises(DatasetError, match="unknown label 'maybe'"):
        load_table(path, schema(path))


def test_categorical_levels_map_to_codes(write_csv):
    path = write_csv("id,a,b,label\nx1,low,05,benign\nx2,high,7,benign\nx3,mid,5,malignant\n")
    s = schema(path, features=[{'name': 'a', 'levels': ['low', 'mid', 'high']},
                               {'name': 'b', 'levels': ['5', '7']}])
    matrix = load_table(path, s)
    np.testing.assert_array_equal(matrix.values, [[0, 0], [2, 1], [1, 0]])
    assert matrix.levels == (('low', 'mid', 'high'), ('5', '7'))


def test_undeclared_level(write_csv):
    path = write_csv("id,a,b,label\nx1,huge,1,benign\n")
    s = schema(path, features=[{'name': 'a', 'levels': ['low', 'high']}, 'b'])
    with pytest.raises(DatasetError, match="not a declared level"):
        load_table(path, s)


def test_headerless_table_without_ids(write_csv):
    path = write_csv("1,2,A\n3,4,S\n5,6,I\n")
    s = TableSchema(path=str(path), features=(ColumnSpec('a'), ColumnSpec('b')),
                    label_column='dec', positive_labels=('A',), negative_labels=('S', 'I'),
                    header=False, column_names=('a', 'b', 'dec'))
    matrix = load_table(path, s)
    assert matrix.sample_ids == ('row1', 'row2', 'row3')
    np.testing.assert_array_equal(matrix.labels, [1, 0, 0])


# ----------------------------------------------------------------------
# normalize_minmax
# ----------------------------------------------------------------------
def test_normalize_range_and_constant_column():
    matrix = feature_matrix([[1.0, 5.0, 2.0], [3.0, 5.0, 4.0], [2.0, 5.0, 0.0]])
    normalized = normalize_minmax(matrix)

    assert normalized.normalized
    np.testing.assert_allclose(normalized.values[:, 0], [0.0, 1.0, 0.5])
    np.testing.assert_array_equal(normalized.values[:, 1], [0.0, 0.0, 0.0])
    assert normalized.values.min() >= 0.0 and normalized.values.max() <= 1.0


def test_normalize_with_reference_rows_clips():
    matrix = feature_matrix([[0.0], [10.0], [20.0]])
    normalized = normalize_minmax(matrix, reference_ids=matrix.sample_ids[:2])
    np.testing.assert_allclose(normalized.values[:, 0], [0.0, 1.0, 1.0])


def test_normalize_keeps_labels_and_ids():
    matrix = feature_matrix([[0.0, 1.0], [2.0, 3.0]], labels=[0, 1])
    normalized = normalize_minmax(matrix)
    assert normalized.sample_ids == matrix.sample_ids
    np.testing.assert_array_equal(normalized.labels, [0, 1])


def test_matrix_shape_mismatch():
    with pytest.raises(DatasetError):
        FeatureMatrix(('a',), ('f', 'g'), np.zeros((1, 3)))


# ----------------------------------------------------------------------
# split_by_ratio
# ----------------------------------------------------------------------
def test_split_is_deterministic():
    matrix = feature_matrix(np.zeros((10, 2)))
    first = split_by_ratio(matrix, 0.5, seed=3)
    second = split_by_ratio(matrix, 0.5, seed=3)
    assert first == second
    assert len(first.train_ids) == 5 and len(first.test_ids) == 5


def test_split_property_over_random_sizes():
    rng = np.random.default_rng(11)
    for _ in range(200):
        m = int(rng.integers(2, 60))
        ratio = float(rng.uniform(0.05, 0.95))
        expected = int(np.floor(ratio * m + 0.5))
        if expected in (0, m):
            continue
        matrix = feature_matrix(np.zeros((m, 1)))
        plan = split_by_ratio(matrix, ratio, int(rng.integers(0, 1000)))

        assert len(plan.train_ids) == expected
        assert set(plan.train_ids).isdisjoint(plan.test_ids)
        assert set(plan.train_ids) | set(plan.test_ids) == set(matrix.sample_ids)


def test_split_rounds_half_up():
    matrix = feature_matrix(np.zeros((5, 1)))
    assert len(split_by_ratio(matrix, 0.5, 0).train_ids) == 3


@pytest.mark.parametrize('ratio', [0.0, 1.0, -0.1, 1.5])
def test_split_rejects_ratio(ratio):
    with pytest.raises(DatasetError):
        split_by_ratio(feature_matrix(np.zeros((10, 1))), ratio, 0)


def test_split_rejects_empty_side():
    with pytest.raises(DatasetError):
        split_by_ratio(feature_matrix(np.zeros((3, 1))), 0.1, 0)


def test_split_plan_dict_round_trip():
    plan = split_by_ratio(feature_matrix(np.zeros((6, 1))), 0.5, 1)
    assert type(plan).from_dict(plan.to_dict()) == plan


def test_normalize_evenly_spaced_column():
    normalized = normalize_minmax(feature_matrix([[2.0], [4.0], [6.0]]))
    np.testing.assert_allclose(normalized.values[:, 0], [0.0, 0.5, 1.0])


def test_normalize_is_idempotent_and_keeps_order():
    rng = np.random.default_rng(2)
    matrix = feature_matrix(rng.normal(size=(30, 4)))
    once = normalize_minmax(matrix)
    twice = normalize_minmax(once)
    np.testing.assert_allclose(twice.values, once.values, atol=1e-15)
    for j in range(4):
        np.testing.assert_array_equal(np.argsort(once.values[:, j], kind='stable'),
                                      np.argsort(matrix.values[:, j], kind='stable'))


@pytest.mark.parametrize('ratio,expected', [(0.1, 10), (0.3, 30), (0.5, 50), (0.7, 70), (0.9, 90)])
def test_split_sizes_for_hundred_samples(ratio, expected):
    plan = split_by_ratio(feature_matrix(np.zeros((100, 1))), ratio, 0)
    assert len(plan.train_ids) == expected

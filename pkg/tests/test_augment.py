import numpy as np
import pytest

from augment import (AugmentedFeature, AugmentError, BinScheme, centroid, distance_features, quantize,
                     quantize_all, read_augmented, write_augmented)
from bicluster import Bicluster, MiningParams, mine
from dataset import normalize_minmax
from synthetic import feature_matrix, planted_additive_block


def feature_with(values):
    bic = Bicluster((0,), (0,), 0.0, (0.0,))
    return AugmentedFeature(0, bic, (0,), np.zeros(1), np.asarray(values, dtype=np.float64))


def test_distance_to_centroid():
    values = np.array([[0.0, 0.0], [0.0, 1.0], [3.0, 4.0]])
    bic = Bicluster((0, 1), (0, 1), 0.0, (0.0, 0.5))
    [feature] = distance_features(values, [bic])

    assert feature.name == 'AUG0'
    np.testing.assert_allclose(feature.centroid, [0.0, 0.5])
    np.testing.assert_allclose(feature.values, [0.5, 0.5, np.sqrt(21.25)])


def test_distance_uses_only_bicluster_columns():
    values = np.array([[1.0, 9.0, 1.0], [1.0, -9.0, 1.0], [2.0, 0.0, 3.0]])
    bic = Bicluster((0, 1), (0, 2), 0.0, (1.0, 1.0))
    [feature] = distance_features(values, [bic])
    np.testing.assert_allclose(feature.values, [0.0, 0.0, np.sqrt(5.0)])


def test_features_are_indexed_in_bicluster_order():
    matrix = feature_matrix(np.eye(3))
    bics = [Bicluster((0, 1), (1, 2), 0.0, (0.5, 0.0)), Bicluster((1, 2), (0, 1), 0.0, (0.0, 0.5))]
    assert [f.name for f in distance_features(matrix, bics)] == ['AUG0', 'AUG1']
    assert distance_features(matrix, []) == []


def test_bicluster_outside_matrix():
    with pytest.raises(AugmentError, match="does not fit"):
        distance_features(np.zeros((2, 2)), [Bicluster((0, 5), (0, 1), 0.0, (0.0, 0.0))])


def test_quantize_equal_width():
    bins, scheme = quantize(feature_with([0.0, 0.25, 0.5, 0.75, 1.0]), 4)
    np.testing.assert_array_equal(bins, [0, 1, 2, 3, 3])
    np.testing.assert_allclose(scheme.edges, [0.0, 0.25, 0.5, 0.75, 1.0])


def test_quantize_bins_in_range():
    rng = np.random.default_rng(2)
    feature = feature_with(rng.exponential(size=200))
    for n_bins in (2, 5, 9):
        bins, _ = quantize(feature, n_bins)
        assert bins.min() == 0 and bins.max() == n_bins - 1
        order = np.argsort(feature.values)
        assert np.all(np.diff(bins[order]) >= 0)


def test_quantize_degenerate_feature():
    bins, scheme = quantize(feature_with([0.3, 0.3, 0.3]), 5)
    np.testing.assert_array_equal(bins, [0, 0, 0])
    assert np.all(np.diff(scheme.edges) > 0)


def test_quantize_rejects_single_bin():
    with pytest.raises(AugmentError):
        quantize(feature_with([0.0, 1.0]), 1)


def test_scheme_assigns_out_of_range_values_to_end_bins():
    scheme = BinScheme('AUG0', 2, np.array([0.0, 0.5, 1.0]))
    np.testing.assert_array_equal(scheme.assign([-1.0, 0.49, 0.5, 3.0]), [0, 0, 1, 1])


def test_scheme_rejects_bad_edges():
    with pytest.raises(AugmentError):
        BinScheme.from_dict({'feature': 'AUG0', 'n_bins': 2, 'edges': [0.0, 0.0, 1.0]})


def test_write_and_read_augmented(tmp_path):
    rng = np.random.default_rng(0)
    matrix = feature_matrix(rng.uniform(size=(6, 3)), normalized=True)
    bics = [Bicluster((0, 1, 2), (0, 1), 0.0, (0.0, 0.0)), Bicluster((3, 4), (1, 2), 0.0, (0.0, 0.0))]
    features = distance_features(matrix, bics)
    write_augmented(matrix, features, tmp_path / 'aug.csv', tmp_path / 'bins.json', n_bins=3)

    ids, binned, schemes = read_augmented(tmp_path / 'aug.csv', tmp_path / 'bins.json')
    assert ids == matrix.sample_ids
    assert [s.feature for s in schemes] == ['AUG0', 'AUG1']
    for q in quantize_all(features, 3):
        np.testing.assert_array_equal(binned[q.feature.name], q.bins)


def test_centroid_is_column_mean_over_rows():
    values = np.array([[0.0, 2.0], [1.0, 2.0], [9.0, 9.0]])
    np.testing.assert_allclose(centroid(values, Bicluster((0, 1), (0, 1), 0.0, (0.0, 0.0))), [0.5, 2.0])


def test_distance_of_unit_offsets_is_root_k():
    values = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    [feature] = distance_features(values, [Bicluster((0, 1), (0, 1, 2), 0.0, (0.0, 0.0, 0.0))])
    np.testing.assert_allclose(feature.values, [0.0, 0.0, np.sqrt(3.0)])


def test_quantize_midpoint_rule():
    bins, _ = quantize(feature_with([0.0, 0.5, 1.0]), 2)
    np.testing.assert_array_equal(bins, [0, 1, 1])


def test_distance_triangle_inequality():
    rng = np.random.default_rng(7)
    values = rng.uniform(size=(12, 5))
    bic = Bicluster((0, 3, 5), (1, 2, 4), 0.0, (0.0, 0.0, 0.0))
    [feature] = distance_features(values, [bic])
    cols = list(bic.cols)
    for a in range(12):
        for b in range(12):
            gap = np.linalg.norm(values[a, cols] - values[b, cols])
            assert abs(feature.values[a] - feature.values[b]) <= gap + 1e-12


def test_bicluster_members_sit_closer_to_the_centroid():
    params = MiningParams(epsilon=0.005, min_rows=4)
    closer = trials = 0
    for trial in range(30):
        values, _, _ = planted_additive_block(np.random.default_rng([11, trial]))
        matrix = normalize_minmax(feature_matrix(values))
        found = mine(matrix, params)
        if not found or len(found[0].rows) == matrix.n_samples:
            continue
        [feature] = distance_features(matrix, found[:1])
        members = np.zeros(matrix.n_samples, dtype=bool)
        members[list(found[0].rows)] = True
        trials += 1
        closer += feature.values[members].mean() <= feature.values[~members].mean()
    assert trials >= 20
    assert closer / trials >= 0.95

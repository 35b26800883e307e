"""
Augmented features: each bicluster becomes one new column holding every
sample's Euclidean distance to the bicluster centroid over the
bicluster's columns, discretized into equal-width bins for the graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from bicluster import Bicluster, as_array
from config import KgdaError


class AugmentError(KgdaError):
    pass


@dataclass(frozen=True, eq=False)
class AugmentedFeature:
    index: int
    source: Bicluster
    columns: tuple[int, ...]
    centroid: np.ndarray
    values: np.ndarray

    @property
    def name(self):
        return f"AUG{self.index}"


@dataclass(frozen=True, eq=False)
class BinScheme:
    feature: str
    n_bins: int
    edges: np.ndarray

    def assign(self, values):
        """Bin of each value; the top edge belongs to the last bin"""
        bins = np.searchsorted(self.edges, np.asarray(values, dtype=np.float64), side='right') - 1
        return np.clip(bins, 0, self.n_bins - 1)

    def to_dict(self):
        return {'feature': self.feature, 'n_bins': self.n_bins,
                'edges': [float(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, data):
        edges = np.array(data['edges'], dtype=np.float64)
        if len(edges) != int(data['n_bins']) + 1 or np.any(np.diff(edges) <= 0):
            raise AugmentError(f"bin scheme for {data.get('feature')} has invalid edges")
        return cls(data['feature'], int(data['n_bins']), edges)


@dataclass(frozen=True, eq=False)
class QuantizedFeature:
    feature: AugmentedFeature
    bins: np.ndarray
    scheme: BinScheme


# ----------------------------------------------------------------------
# Distances
# ----------------------------------------------------------------------
def centroid(matrix, bicluster):
    values = as_array(matrix)
    return values[np.ix_(list(bicluster.rows), list(bicluster.cols))].mean(axis=0)


def distance_features(matrix, biclusters):
    values = as_array(matrix)
    features = []
    for i, bic in enumerate(biclusters):
        if not bic.rows or not bic.cols:
            raise AugmentError(f"bicluster {i} is empty")
        if max(bic.rows) >= values.shape[0] or max(bic.cols) >= values.shape[1]:
            raise AugmentError(f"bicluster {i} does not fit the matrix {values.shape}")
        cols = list(bic.cols)
        center = centroid(values, bic)
        diff = values[:, cols] - center
        distances = np.sqrt(np.sum(diff * diff, axis=1))
        center.setflags(write=False)
        distances.setflags(write=False)
        features.append(AugmentedFeature(i, bic, tuple(bic.cols), center, distances))
    return features


def quantize(feature, n_bins):
    if n_bins < 2:
        raise AugmentError(f"n_bins must be >= 2, got {n_bins}")
    values = feature.values
    lo = float(values.min())
    hi = float(values.max())
    if hi > lo:
        edges = np.linspace(lo, hi, n_bins + 1)
    else:
        # degenerate feature: unit-width bins above the constant
        edges = lo + np.arange(n_bins + 1, dtype=np.float64)
    scheme = BinScheme(feature.name, n_bins, edges)
    return scheme.assign(values), scheme


def quantize_all(features, n_bins):
    quantized = []
    for feature in features:
        bins, scheme = quantize(feature, n_bins)
        quantized.append(QuantizedFeature(feature, bins, scheme))
    return quantized


# ----------------------------------------------------------------------
# Augmented matrix dump
# ----------------------------------------------------------------------
def write_augmented(matrix, features, csv_path, schemes_path=None, n_bins=None):
    frame = pd.DataFrame({'sample_id': list(matrix.sample_ids)})
    for feature in features:
        frame[feature.name] = feature.values
    frame.to_csv(csv_path, index=False, float_format='%.17g', lineterminator='\n')
    if schemes_path is not None:
        schemes = [quantize(feature, n_bins)[1].to_dict() for feature in features]
        Path(schemes_path).write_text(json.dumps(schemes, indent=2, sort_keys=True) + '\n',
                                      encoding='utf-8')


def read_augmented(csv_path, schemes_path):
    """Reload raw distances and re-bin them with the stored edges"""
    frame = pd.read_csv(csv_path, dtype={'sample_id': str}, keep_default_na=False,
                        float_precision='round_trip')
    schemes = [BinScheme.from_dict(item)
               for item in json.loads(Path(schemes_path).read_text(encoding='utf-8'))]
    sample_ids = tuple(frame['sample_id'])
    binned = {}
    for scheme in schemes:
        if scheme.feature not in frame.columns:
            raise AugmentError(f"{csv_path}: column {scheme.feature} missing")
        binned[scheme.feature] = scheme.assign(frame[scheme.feature].to_numpy(dtype=np.float64))
    return sample_ids, binned, schemes

"""
Tabular dataset ingestion: CSV loading against a declared schema,
min-max normalization and deterministic patient splits.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from config import KgdaError

logger = logging.getLogger(__name__)

UNLABELED = -1


class DatasetError(KgdaError):
    pass


class SchemaError(DatasetError):
    pass


# ----------------------------------------------------------------------
# Schema
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ColumnSpec:
    name: str
    levels: tuple[str, ...] | None = None

    @property
    def is_categorical(self):
        return self.levels is not None


@dataclass(frozen=True)
class TableSchema:
    """Column roles of an input table"""
    path: str
    features: tuple[ColumnSpec, ...]
    label_column: str
    positive_labels: tuple[str, ...]
    negative_labels: tuple[str, ...]
    id_column: str | None = None
    header: bool = True
    column_names: tuple[str, ...] | None = None
    delimiter: str = ','
    positive_name: str = 'malignant'
    negative_name: str = 'benign'

    def __post_init__(self):
        if not self.features:
            raise SchemaError("schema declares no feature columns")
        names = [c.name for c in self.features]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate feature column in schema: {names}")
        if self.label_column in names:
            raise SchemaError(f"label column '{self.label_column}' is also declared as a feature")
        if self.id_column is not None and self.id_column in names:
            raise SchemaError(f"ID column '{self.id_column}' is also declared as a feature")
        if set(self.positive_labels) & set(self.negative_labels):
            raise SchemaError("a label value is declared both positive and negative")
        if not self.header and not self.column_names:
            raise SchemaError("headerless tables need 'column_names'")


def schema_from_dict(data, base_dir=None):
    known = {'path', 'features', 'label_column', 'positive_labels', 'negative_labels',
             'id_column', 'header', 'column_names', 'delimiter', 'positive_name',
             'negative_name'}
    unknown = sorted(set(data) - known)
    if unknown:
        raise SchemaError(f"unknown key(s) in section 'dataset': {', '.join(unknown)}")
    for key in ('path', 'features', 'label_column', 'positive_labels', 'negative_labels'):
        if key not in data:
            raise SchemaError(f"dataset schema is missing '{key}'")

    features = []
    for entry in data['features']:
        if isinstance(entry, str):
            features.append(ColumnSpec(entry))
        else:
            levels = entry.get('levels')
            features.append(ColumnSpec(entry['name'],
                                       tuple(str(v) for v in levels) if levels is not None else None))

    path = Path(data['path'])
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path

    column_names = data.get('column_names')
    return TableSchema(
        path=str(path),
        features=tuple(features),
        label_column=data['label_column'],
        positive_labels=tuple(str(v) for v in data['positive_labels']),
        negative_labels=tuple(str(v) for v in data['negative_labels']),
        id_column=data.get('id_column'),
        header=data.get('header', True),
        column_names=tuple(column_names) if column_names else None,
        delimiter=data.get('delimiter', ','),
        positive_name=data.get('positive_name', 'malignant'),
        negative_name=data.get('negative_name', 'benign'),
    )


# ----------------------------------------------------------------------
# Domain types
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Samples x features table; labels are kept outside `values`"""
    sample_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    values: np.ndarray
    labels: np.ndarray | None = None
    levels: tuple[tuple[str, ...] | None, ...] = ()
    label_names: tuple[str, str] = ('benign', 'malignant')
    normalized: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DatasetError(f"values must be 2-D, got shape {values.shape}")
        if values.shape != (len(self.sample_ids), len(self.feature_names)):
            raise DatasetError(
                f"values shape {values.shape} does not match "
                f"{len(self.sample_ids)} samples x {len(self.feature_names)} features")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64)
            if labels.shape != (len(self.sample_ids),):
                raise DatasetError("labels must have one entry per sample")
            labels.setflags(write=False)
            object.__setattr__(self, 'labels', labels)

        if not self.levels:
            object.__setattr__(self, 'levels', (None,) * len(self.feature_names))
        elif len(self.levels) != len(self.feature_names):
            raise DatasetError("levels must have one entry per feature")

    @property
    def n_samples(self):
        return len(self.sample_ids)

    @property
    def n_features(self):
        return len(self.feature_names)

    def row_indices(self, ids):
        position = {sid: i for i, sid in enumerate(self.sample_ids)}
        try:
            return np.array([position[sid] for sid in ids], dtype=np.int64)
        except KeyError as e:
            raise DatasetError(f"unknown sample ID {e.args[0]!r}") from None

    def with_values(self, values, normalized):
        return FeatureMatrix(self.sample_ids, self.feature_names, values, self.labels,
                             self.levels, self.label_names, normalized)


@dataclass(frozen=True)
class SplitPlan:
    ratio: float
    seed: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def to_dict(self):
        return {'ratio': self.ratio, 'seed': self.seed,
                'train_ids': list(self.train_ids), 'test_ids': list(self.test_ids)}

    @classmethod
    def from_dict(cls, data):
        return cls(float(data['ratio']), int(data['seed']),
                   tuple(data['train_ids']), tuple(data['test_ids']))


# ----------------------------------------------------------------------
# Loading
# ----------------------------------------------------------------------
def _parse_level(text, levels):
    if text in levels:
        return levels.index(text)
    # "05" and "5" name the same ordinal level
    try:
        number = float(text)
    except ValueError:
        return None
    for i, level in enumerate(levels):
        try:
            if float(level) == number:
                return i
        except ValueError:
            continue
    return None


def load_table(path, schema):
    """Parse a CSV into a raw (unnormalized) FeatureMatrix"""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"data file not found: {path}")

    frame = pd.read_csv(
        path,
        sep=schema.delimiter,
        header=0 if schema.header else None,
        names=list(schema.column_names) if schema.column_names else None,
        dtype=str,
        keep_default_na=False,
        skipinitialspace=True,
    )
    frame.columns = [str(c).strip() for c in frame.columns]

    required = [c.name for c in schema.features] + [schema.label_column]
    if schema.id_column:
        required.append(schema.id_column)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path}: column(s) not found: {', '.join(missing)}")

    # Row numbers in messages are 1-based data rows
    if schema.id_column:
        sample_ids = tuple(str(v).strip() for v in frame[schema.id_column])
        seen = set()
        for row, sid in enumerate(sample_ids, start=1):
            if sid == '':
                raise DatasetError(f"{path}: empty sample ID at row {row}")
            if sid in seen:
                raise DatasetError(f"{path}: duplicate sample ID '{sid}' at row {row}")
            seen.add(sid)
    else:
        width = len(str(len(frame)))
        sample_ids = tuple(f"row{i:0{width}d}" for i in range(1, len(frame) + 1))

    values = np.zeros((len(frame), len(schema.features)), dtype=np.float64)
    for j, column in enumerate(schema.features):
        for row, raw in enumerate(frame[column.name], start=1):
            text = str(raw).strip()
            if text == '':
                raise DatasetError(f"{path}: missing value at row {row}, column '{column.name}'")
            if column.is_categorical:
                level = _parse_level(text, column.levels)
                if level is None:
                    raise DatasetError(
                        f"{path}: value '{text}' at row {row}, column '{column.name}' "
                        f"is not a declared level {list(column.levels)}")
                values[row - 1, j] = level
            else:
                try:
                    values[row - 1, j] = float(text)
                except ValueError:
                    raise DatasetError(
                        f"{path}: cannot parse '{text}' at row {row}, column '{column.name}'") from None
                if not math.isfinite(values[row - 1, j]):
                    raise DatasetError(f"{path}: non-finite value at row {row}, column '{column.name}'")

    labels = np.full(len(frame), UNLABELED, dtype=np.int64)
    for row, raw in enumerate(frame[schema.label_column], start=1):
        text = str(raw).strip()
        if text == '':
            continue
        if text in schema.positive_labels:
            labels[row - 1] = 1
        elif text in schema.negative_labels:
            labels[row - 1] = 0
        else:
            raise DatasetError(f"{path}: unknown label '{text}' at row {row}")

    logger.info("Loaded %s: %d samples x %d features", path, len(sample_ids), len(schema.features))
    return FeatureMatrix(
        sample_ids=sample_ids,
        feature_names=tuple(c.name for c in schema.features),
        values=values,
        labels=labels,
        levels=tuple(c.levels for c in schema.features),
        label_names=(schema.negative_name, schema.positive_name),
    )


# ----------------------------------------------------------------------
# Normalization and splits
# ----------------------------------------------------------------------
def normalize_minmax(matrix, reference_ids=None):
    """Rescale every column to [0, 1]; constant columns become 0.

    Statistics come from all rows unless `reference_ids` restricts them
    (train-only normalization); values outside the reference range are
    clipped.
    """
    if matrix.n_samples == 0:
        raise DatasetError("cannot normalize an empty matrix")
    values = matrix.values
    reference = values if reference_ids is None else values[matrix.row_indices(reference_ids)]
    k_min = reference.min(axis=0)
    k_max = reference.max(axis=0)
    span = k_max - k_min
    constant = span == 0
    scaled = (values - k_min) / np.where(constant, 1.0, span)
    scaled[:, constant] = 0.0
    return matrix.with_values(np.clip(scaled, 0.0, 1.0), normalized=True)


def split_by_ratio(matrix, ratio, seed):
    m = matrix.n_samples
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"split ratio must lie in (0, 1), got {ratio}")
    if m < 2:
        raise DatasetError(f"cannot split {m} sample(s)")
    n_train = int(math.floor(ratio * m + 0.5))
    if n_train == 0 or n_train == m:
        raise DatasetError(f"ratio {ratio} on {m} samples leaves one side of the split empty")

    order = np.random.default_rng(seed).permutation(m)
    in_train = np.zeros(m, dtype=bool)
    in_train[order[:n_train]] = True
    ids = matrix.sample_ids
    return SplitPlan(
        ratio=float(ratio),
        seed=int(seed),
        train_ids=tuple(ids[i] for i in range(m) if in_train[i]),
        test_ids=tuple(ids[i] for i in range(m) if not in_train[i]),
    )

"""Synthetic data generators for property checks and tests."""

from __future__ import annotations

import numpy as np

from dataset import FeatureMatrix
from kgraph import DIAGNOSIS, Triple, feature_relation, fuse, label_entity, patient_entity, value_entity
from tucker import TrainConfig, init_model


def planted_additive_block(rng, m=40, n=8, block_rows=10, block_cols=4, spread=0.01):
    """Uniform noise with one additive block x_ij = a_i + b_j.

    Returns (values, planted rows, planted cols); rows and cols sorted.
    """
    values = rng.uniform(0.0, 1.0, size=(m, n))
    rows = np.sort(rng.choice(m, size=block_rows, replace=False))
    cols = np.sort(rng.choice(n, size=block_cols, replace=False))
    a = rng.uniform(0.0, spread, size=block_rows)
    b = rng.uniform(0.2, 0.75, size=block_cols)
    values[np.ix_(rows, cols)] = a[:, None] + b[None, :]
    return values, tuple(int(r) for r in rows), tuple(int(c) for c in cols)


def planted_constant_blocks(rng, m, n, blocks):
    """Uniform noise with constant blocks at the given (rows, cols) positions"""
    values = rng.uniform(0.0, 1.0, size=(m, n))
    for rows, cols in blocks:
        values[np.ix_(list(rows), list(cols))] = rng.uniform(0.2, 0.8)
    return values


def coherent_signal_plus_noise(rng, mu, sigma2, nu, tau2, m, n):
    """Z = X + Y with column-coherent signal X_ij = c_j ~ N(mu, sigma2) and iid noise Y ~ N(nu, tau2)"""
    signal = rng.normal(mu, np.sqrt(sigma2), size=n)
    noise = rng.normal(nu, np.sqrt(tau2), size=(m, n))
    return signal[None, :] + noise


def feature_matrix(values, labels=None, normalized=False):
    values = np.asarray(values, dtype=np.float64)
    m, n = values.shape
    width = len(str(m))
    return FeatureMatrix(
        sample_ids=tuple(f"s{i:0{width}d}" for i in range(m)),
        feature_names=tuple(f"f{j}" for j in range(n)),
        values=values,
        labels=labels,
        normalized=normalized,
    )


def diagnosis_graph(seed=0, n_patients=8, n_features=5):
    """Small patient graph: 8 patients, 2 labels, 10 binary feature values = 20 entities"""
    rng = np.random.default_rng(seed)
    labels = np.array([i % 2 for i in range(n_patients)])
    triples = set()
    for p in range(n_patients):
        patient = patient_entity(f"p{p}")
        for f in range(n_features):
            # the first feature mirrors the label, the rest are noise
            level = labels[p] if f == 0 else int(rng.integers(0, 2))
            triples.add(Triple(patient, feature_relation(f"f{f}"), value_entity(f"f{f}", level)))
        name = 'malignant' if labels[p] == 1 else 'benign'
        triples.add(Triple(patient, DIAGNOSIS, label_entity(name)))
    return fuse(triples, frozenset())


def random_model(rng, m_e, m_r, k_e, k_r, **overrides):
    config = TrainConfig(entity_dim=k_e, relation_dim=k_r, seed=int(rng.integers(0, 2**31)), **overrides)
    model = init_model(m_e, m_r, config)
    # random values everywhere so no parameter sits at a special point
    for name, param in model.params.items():
        param[...] = rng.normal(0.0, 1.0, size=param.shape)
    return model

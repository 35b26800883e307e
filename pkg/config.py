"""
KGDA Run Configuration
Loads the JSON run configuration, applies environment and CLI overrides,
and computes the configuration hash recorded in manifests and the ledger.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from dotenv import find_dotenv, load_dotenv

OUTPUT_DIR_ENV = 'KGDA_OUTPUT_DIR'
DEFAULT_OUTPUT_DIR = 'kgda_output'
VARIANTS = ('baseline', 'augmented')
DEFAULT_RATIOS = (0.1, 0.3, 0.5, 0.7, 0.9)


class KgdaError(Exception):
    """Base class for every domain error raised by the pipeline"""


class ConfigError(KgdaError):
    pass


# ----------------------------------------------------------------------
# Config sections
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class AugmentConfig:
    n_bins: int = 5
    max_levels: int = 10

    def __post_init__(self):
        if self.n_bins < 2:
            raise ConfigError(f"augment.n_bins must be >= 2, got {self.n_bins}")
        if self.max_levels < 1:
            raise ConfigError(f"augment.max_levels must be >= 1, got {self.max_levels}")


@dataclass(frozen=True)
class GraphConfig:
    reciprocal: bool = False
    strict_holdout: bool = False


@dataclass(frozen=True)
class EvaluationConfig:
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    seeds: tuple[int, ...] = tuple(range(10))
    variants: tuple[str, ...] = VARIANTS
    roc_score: str = 'raw'
    normalization_scope: str = 'all'
    mining_scope: str = 'all'
    workers: int = 1

    def __post_init__(self):
        for ratio in self.ratios:
            if not 0.0 < ratio < 1.0:
                raise ConfigError(f"evaluation.ratios: {ratio} is outside (0, 1)")
        if not self.seeds:
            raise ConfigError("evaluation.seeds must not be empty")
        for variant in self.variants:
            if variant not in VARIANTS:
                raise ConfigError(f"evaluation.variants: unknown variant '{variant}'")
        if self.roc_score not in ('raw', 'renormalized'):
            raise ConfigError(f"evaluation.roc_score must be raw|renormalized, got '{self.roc_score}'")
        for key in ('normalization_scope', 'mining_scope'):
            if getattr(self, key) not in ('all', 'train'):
                raise ConfigError(f"evaluation.{key} must be all|train")
        if self.workers < 1:
            raise ConfigError("evaluation.workers must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    dataset: Any
    mining: Any
    augment: AugmentConfig
    graph: GraphConfig
    train: Any
    evaluation: EvaluationConfig
    output_dir: str = DEFAULT_OUTPUT_DIR
    dataset_name: str = 'dataset'

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    def hashed_dict(self):
        """Resolved settings without locations: the output directory is dropped
        and the dataset is identified by file name and content digest"""
        data = self.to_dict()
        del data['output_dir']
        path = Path(self.dataset.path)
        data['dataset']['path'] = path.name
        data['dataset']['sha256'] = (hashlib.sha256(path.read_bytes()).hexdigest()
                                      if path.is_file() else None)
        return data

    def config_hash(self):
        return hashlib.sha256(canonical_json(self.hashed_dict())).hexdigest()

    def with_overrides(self, out=None, seed=None, variant=None, ratios=None):
        """Apply CLI overrides (flags win over file and environment)"""
        run = self
        if out:
            run = dataclasses.replace(run, output_dir=str(out))
        evaluation = run.evaluation
        if seed is not None:
            evaluation = dataclasses.replace(evaluation, seeds=(int(seed),))
            run = dataclasses.replace(run, train=dataclasses.replace(run.train, seed=int(seed)))
        if variant:
            variants = VARIANTS if variant == 'both' else (variant,)
            evaluation = dataclasses.replace(evaluation, variants=variants)
        if ratios:
            evaluation = dataclasses.replace(evaluation, ratios=tuple(ratios))
        return dataclasses.replace(run, evaluation=evaluation)


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(',', ':')).encode('utf-8')


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data, section):
    """Instantiate a dataclass section, rejecting unknown keys"""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a JSON object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in section '{section}': {', '.join(unknown)}")
    values = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        values[key] = value
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"section '{section}': {e}") from e


# ----------------------------------------------------------------------
# Loading
# ----------------------------------------------------------------------
TOP_LEVEL_KEYS = {'dataset', 'dataset_name', 'mining', 'augment', 'graph',
                  'train', 'evaluation', 'output_dir'}


def config_from_dict(data, base_dir=None):
    # Imported here: the domain modules import KgdaError from this module
    from bicluster import MiningParams
    from dataset import schema_from_dict
    from tucker import TrainConfig

    unknown = sorted(set(data) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    if 'dataset' not in data:
        raise ConfigError("missing required section 'dataset'")

    dataset = schema_from_dict(data['dataset'], base_dir=base_dir)
    output_dir = data.get('output_dir', DEFAULT_OUTPUT_DIR)

    load_dotenv(find_dotenv(usecwd=True), override=False)
    output_dir = os.environ.get(OUTPUT_DIR_ENV, output_dir)

    return RunConfig(
        dataset=dataset,
        dataset_name=data.get('dataset_name', Path(dataset.path).stem),
        mining=_build(MiningParams, data.get('mining'), 'mining'),
        augment=_build(AugmentConfig, data.get('augment'), 'augment'),
        graph=_build(GraphConfig, data.get('graph'), 'graph'),
        train=_build(TrainConfig, data.get('train'), 'train'),
        evaluation=_build(EvaluationConfig, data.get('evaluation'), 'evaluation'),
        output_dir=output_dir,
    )


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return config_from_dict(data, base_dir=path.parent)


def parse_ratios(text):
    try:
        return tuple(float(part) for part in text.split(',') if part.strip())
    except ValueError as e:
        raise ConfigError(f"--ratios must be a comma list of fractions, got '{text}'") from e

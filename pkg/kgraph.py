"""
Knowledge-graph triples for original and augmented features, fused by
set union into one graph with frozen entity/relation vocabularies.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from config import KgdaError

logger = logging.getLogger(__name__)

DIAGNOSIS = 'diagnosis'
REVERSE_SUFFIX = '_reverse'
PATIENT_PREFIX = 'patient:'
FILE_HEADER = '# kgda triples v1'


class GraphError(KgdaError):
    pass


class Triple(NamedTuple):
    subject: str
    relation: str
    object: str


def patient_entity(sample_id):
    return f"{PATIENT_PREFIX}{sample_id}"


def label_entity(name):
    return f"label:{name}"


def feature_relation(feature):
    return f"has:{feature}"


def value_entity(feature, level):
    return f"val:{feature}={level}"


# ----------------------------------------------------------------------
# Vocabulary and graph
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Vocabulary:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, '_index', {name: i for i, name in enumerate(self.names)})
        if len(self._index) != len(self.names):
            raise GraphError("vocabulary contains duplicate names")

    @classmethod
    def from_names(cls, names):
        return cls(tuple(sorted(set(names))))

    def __len__(self):
        return len(self.names)

    def __contains__(self, name):
        return name in self._index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def index(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise GraphError(f"unknown name '{name}'") from None

    def digest(self):
        return hashlib.sha256('\n'.join(self.names).encode('utf-8')).hexdigest()


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    entities: Vocabulary
    relations: Vocabulary
    triples: frozenset
    diagnosis_relation: int
    label_entities: tuple[int, int]

    def __eq__(self, other):
        return (isinstance(other, KnowledgeGraph)
                and self.entities == other.entities
                and self.relations == other.relations
                and self.triples == other.triples
                and self.diagnosis_relation == other.diagnosis_relation
                and self.label_entities == other.label_entities)

    def __hash__(self):
        return hash((self.entities, self.relations, len(self.triples)))

    def __len__(self):
        return len(self.triples)

    @property
    def label_names(self):
        return tuple(self.entities.names[i] for i in self.label_entities)

    @property
    def diagnosis_name(self):
        return self.relations.names[self.diagnosis_relation]

    def sorted_triples(self):
        return sorted(self.triples)

    def triple_array(self):
        """(n, 3) int array of (subject, relation, object) indices in sorted name order"""
        rows = [(self.entities.index(t.subject), self.relations.index(t.relation),
                 self.entities.index(t.object)) for t in self.sorted_triples()]
        return np.array(rows, dtype=np.int64).reshape(-1, 3)

    def patients(self):
        return tuple(name for name in self.entities.names if name.startswith(PATIENT_PREFIX))

    def diagnoses(self):
        """patient entity name -> label entity name"""
        return {t.subject: t.object for t in self.triples if t.relation == self.diagnosis_name}


def _entities_of(triples):
    names = set()
    for t in triples:
        names.add(t.subject)
        names.add(t.object)
    return names


def _validate_name(name):
    if not name or any(ch in name for ch in '\t\r\n') or name.startswith('#'):
        raise GraphError(f"invalid graph name {name!r}")


def build_graph(triples, label_entities, extra_entities=(), extra_relations=()):
    triples = frozenset(Triple(*t) for t in triples)
    for t in triples:
        for name in t:
            _validate_name(name)
        # reverse triples point from the value back to the patient
        patient, other = ((t.object, t.subject) if t.relation.endswith(REVERSE_SUFFIX)
                          else (t.subject, t.object))
        if not patient.startswith(PATIENT_PREFIX):
            raise GraphError(f"triple {tuple(t)} does not link a patient entity")
        if other.startswith(PATIENT_PREFIX):
            raise GraphError(f"triple {tuple(t)} links two patient entities")

    relations = Vocabulary.from_names({t.relation for t in triples} | {DIAGNOSIS} | set(extra_relations))
    entities = Vocabulary.from_names(_entities_of(triples) | set(label_entities) | set(extra_entities))

    seen = set()
    for t in triples:
        if t.relation != DIAGNOSIS:
            continue
        if t.subject in seen:
            raise GraphError(f"patient {t.subject} has more than one diagnosis triple")
        if t.object not in label_entities:
            raise GraphError(f"diagnosis object {t.object} is not a label entity")
        seen.add(t.subject)

    return KnowledgeGraph(
        entities=entities,
        relations=relations,
        triples=triples,
        diagnosis_relation=relations.index(DIAGNOSIS),
        label_entities=(entities.index(label_entities[0]), entities.index(label_entities[1])),
    )


# ----------------------------------------------------------------------
# Triples from the table
# ----------------------------------------------------------------------
def _format_number(value):
    return np.format_float_positional(float(value), trim='-')


def original_levels(matrix, j, n_bins, max_levels):
    """Entity level name for every sample in original feature column j"""
    column = matrix.values[:, j]
    levels = matrix.levels[j]
    if levels is not None:
        return [levels[int(v)] for v in column]
    distinct = np.unique(column)
    if len(distinct) <= max_levels:
        return [_format_number(v) for v in column]
    lo, hi = float(column.min()), float(column.max())
    edges = np.linspace(lo, hi, n_bins + 1)
    bins = np.clip(np.searchsorted(edges, column, side='right') - 1, 0, n_bins - 1)
    return [f"bin{b}" for b in bins]


def triples_from_table(matrix, augmented_bins, augmented_ids=None, n_bins=5, max_levels=10):
    """Build (S_o, S_a) from the raw matrix and binned augmented features.

    `augmented_bins` maps augmented feature name -> bin per sample, in the
    order of `augmented_ids` (defaults to the matrix order).
    """
    if augmented_ids is not None and tuple(augmented_ids) != tuple(matrix.sample_ids):
        raise GraphError("augmented features are not aligned with the table's sample IDs")
    for name, bins in augmented_bins.items():
        if len(bins) != matrix.n_samples:
            raise GraphError(f"augmented feature {name} has {len(bins)} values "
                             f"for {matrix.n_samples} samples")

    patients = [patient_entity(sid) for sid in matrix.sample_ids]
    negative, positive = matrix.label_names

    s_o = set()
    for j, feature in enumerate(matrix.feature_names):
        relation = feature_relation(feature)
        for patient, level in zip(patients, original_levels(matrix, j, n_bins, max_levels)):
            s_o.add(Triple(patient, relation, value_entity(feature, level)))
    if matrix.labels is not None:
        for patient, label in zip(patients, matrix.labels):
            if label == 1:
                s_o.add(Triple(patient, DIAGNOSIS, label_entity(positive)))
            elif label == 0:
                s_o.add(Triple(patient, DIAGNOSIS, label_entity(negative)))

    s_a = set()
    for name in sorted(augmented_bins, key=lambda n: (len(n), n)):
        relation = feature_relation(name)
        for patient, b in zip(patients, augmented_bins[name]):
            s_a.add(Triple(patient, relation, value_entity(name, int(b))))

    return frozenset(s_o), frozenset(s_a)


def default_labels(matrix):
    negative, positive = matrix.label_names
    return (label_entity(negative), label_entity(positive))


def fuse(s_o, s_a, label_entities=(label_entity('benign'), label_entity('malignant'))):
    graph = build_graph(frozenset(s_o) | frozenset(s_a), tuple(label_entities))
    logger.info("Fused graph: %d entities, %d relations, %d triples (|S_o|=%d, |S_a|=%d)",
                len(graph.entities), len(graph.relations), len(graph), len(s_o), len(s_a))
    return graph


def add_reciprocals(graph):
    """Add (o, r_reverse, s) for every triple; vocabularies are rebuilt"""
    reverse = {Triple(t.object, t.relation + REVERSE_SUFFIX, t.subject) for t in graph.triples}
    return build_graph(graph.triples | reverse, graph.label_names,
                       extra_entities=graph.entities.names, extra_relations=graph.relations.names)


def holdout(graph, patients, strict=False):
    """Training graph with the given patients' diagnoses removed.

    The vocabularies stay frozen so held-out patients keep their indices.
    With `strict`, every triple touching those patients is removed.
    """
    patients = set(patients)
    diagnosis = graph.diagnosis_name
    reverse = diagnosis + REVERSE_SUFFIX
    kept = set()
    for t in graph.triples:
        if strict and (t.subject in patients or t.object in patients):
            continue
        if t.relation == diagnosis and t.subject in patients:
            continue
        if t.relation == reverse and t.object in patients:
            continue
        kept.add(t)
    return KnowledgeGraph(graph.entities, graph.relations, frozenset(kept),
                          graph.diagnosis_relation, graph.label_entities)


# ----------------------------------------------------------------------
# Triple file format
# ----------------------------------------------------------------------
def write_triples(graph, path):
    used_entities = _entities_of(graph.triples) | set(graph.label_names)
    used_relations = {t.relation for t in graph.triples} | {graph.diagnosis_name}
    lines = [FILE_HEADER,
             '# labels\t' + '\t'.join(graph.label_names)]
    lines += [f"# entity\t{name}" for name in graph.entities.names if name not in used_entities]
    lines += [f"# relation\t{name}" for name in graph.relations.names if name not in used_relations]
    lines += ['\t'.join(t) for t in graph.sorted_triples()]
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


def read_triples(path):
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise GraphError(f"cannot read triple file {path}: {e}") from e

    triples = set()
    labels = (label_entity('benign'), label_entity('malignant'))
    extra_entities, extra_relations = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith('#'):
            parts = line[1:].strip().split('\t')
            if parts[0] == 'labels' and len(parts) == 3:
                labels = (parts[1], parts[2])
            elif parts[0] == 'entity' and len(parts) == 2:
                extra_entities.append(parts[1])
            elif parts[0] == 'relation' and len(parts) == 2:
                extra_relations.append(parts[1])
            continue
        parts = line.split('\t')
        if len(parts) != 3:
            raise GraphError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        triples.add(Triple(*parts))
    return build_graph(triples, labels, extra_entities, extra_relations)

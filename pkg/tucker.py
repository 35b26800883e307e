"""
Tucker-decomposition link predictor.

phi(s, r, o) = W x1 e_s x2 w_r x3 e_o with one entity table shared by
subjects and objects. Queries (s, r) are scored against every entity at
once (1-N scoring) and trained with binary cross-entropy, analytic
gradients and Adam.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from config import KgdaError

logger = logging.getLogger(__name__)

PROB_EPS = 1e-12
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CHECKPOINT_FORMAT = 'kgda-tucker-checkpoint/1'


class ModelError(KgdaError):
    pass


class TrainingDivergedError(ModelError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.0005
    input_dropout: float = 0.3
    hidden_dropout1: float = 0.4
    hidden_dropout2: float = 0.5
    entity_dim: int = 200
    relation_dim: int = 200
    batch_size: int = 128
    seed: int = 0
    batch_norm: bool = False
    label_smoothing: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    log_every: int = 50

    def __post_init__(self):
        for name in ('input_dropout', 'hidden_dropout1', 'hidden_dropout2', 'label_smoothing'):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ModelError(f"{name} must lie in [0, 1), got {rate}")
        if self.learning_rate <= 0:
            raise ModelError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ModelError(f"epochs must be >= 0, got {self.epochs}")
        if self.entity_dim < 1 or self.relation_dim < 1:
            raise ModelError("embedding dimensions must be positive")
        if self.batch_size < 1:
            raise ModelError(f"batch_size must be >= 1, got {self.batch_size}")


# ----------------------------------------------------------------------
# Optimizer
# ----------------------------------------------------------------------
@dataclass
class OptimizerState:
    """Adam moments per parameter tensor"""
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params, grads, lr):
        self.step += 1
        bc1 = 1.0 - self.beta1 ** self.step
        bc2 = 1.0 - self.beta2 ** self.step
        step_size = lr / bc1

        for name in sorted(grads):
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])

            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)

            denom = np.sqrt(self.v[name] * (1.0 / bc2)) + self.epsilon
            params[name] -= step_size * self.m[name] / denom


# ----------------------------------------------------------------------
# Model
# ----------------------------------------------------------------------
@dataclass(eq=False)
class TuckerModel:
    params: dict
    config: TrainConfig
    running: dict = field(default_factory=dict)
    optimizer: OptimizerState | None = None

    @property
    def entity_embeddings(self):
        return self.params['E']

    @property
    def relation_embeddings(self):
        return self.params['R']

    @property
    def core(self):
        return self.params['W']

    @property
    def n_entities(self):
        return self.params['E'].shape[0]

    @property
    def n_relations(self):
        return self.params['R'].shape[0]

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.params.values())


def init_model(m_e, m_r, config):
    if m_e < 2:
        raise ModelError(f"need at least 2 entities, got {m_e}")
    if m_r < 1:
        raise ModelError(f"need at least 1 relation, got {m_r}")
    k_e, k_r = config.entity_dim, config.relation_dim
    rng = np.random.default_rng([config.seed, 0])

    # zero-mean uniform, unit variance per dot product (fan-in = embedding width)
    bound_e = np.sqrt(3.0 / k_e)
    bound_r = np.sqrt(3.0 / k_r)
    params = {
        'E': rng.uniform(-bound_e, bound_e, size=(m_e, k_e)),
        'R': rng.uniform(-bound_r, bound_r, size=(m_r, k_r)),
        'W': rng.uniform(-0.1, 0.1, size=(k_e, k_r, k_e)),
    }
    running = {}
    if config.batch_norm:
        for prefix in ('bn0', 'bn1'):
            params[f'{prefix}_gamma'] = np.ones(k_e)
            params[f'{prefix}_beta'] = np.zeros(k_e)
            running[f'{prefix}_mean'] = np.zeros(k_e)
            running[f'{prefix}_var'] = np.ones(k_e)
    return TuckerModel(params=params, config=config, running=running,
                       optimizer=OptimizerState(config.beta1, config.beta2, config.adam_epsilon))


# ----------------------------------------------------------------------
# Forward / backward
# ----------------------------------------------------------------------
def _dropout_mask(rng, shape, rate):
    if rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _bn_forward(x, gamma, beta, train_mode, mean, var):
    if train_mode:
        mean = x.mean(axis=0)
        var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, mean, var)


def _bn_backward(dy, gamma, cache, train_mode):
    xhat, inv_std, _, _ = cache
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    dxhat = dy * gamma
    if not train_mode:
        return dxhat * inv_std, dgamma, dbeta
    n = dy.shape[0]
    dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return dx, dgamma, dbeta


def _core_by_relation(W):
    """W rearranged to (k_r, k_e * k_e) so that w_r @ it gives W x2 w_r"""
    k_e, k_r, _ = W.shape
    return W.transpose(1, 0, 2).reshape(k_r, k_e * k_e)


def _forward(model, subjects, relations, train_mode, rng):
    params = model.params
    cfg = model.config
    E, R, W = params['E'], params['R'], params['W']
    k_e = E.shape[1]
    batch = len(subjects)
    cache = {'subjects': subjects, 'relations': relations}

    x = E[subjects]
    if cfg.batch_norm:
        x, cache['bn0'] = _bn_forward(x, params['bn0_gamma'], params['bn0_beta'], train_mode,
                                      model.running.get('bn0_mean'), model.running.get('bn0_var'))
    mask0 = _dropout_mask(rng, x.shape, cfg.input_dropout) if train_mode else None
    x0 = x * mask0 if mask0 is not None else x

    wr = R[relations]
    core_r = _core_by_relation(W)
    M = (wr @ core_r).reshape(batch, k_e, k_e)
    mask1 = _dropout_mask(rng, M.shape, cfg.hidden_dropout1) if train_mode else None
    Md = M * mask1 if mask1 is not None else M

    h = np.matmul(x0[:, None, :], Md)[:, 0, :]
    if cfg.batch_norm:
        h, cache['bn1'] = _bn_forward(h, params['bn1_gamma'], params['bn1_beta'], train_mode,
                                      model.running.get('bn1_mean'), model.running.get('bn1_var'))
    mask2 = _dropout_mask(rng, h.shape, cfg.hidden_dropout2) if train_mode else None
    hd = h * mask2 if mask2 is not None else h

    logits = hd @ E.T
    cache.update(x0=x0, wr=wr, core_r=core_r, Md=Md, hd=hd,
                 mask0=mask0, mask1=mask1, mask2=mask2, train_mode=train_mode)
    return logits, cache


def _backward(model, dlogits, cache):
    params = model.params
    cfg = model.config
    E, W = params['E'], params['W']
    k_e, k_r, _ = W.shape
    batch = dlogits.shape[0]
    train_mode = cache['train_mode']
    grads = {name: np.zeros_like(p) for name, p in params.items()}

    grads['E'] += dlogits.T @ cache['hd']
    dh = dlogits @ E
    if cache['mask2'] is not None:
        dh = dh * cache['mask2']
    if cfg.batch_norm:
        dh, grads['bn1_gamma'], grads['bn1_beta'] = _bn_backward(
            dh, params['bn1_gamma'], cache['bn1'], train_mode)

    x0, Md = cache['x0'], cache['Md']
    dx = np.matmul(Md, dh[:, :, None])[:, :, 0]
    dM = x0[:, :, None] * dh[:, None, :]
    if cache['mask1'] is not None:
        dM = dM * cache['mask1']
    dM = dM.reshape(batch, k_e * k_e)

    grads['W'] = (cache['wr'].T @ dM).reshape(k_r, k_e, k_e).transpose(1, 0, 2).copy()
    dwr = dM @ cache['core_r'].T

    if cache['mask0'] is not None:
        dx = dx * cache['mask0']
    if cfg.batch_norm:
        dx, grads['bn0_gamma'], grads['bn0_beta'] = _bn_backward(
            dx, params['bn0_gamma'], cache['bn0'], train_mode)

    np.add.at(grads['E'], cache['subjects'], dx)
    np.add.at(grads['R'], cache['relations'], dwr)
    return grads


def _check_ids(model, subjects, relations):
    if np.any((subjects < 0) | (subjects >= model.n_entities)):
        raise ModelError(f"unknown entity id in {subjects.tolist()}")
    if np.any((relations < 0) | (relations >= model.n_relations)):
        raise ModelError(f"unknown relation id in {relations.tolist()}")


def score_queries(model, subjects, relations, train_mode=False, rng=None):
    """Probabilities over all entities for a batch of (s, r) queries"""
    subjects = np.atleast_1d(np.asarray(subjects, dtype=np.int64))
    relations = np.atleast_1d(np.asarray(relations, dtype=np.int64))
    _check_ids(model, subjects, relations)
    if train_mode and rng is None:
        rng = np.random.default_rng([model.config.seed, 2])
    logits, _ = _forward(model, subjects, relations, train_mode, rng)
    return expit(logits)


def score_all(model, subject, relation, train_mode=False, rng=None):
    return score_queries(model, [subject], [relation], train_mode, rng)[0]


def smooth_targets(targets, label_smoothing):
    if label_smoothing <= 0.0:
        return targets
    return (1.0 - label_smoothing) * targets + 1.0 / targets.shape[1]


def _loss_and_grads(model, queries, targets, train_mode, rng):
    queries = np.asarray(queries, dtype=np.int64).reshape(-1, 2)
    subjects, relations = queries[:, 0], queries[:, 1]
    _check_ids(model, subjects, relations)
    targets = smooth_targets(np.asarray(targets, dtype=np.float64), model.config.label_smoothing)

    logits, cache = _forward(model, subjects, relations, train_mode, rng)
    p = expit(logits)
    clipped = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    loss = -float(np.mean(targets * np.log(clipped) + (1.0 - targets) * np.log(1.0 - clipped)))

    dlogits = (p - targets) / targets.size
    grads = _backward(model, dlogits, cache)
    stats = {name: cache[name] for name in ('bn0', 'bn1') if name in cache}
    return loss, grads, stats


def loss_and_grads(model, queries, targets, train_mode=True, rng=None):
    """Mean 1-N binary cross-entropy over the batch and its analytic gradients"""
    if train_mode and rng is None:
        rng = np.random.default_rng([model.config.seed, 3])
    loss, grads, _ = _loss_and_grads(model, queries, targets, train_mode, rng)
    return loss, grads


# ----------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------
def training_queries(graph):
    """Distinct (s, r) queries in sorted order and their observed objects"""
    objects = {}
    for s, r, o in graph.triple_array():
        objects.setdefault((int(s), int(r)), []).append(int(o))
    queries = np.array(sorted(objects), dtype=np.int64).reshape(-1, 2)
    return queries, [objects[(int(s), int(r))] for s, r in queries]


def _targets(objects, n_entities):
    targets = np.zeros((len(objects), n_entities))
    for i, objs in enumerate(objects):
        targets[i, objs] = 1.0
    return targets


def _update_running(model, stats):
    for prefix, (_, _, mean, var) in stats.items():
        model.running[f'{prefix}_mean'] = (1 - BN_MOMENTUM) * model.running[f'{prefix}_mean'] + BN_MOMENTUM * mean
        model.running[f'{prefix}_var'] = (1 - BN_MOMENTUM) * model.running[f'{prefix}_var'] + BN_MOMENTUM * var


def train(graph, config):
    if len(graph) == 0:
        raise ModelError("cannot train on an empty graph")
    model = init_model(len(graph.entities), len(graph.relations), config)
    queries, objects = training_queries(graph)
    history = []
    if config.epochs == 0:
        return model, history

    rng = np.random.default_rng([config.seed, 1])
    n_queries = len(queries)
    logger.info("Training Tucker: %d entities, %d relations, %d queries, %d epochs",
                model.n_entities, model.n_relations, n_queries, config.epochs)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_queries)
        total = 0.0
        for batch_no, start in enumerate(range(0, n_queries, config.batch_size), start=1):
            idx = order[start:start + config.batch_size]
            targets = _targets([objects[i] for i in idx], model.n_entities)
            loss, grads, stats = _loss_and_grads(model, queries[idx], targets, True, rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, batch {batch_no}")
            _update_running(model, stats)
            model.optimizer.update(model.params, grads, config.learning_rate)
            if not model.is_finite():
                bad = sorted(n for n, p in model.params.items() if not np.all(np.isfinite(p)))
                raise TrainingDivergedError(
                    f"parameters {bad} became non-finite at epoch {epoch}, batch {batch_no}")
            total += loss * len(idx)
        history.append(total / n_queries)
        logger.debug("epoch %d loss %.6f", epoch, history[-1])
        if config.log_every and epoch % config.log_every == 0:
            logger.info("epoch %d/%d loss %.6f", epoch, config.epochs, history[-1])
    return model, history


# ----------------------------------------------------------------------
# Diagnosis
# ----------------------------------------------------------------------
def diagnosis_scores(model, graph, patients):
    """(p_negative, p_positive) arrays for the given patient names or ids"""
    ids = np.array([graph.entities.index(p) if isinstance(p, str) else int(p) for p in patients],
                   dtype=np.int64)
    probs = score_queries(model, ids, np.full(len(ids), graph.diagnosis_relation))
    negative, positive = graph.label_entities
    return probs[:, negative], probs[:, positive]


def predict_diagnosis(model, graph, patient):
    """(malignant score, predicted label name); ties go to the benign label"""
    p_neg, p_pos = diagnosis_scores(model, graph, [patient])
    negative, positive = graph.label_names
    label = positive if p_pos[0] > p_neg[0] else negative
    return float(p_pos[0]), label


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------
def save_checkpoint(model, path, graph=None):
    """Directory with meta.json plus one float64 .npy per tensor"""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = {**{f'param_{k}': v for k, v in model.params.items()},
               **{f'running_{k}': v for k, v in model.running.items()}}
    for name in sorted(tensors):
        np.save(path / f'{name}.npy', np.ascontiguousarray(tensors[name], dtype=np.float64))
    meta = {
        'format': CHECKPOINT_FORMAT,
        'entity_dim': model.config.entity_dim,
        'relation_dim': model.config.relation_dim,
        'n_entities': model.n_entities,
        'n_relations': model.n_relations,
        'seed': model.config.seed,
        'config': dataclasses.asdict(model.config),
        'optimizer_step': model.optimizer.step if model.optimizer else 0,
        'tensors': sorted(tensors),
        'entity_vocab_sha256': graph.entities.digest() if graph is not None else None,
        'relation_vocab_sha256': graph.relations.digest() if graph is not None else None,
    }
    (path / 'meta.json').write_text(json.dumps(meta, indent=2, sort_keys=True) + '\n', encoding='utf-8')


def load_checkpoint(path, graph=None):
    path = Path(path)
    try:
        meta = json.loads((path / 'meta.json').read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise ModelError(f"cannot read checkpoint {path}: {e}") from e
    if meta.get('format') != CHECKPOINT_FORMAT:
        raise ModelError(f"{path} is not a {CHECKPOINT_FORMAT} checkpoint")
    if graph is not None:
        if meta['entity_vocab_sha256'] not in (None, graph.entities.digest()):
            raise ModelError(f"checkpoint {path} was trained on a different entity vocabulary")
        if meta['relation_vocab_sha256'] not in (None, graph.relations.digest()):
            raise ModelError(f"checkpoint {path} was trained on a different relation vocabulary")

    config = TrainConfig(**meta['config'])
    params, running = {}, {}
    for name in meta['tensors']:
        array = np.load(path / f'{name}.npy')
        if name.startswith('param_'):
            params[name[len('param_'):]] = array
        else:
            running[name[len('running_'):]] = array
    optimizer = OptimizerState(config.beta1, config.beta2, config.adam_epsilon,
                               step=int(meta.get('optimizer_step', 0)))
    return TuckerModel(params=params, config=config, running=running, optimizer=optimizer)

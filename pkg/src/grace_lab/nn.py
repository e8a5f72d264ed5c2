"""Tiny numpy networks with hand-written backprop.

Everything trainable in grace_lab is one of two parts:

* ``FeatureExtractor`` -- an MLP ``input -> hidden* -> feature`` with ReLU on
  hidden layers and an affine (non-activated) feature layer.
* ``LinearHead`` -- a bias-free matrix with one row per output.

A model at any training phase is a set of named extractors, a set of named
heads (each reading the concatenation of some extractors' outputs) and a list
of weighted loss terms on head outputs.  ``loss_and_grads`` evaluates that
graph once and backpropagates exactly; ``train`` wraps it in minibatch SGD.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericalError, ShapeError

DTYPE = np.float64


@dataclass
class FeatureExtractor:
    weights: list  # each (fan_in, fan_out)
    biases: list  # each (fan_out,)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_dims(self) -> tuple:
        return (self.input_dim,) + tuple(w.shape[1] for w in self.weights)

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        self.weights = list(arrays[0::2])
        self.biases = list(arrays[1::2])

    def copy(self) -> "FeatureExtractor":
        return FeatureExtractor([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class LinearHead:
    weight: np.ndarray  # (outputs, inputs)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def arrays(self) -> list:
        return [self.weight]

    def set_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        (self.weight,) = arrays

    def copy(self) -> "LinearHead":
        return LinearHead(self.weight.copy())

    def __call__(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weight.T


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0", "learning_rate")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)", "momentum")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0", "weight_decay")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", "epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "batch_size")


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(DTYPE)


def init_extractor(input_dim: int, hidden_dims: Sequence[int], feature_dim: int, seed) -> FeatureExtractor:
    dims = [input_dim, *hidden_dims, feature_dim]
    if any(int(d) < 1 for d in dims):
        raise ConfigError(f"all layer dims must be >= 1, got {dims}", "dims")
    rng = np.random.default_rng(seed)
    weights = [_uniform(rng, a, b) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b, dtype=DTYPE) for b in dims[1:]]
    return FeatureExtractor(weights, biases)


def init_head(out_dim: int, in_dim: int, seed) -> LinearHead:
    if out_dim < 1 or in_dim < 1:
        raise ConfigError(f"head dims must be >= 1, got ({out_dim}, {in_dim})", "dims")
    rng = np.random.default_rng(seed)
    return LinearHead(_uniform(rng, in_dim, out_dim).T.copy())


def _forward(phi: FeatureExtractor, X: np.ndarray):
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim != 2 or X.shape[1] != phi.input_dim:
        raise ShapeError(f"expected (n, {phi.input_dim}) input, got {X.shape}")
    acts = [X]
    h = X
    last = len(phi.weights) - 1
    for i, (w, b) in enumerate(zip(phi.weights, phi.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def _backward(phi: FeatureExtractor, acts, d_out: np.ndarray) -> list:
    grads = [None] * (2 * len(phi.weights))
    delta = d_out
    for i in range(len(phi.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ phi.weights[i].T) * (acts[i] > 0)
    return grads


def forward_features(phi: FeatureExtractor, X: np.ndarray) -> np.ndarray:
    return _forward(phi, X)[0]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. ``logits``. Targets are row indices."""
    targets = np.asarray(targets, dtype=np.intp)
    n, c = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} != ({n},)")
    if n and (targets.min() < 0 or targets.max() >= c):
        raise ShapeError(f"target index out of range for {c} outputs")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), targets].mean()
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def distillation_kl(teacher_logits: np.ndarray, student_logits: np.ndarray, temperature: float):
    """``T^2 * KL(softmax(t/T) || softmax(s/T))`` averaged over rows, with gradient w.r.t. student."""
    if teacher_logits.shape != student_logits.shape:
        raise ShapeError(f"logit shapes differ: {teacher_logits.shape} vs {student_logits.shape}")
    if not temperature > 0:
        raise ConfigError("temperature must be > 0", "temperature")
    T = temperature
    n = student_logits.shape[0]
    log_pt = log_softmax(teacher_logits / T)
    log_ps = log_softmax(student_logits / T)
    pt = np.exp(log_pt)
    kl = (pt * (log_pt - log_ps)).sum(axis=1)
    loss = T * T * kl.mean()
    grad = T * (np.exp(log_ps) - pt) / n
    return loss, grad


def mean_squared_error(pred: np.ndarray, target: np.ndarray):
    if pred.shape != target.shape:
        raise ShapeError(f"shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return np.mean(diff * diff), 2.0 * diff / diff.size


_LOSSES = {
    "ce": lambda out, term: cross_entropy(out, term.target),
    "kd": lambda out, term: distillation_kl(term.target, out, term.temperature),
    "mse": lambda out, term: mean_squared_error(out, term.target),
}


@dataclass
class Head:
    head: LinearHead
    inputs: tuple  # extractor names, concatenated in this order


@dataclass
class LossTerm:
    name: str
    kind: str  # "ce" | "kd" | "mse"
    source: str  # head name
    target: np.ndarray  # class indices (ce), teacher logits (kd) or target matrix (mse)
    weight: float = 1.0
    temperature: float = 1.0


@dataclass
class Graph:
    extractors: dict
    heads: dict = field(default_factory=dict)

    def part(self, name):
        if name in self.extractors:
            return self.extractors[name]
        return self.heads[name].head

    def copy(self) -> "Graph":
        return copy.deepcopy(self)


def concat_features(graph: Graph, names: Iterable[str], X: np.ndarray) -> np.ndarray:
    return np.concatenate([forward_features(graph.extractors[n], X) for n in names], axis=1)


def loss_and_grads(graph: Graph, terms: Sequence[LossTerm], X: np.ndarray, trainable: Iterable[str]):
    """Evaluate the weighted loss of ``terms`` on batch ``X``.

    Returns ``(total, grads, breakdown)`` where ``grads`` maps each trainable
    part name to a list of arrays shaped like ``part.arrays()`` and
    ``breakdown`` maps term names to their unweighted values.
    """
    trainable = list(trainable)
    for name in trainable:
        if name not in graph.extractors and name not in graph.heads:
            raise ContractError(f"trainable part {name!r} is not declared in the graph")
    for term in terms:
        if term.source not in graph.heads:
            raise ContractError(f"loss term {term.name!r} reads undeclared head {term.source!r}")
        if term.kind not in _LOSSES:
            raise ContractError(f"unknown loss kind {term.kind!r}")

    used_heads = {t.source for t in terms}
    used_ext = sorted({e for h in used_heads for e in graph.heads[h].inputs})
    feats, caches = {}, {}
    for name in used_ext:
        feats[name], caches[name] = _forward(graph.extractors[name], X)

    outputs = {}
    for h in used_heads:
        spec = graph.heads[h]
        cat = np.concatenate([feats[e] for e in spec.inputs], axis=1)
        if cat.shape[1] != spec.head.in_dim:
            raise ShapeError(f"head {h!r} expects {spec.head.in_dim} inputs, got {cat.shape[1]}")
        outputs[h] = (cat, cat @ spec.head.weight.T)

    total = 0.0
    breakdown = {}
    d_out = {h: 0.0 for h in used_heads}
    for term in terms:
        value, grad = _LOSSES[term.kind](outputs[term.source][1], term)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss in term {term.name!r}", term.name)
        breakdown[term.name] = float(value)
        total += term.weight * value
        d_out[term.source] = d_out[term.source] + term.weight * grad

    grads = {}
    d_feat = {}
    for h in used_heads:
        spec = graph.heads[h]
        cat, _ = outputs[h]
        dz = d_out[h]
        if np.isscalar(dz):
            dz = np.zeros_like(outputs[h][1])
        if h in trainable:
            grads[h] = [dz.T @ cat]
        dcat = dz @ spec.head.weight
        col = 0
        for e in spec.inputs:
            width = feats[e].shape[1]
            if e in trainable:
                d_feat[e] = d_feat.get(e, 0.0) + dcat[:, col:col + width]
            col += width

    for name in trainable:
        if name in graph.heads:
            grads.setdefault(name, [np.zeros_like(graph.heads[name].head.weight)])
            continue
        phi = graph.extractors[name]
        if name in d_feat:
            grads[name] = _backward(phi, caches[name], d_feat[name])
        else:
            grads[name] = [np.zeros_like(a) for a in phi.arrays()]
    return float(total), grads, breakdown


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], config: SgdConfig, velocity=None):
    """One SGD update. Returns ``(new_params, new_velocity)``; inputs are not modified."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params vs {len(grads)} grads")
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    new_p, new_v = [], []
    for p, g, v in zip(params, grads, velocity):
        if p.shape != np.shape(g):
            raise ShapeError(f"grad shape {np.shape(g)} != param shape {p.shape}")
        v = config.momentum * v + g
        new_v.append(v)
        new_p.append(p - config.learning_rate * (v + config.weight_decay * p))
    return new_p, new_v


def train(graph: Graph, trainable: Sequence[str], X: np.ndarray, make_terms: Callable, config: SgdConfig):
    """Minibatch SGD over ``X``; updates the trainable parts of ``graph`` in place.

    ``make_terms(idx)`` builds the loss terms for the batch ``X[idx]``.
    Returns the per-epoch mean of each term's unweighted value.
    """
    X = np.asarray(X, dtype=DTYPE)
    n = X.shape[0]
    if n == 0:
        raise ContractError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    velocity = {name: None for name in trainable}
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        sums, batches = {}, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, grads, parts = loss_and_grads(graph, make_terms(idx), X[idx], trainable)
            for name in trainable:
                part = graph.part(name)
                new, velocity[name] = sgd_step(part.arrays(), grads[name], config, velocity[name])
                part.set_arrays(new)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            batches += 1
        history.append({k: v / batches for k, v in sums.items()})
    return history


def param_count(parts: Iterable) -> int:
    total = 0
    for part in parts:
        if part is None:
            continue
        total += sum(int(a.size) for a in part.arrays())
    return total


def parts_equal(a, b) -> bool:
    """Bit-exact parameter equality."""
    xs, ys = a.arrays(), b.arrays()
    return len(xs) == len(ys) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(xs, ys))


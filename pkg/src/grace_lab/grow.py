"""Backbone expansion: provisional extractor, expanded classifier, auxiliary head, Weight-Align."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .errors import DataError, NumericalError, PhaseOrderError, ShapeError
from .stream import Dataset

CLS, AUX = "cls", "aux"
MERGE, PROV = "merge", "prov"


@dataclass
class CompositeModel:
    """Fixed backbones, one mergeable backbone, an optional provisional one and a shared classifier.

    Classifier rows follow ``classes``; its input columns follow the extractor
    order ``fixed..., mergeable, provisional``.
    """

    fixed: list
    mergeable: nn.FeatureExtractor
    classifier: nn.LinearHead
    classes: tuple
    provisional: Optional[nn.FeatureExtractor] = None
    aux_head: Optional[nn.LinearHead] = None
    merge_classes: int = 0  # classes the mergeable backbone was trained to represent
    _row_of: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.classes = tuple(int(c) for c in self.classes)
        self._row_of = {c: i for i, c in enumerate(self.classes)}
        width = self.feature_dim * self.backbone_count
        if self.classifier.weight.shape != (len(self.classes), width):
            raise ShapeError(
                f"classifier {self.classifier.weight.shape} does not match "
                f"{len(self.classes)} classes x {width} features"
            )

    @property
    def feature_dim(self) -> int:
        return self.mergeable.feature_dim

    def extractor_names(self) -> list:
        names = [f"fixed{i}" for i in range(len(self.fixed))] + [MERGE]
        if self.provisional is not None:
            names.append(PROV)
        return names

    def extractors(self) -> dict:
        out = {f"fixed{i}": phi for i, phi in enumerate(self.fixed)}
        out[MERGE] = self.mergeable
        if self.provisional is not None:
            out[PROV] = self.provisional
        return out

    @property
    def backbone_count(self) -> int:
        return len(self.fixed) + 1 + (self.provisional is not None)

    def graph(self) -> nn.Graph:
        """Graph view sharing this model's parameter arrays (training it mutates the model)."""
        heads = {CLS: nn.Head(self.classifier, tuple(self.extractor_names()))}
        if self.aux_head is not None:
            heads[AUX] = nn.Head(self.aux_head, (PROV,))
        return nn.Graph(self.extractors(), heads)

    def features(self, X) -> np.ndarray:
        return np.concatenate([nn.forward_features(phi, X) for phi in self.extractors().values()], axis=1)

    def logits(self, X) -> np.ndarray:
        return self.classifier(self.features(X))

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.classes)[np.argmax(self.logits(X), axis=1)]

    def rows(self, labels) -> np.ndarray:
        try:
            return np.array([self._row_of[int(c)] for c in labels], dtype=np.intp)
        except KeyError as exc:
            raise DataError(f"label {exc.args[0]} is not a class of this model") from None

    def parts(self) -> list:
        return list(self.extractors().values()) + [self.classifier]

    def param_count(self) -> int:
        return nn.param_count(self.parts())

    def copy(self) -> "CompositeModel":
        return copy.deepcopy(self)


def _seeds(seed, n):
    return np.random.SeedSequence(seed).spawn(n) if not isinstance(seed, np.random.SeedSequence) else seed.spawn(n)


def new_model(input_dim: int, hidden_dims: Sequence[int], feature_dim: int, classes: Sequence[int], seed) -> CompositeModel:
    """Single-backbone model for the first task."""
    s_ext, s_cls = _seeds(seed, 2)
    phi = nn.init_extractor(input_dim, hidden_dims, feature_dim, s_ext)
    head = nn.init_head(len(classes), feature_dim, s_cls)
    return CompositeModel([], phi, head, tuple(classes), merge_classes=len(classes))


def add_classes(model: CompositeModel, new_classes: Sequence[int], seed) -> CompositeModel:
    """Append classifier rows for ``new_classes`` without touching the extractors."""
    out = model.copy()
    fresh = nn.init_head(len(new_classes), model.classifier.in_dim, seed)
    out.classifier = nn.LinearHead(np.vstack([model.classifier.weight, fresh.weight]))
    out.classes = model.classes + tuple(new_classes)
    out.__post_init__()
    return out


def expand(model: CompositeModel, new_classes: Sequence[int], seed) -> CompositeModel:
    """Allocate a provisional backbone and grow the classifier by ``len(new_classes)`` rows and d columns."""
    if model.provisional is not None:
        raise PhaseOrderError("model already has a provisional backbone")
    new_classes = tuple(int(c) for c in new_classes)
    if set(new_classes) & set(model.classes):
        raise DataError("new classes overlap the classes already known")
    s_ext, s_cls, s_aux = _seeds(seed, 3)
    dims = model.mergeable.layer_dims
    prov = nn.init_extractor(dims[0], dims[1:-1], dims[-1], s_ext)
    d = model.feature_dim
    old_rows, old_cols = model.classifier.weight.shape
    W = nn.init_head(old_rows + len(new_classes), old_cols + d, s_cls).weight
    W[:old_rows, :old_cols] = model.classifier.weight
    out = CompositeModel(
        fixed=[phi.copy() for phi in model.fixed],
        mergeable=model.mergeable.copy(),
        classifier=nn.LinearHead(W),
        classes=model.classes + new_classes,
        provisional=prov,
        aux_head=nn.init_head(len(new_classes) + 1, d, s_aux),
        merge_classes=model.merge_classes,
    )
    return out


def aux_targets(labels, task_classes: Sequence[int], known_classes: Optional[Sequence[int]] = None) -> np.ndarray:
    """Auxiliary labels: 0 for every old class, 1..|task| by sorted position for the current task."""
    position = {c: i + 1 for i, c in enumerate(sorted(int(c) for c in task_classes))}
    known = None if known_classes is None else {int(c) for c in known_classes}
    out = np.zeros(len(labels), dtype=np.intp)
    for i, c in enumerate(labels):
        c = int(c)
        if c in position:
            out[i] = position[c]
        elif known is not None and c not in known:
            raise DataError(f"label {c} is unknown to the model")
    return out


def base_problem(model: CompositeModel, data: Dataset, trainable=(MERGE, CLS)):
    """Plain cross-entropy on the full model (first task, finetune and replay)."""
    graph = model.graph()
    rows = model.rows(data.y)

    def make_terms(idx):
        return [nn.LossTerm("ce", "ce", CLS, rows[idx])]

    return graph, make_terms, list(trainable)


def expansion_problem(model: CompositeModel, data: Dataset, task_classes: Sequence[int]):
    """Graph, batch-term builder and trainable parts for expansion training."""
    if model.provisional is None or model.aux_head is None:
        raise PhaseOrderError("expansion training needs a provisional backbone and auxiliary head")
    graph = model.graph()
    rows = model.rows(data.y)
    aux = aux_targets(data.y, task_classes, model.classes)

    def make_terms(idx):
        return [
            nn.LossTerm("ce", "ce", CLS, rows[idx]),
            nn.LossTerm("aux_ce", "ce", AUX, aux[idx]),
        ]

    return graph, make_terms, [PROV, CLS, AUX]


def train_base(model: CompositeModel, data: Dataset, sgd: nn.SgdConfig, train_backbone: bool = True):
    out = model.copy()
    trainable = (MERGE, CLS) if train_backbone else (CLS,)
    graph, make_terms, trainable = base_problem(out, data, trainable)
    history = nn.train(graph, trainable, data.X, make_terms, sgd)
    return out, history


def train_expansion(model: CompositeModel, data: Dataset, task_classes: Sequence[int], sgd: nn.SgdConfig):
    """Train provisional backbone, classifier and auxiliary head; the aux head is dropped afterwards."""
    out = model.copy()
    graph, make_terms, trainable = expansion_problem(out, data, task_classes)
    history = nn.train(graph, trainable, data.X, make_terms, sgd)
    out.aux_head = None
    return out, history


def align_factor(head: nn.LinearHead, old_rows: Sequence[int], new_rows: Sequence[int]) -> float:
    old_rows, new_rows = list(old_rows), list(new_rows)
    if not old_rows or not new_rows:
        raise DataError("Weight-Align needs both old and new rows")
    if set(old_rows) & set(new_rows):
        raise DataError("old and new rows overlap")
    norms = np.linalg.norm(head.weight, axis=1)
    new_mean = norms[new_rows].mean()
    if new_mean == 0:
        raise NumericalError("mean norm of new-class rows is zero")
    return float(norms[old_rows].mean() / new_mean)


def weight_align(head: nn.LinearHead, old_rows: Sequence[int], new_rows: Sequence[int]) -> nn.LinearHead:
    """Scale new-class rows so their mean L2 norm matches the old-class rows."""
    gamma = align_factor(head, old_rows, new_rows)
    W = head.weight.copy()
    W[list(new_rows)] *= gamma
    return nn.LinearHead(W)


def align_model(model: CompositeModel, new_classes: Sequence[int]) -> CompositeModel:
    new = set(int(c) for c in new_classes)
    old_rows = [i for i, c in enumerate(model.classes) if c not in new]
    new_rows = [i for i, c in enumerate(model.classes) if c in new]
    out = model.copy()
    out.classifier = weight_align(model.classifier, old_rows, new_rows)
    return out


def promote(model: CompositeModel, task_class_count: int) -> CompositeModel:
    """Expansion case: the mergeable backbone is frozen for good and the provisional one takes its place."""
    if model.provisional is None:
        raise PhaseOrderError("nothing to promote: no provisional backbone")
    return CompositeModel(
        fixed=[phi.copy() for phi in model.fixed] + [model.mergeable.copy()],
        mergeable=model.provisional.copy(),
        classifier=model.classifier.copy(),
        classes=model.classes,
        merge_classes=task_class_count,
    )

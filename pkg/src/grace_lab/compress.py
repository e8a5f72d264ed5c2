"""Consolidation of the mergeable and provisional backbones into one student backbone."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, ContractError, PhaseOrderError, ShapeError
from .grow import CLS, MERGE, PROV, CompositeModel
from .stream import Dataset

PROJ = "proj"


@dataclass(frozen=True)
class TaskStats:
    merge_classes: int  # classes the mergeable backbone represents
    new_classes: int
    n_new: float  # mean samples per new class
    n_old: float  # mean exemplars per old class (0 without a buffer)

    def __post_init__(self):
        if min(self.merge_classes, self.new_classes, self.n_new, self.n_old) < 0:
            raise ContractError("task statistics must be non-negative")


def preservation_factor(stats: TaskStats) -> float:
    total = stats.merge_classes + stats.new_classes
    if total == 0:
        raise ContractError("preservation factor undefined with no classes")
    return stats.merge_classes / total


def bias_factor(stats: TaskStats) -> float:
    total = stats.n_new + stats.n_old
    if total == 0:
        raise ContractError("bias factor undefined with no samples")
    return stats.n_new / total


def merge_weight(P: float, B: float, gamma: float) -> float:
    """Power mean of order ``gamma`` of the preservation and bias factors."""
    if gamma < 1:
        raise ConfigError(f"gamma must be >= 1, got {gamma}", "gamma")
    if not (0 <= P <= 1 and 0 <= B <= 1):
        raise ContractError(f"P={P} and B={B} must lie in [0, 1]")
    return ((P ** gamma + B ** gamma) / 2) ** (1 / gamma)


@dataclass(frozen=True)
class MergePlan:
    P: float
    B: float
    gamma: float
    w: float

    def __post_init__(self):
        lo, hi = min(self.P, self.B), max(self.P, self.B)
        if not lo - 1e-12 <= self.w <= hi + 1e-12:
            raise ContractError(f"merge weight {self.w} outside [{lo}, {hi}]")


def make_plan(stats: TaskStats, gamma: float) -> MergePlan:
    P, B = preservation_factor(stats), bias_factor(stats)
    return MergePlan(P, B, gamma, merge_weight(P, B, gamma))


def init_student(phi_merge: nn.FeatureExtractor, phi_prov: nn.FeatureExtractor, w: float) -> nn.FeatureExtractor:
    if phi_merge.layer_dims != phi_prov.layer_dims:
        raise ShapeError(f"architectures differ: {phi_merge.layer_dims} vs {phi_prov.layer_dims}")
    if w == 1:
        return phi_merge.copy()
    if w == 0:
        return phi_prov.copy()
    student = phi_merge.copy()
    student.set_arrays([w * a + (1 - w) * b for a, b in zip(phi_merge.arrays(), phi_prov.arrays())])
    return student


def kd_loss(z_exp: np.ndarray, z_com: np.ndarray, T: float) -> float:
    z_exp, z_com = np.atleast_2d(z_exp), np.atleast_2d(z_com)
    return float(nn.distillation_kl(z_exp, z_com, T)[0])


def feat_loss(student_features: np.ndarray, teacher_concat: np.ndarray, proj: nn.LinearHead) -> float:
    if student_features.shape[1] != proj.in_dim or teacher_concat.shape[1] != proj.out_dim:
        raise ShapeError(
            f"projection {proj.weight.shape} cannot map {student_features.shape} onto {teacher_concat.shape}"
        )
    return float(nn.mean_squared_error(proj(student_features), teacher_concat)[0])


def dynamic_lambda(old_class_count: int, total_class_count: int) -> float:
    """Share of old classes among all classes seen so far."""
    if total_class_count <= 0:
        raise ContractError("total class count must be positive")
    if not 0 <= old_class_count < total_class_count:
        raise ContractError(f"need 0 <= old ({old_class_count}) < total ({total_class_count})")
    return old_class_count / total_class_count


@dataclass(frozen=True)
class CompressionConfig:
    temperature: float = 2.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 2.0
    sgd: nn.SgdConfig = field(default_factory=nn.SgdConfig)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0", "temperature")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0", "alpha")
        if self.gamma < 1:
            raise ConfigError("gamma must be >= 1", "gamma")


def student_classifier(teacher: CompositeModel, w: float) -> nn.LinearHead:
    """Copy the fixed-backbone column blocks; blend the mergeable and provisional blocks with ``w``."""
    d = teacher.feature_dim
    W = teacher.classifier.weight
    k = len(teacher.fixed)
    merged = w * W[:, k * d:(k + 1) * d] + (1 - w) * W[:, (k + 1) * d:(k + 2) * d]
    return nn.LinearHead(np.hstack([W[:, :k * d], merged]))


def build_student(teacher: CompositeModel, plan: MergePlan, seed) -> tuple:
    """Student model plus a fresh projection head mapping d student features to the 2d teacher concat."""
    if teacher.provisional is None:
        raise PhaseOrderError("compression needs a provisional backbone")
    student = CompositeModel(
        fixed=[phi.copy() for phi in teacher.fixed],
        mergeable=init_student(teacher.mergeable, teacher.provisional, plan.w),
        classifier=student_classifier(teacher, plan.w),
        classes=teacher.classes,
        merge_classes=len(teacher.classes),
    )
    d = teacher.feature_dim
    return student, nn.init_head(2 * d, d, seed)


def compression_problem(teacher: CompositeModel, data: Dataset, plan: MergePlan, cfg: CompressionConfig,
                        lam: float, seed):
    """Student, graph, batch-term builder and trainable parts for distillation training.

    Loss = lam * (alpha * KD + beta * feature MSE) + (1 - lam) * CE.
    """
    student, proj = build_student(teacher, plan, seed)
    teacher_logits = teacher.logits(data.X)
    teacher_concat = np.hstack([
        nn.forward_features(teacher.mergeable, data.X),
        nn.forward_features(teacher.provisional, data.X),
    ])
    rows = student.rows(data.y)
    graph = student.graph()
    graph.heads[PROJ] = nn.Head(proj, (MERGE,))

    def make_terms(idx):
        return [
            nn.LossTerm("kd", "kd", CLS, teacher_logits[idx], lam * cfg.alpha, cfg.temperature),
            nn.LossTerm("feat", "mse", PROJ, teacher_concat[idx], lam * cfg.beta),
            nn.LossTerm("ce", "ce", CLS, rows[idx], 1 - lam),
        ]

    return student, graph, make_terms, [MERGE, CLS, PROJ]


def train_compression(teacher: CompositeModel, data: Dataset, plan: MergePlan, cfg: CompressionConfig,
                      lam: float, seed=0):
    """Distil ``teacher`` (b backbones) into a model with b - 1 backbones.

    The teacher is never modified. The projection head is discarded after
    training and the student backbone becomes the new mergeable backbone.
    """
    student, graph, make_terms, trainable = compression_problem(teacher, data, plan, cfg, lam, seed)
    history = nn.train(graph, trainable, data.X, make_terms, cfg.sgd)
    return student, history

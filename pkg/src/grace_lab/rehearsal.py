"""Exemplar buffer with herding selection and memory-aligned budget arithmetic."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BudgetError, ConfigError, StateError
from .stream import Dataset, TaskStream

CSV_TAG = "# grace-lab v1"


@dataclass(frozen=True)
class ExemplarBuffer:
    capacity: int
    input_dim: int
    # class id -> (m, input_dim) rows in herding order; insertion order = class arrival order
    exemplars: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity < 0:
            raise ConfigError("buffer capacity must be >= 0", "capacity")
        if len(self) > self.capacity:
            raise StateError(f"{len(self)} exemplars exceed capacity {self.capacity}")

    def __len__(self):
        return sum(len(v) for v in self.exemplars.values())

    @property
    def classes(self) -> tuple:
        return tuple(self.exemplars)

    def as_dataset(self) -> Dataset:
        if not self.exemplars:
            return Dataset.empty(self.input_dim)
        X = np.concatenate(list(self.exemplars.values()))
        y = np.concatenate([np.full(len(v), c) for c, v in self.exemplars.items()])
        return Dataset(X, y)

    def audit_rows(self) -> list:
        rows = []
        for c, block in self.exemplars.items():
            for rank, x in enumerate(block):
                digest = hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()[:16]
                rows.append((int(c), rank, digest))
        return rows

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(CSV_TAG + "\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["class_id", "selection_rank", "feature_checksum"])
            writer.writerows(self.audit_rows())


def herding_select(features: np.ndarray, m: int) -> list:
    """Greedy herding order (iCaRL style), without replacement.

    Step k keeps the candidate that brings the mean of the k chosen rows
    closest to the class mean. Ties go to the lowest index.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise StateError("herding needs at least one candidate")
    if m < 1:
        raise ConfigError("herding quota must be >= 1", "m")
    mu = features.mean(axis=0)
    running = np.zeros_like(mu)
    available = np.ones(n, dtype=bool)
    order = []
    for k in range(1, min(m, n) + 1):
        dist = np.linalg.norm(mu - (running + features) / k, axis=1)
        dist[~available] = np.inf
        pick = int(np.argmin(dist))
        order.append(pick)
        available[pick] = False
        running = running + features[pick]
    return order


def rebuild_buffer(
    buffer: ExemplarBuffer,
    stream: TaskStream,
    t: int,
    feature_fn: Callable[[np.ndarray], np.ndarray],
) -> ExemplarBuffer:
    """Re-balance the buffer at the end of task ``t``.

    Old classes keep their first ``m`` exemplars; classes of task ``t`` are
    herded from their training data with ``feature_fn``.
    """
    seen = stream.seen_classes(t)
    quota = buffer.capacity // len(seen)
    if quota == 0:
        raise ConfigError(f"capacity {buffer.capacity} cannot hold one exemplar for each of {len(seen)} classes",
                          "capacity")
    task = stream.task(t)
    kept = {c: v[:quota] for c, v in buffer.exemplars.items()}
    for c in task.classes:
        X = task.train.X[task.train.y == c]
        idx = herding_select(feature_fn(X), quota)
        kept[c] = X[idx]
    return ExemplarBuffer(buffer.capacity, buffer.input_dim, kept)


@dataclass(frozen=True)
class MemoryBudget:
    bytes_per_param: int = 4
    bytes_per_exemplar: int = 3072
    cap_params: int = 9_270_080
    base_buffer: int = 2000

    def __post_init__(self):
        for name in ("bytes_per_param", "bytes_per_exemplar", "cap_params", "base_buffer"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive", name)


def params_to_exemplar_equiv(param_count: int, budget: MemoryBudget) -> int:
    return (int(param_count) * budget.bytes_per_param) // budget.bytes_per_exemplar


def aligned_budget(method_params: int, budget: MemoryBudget) -> int:
    """Exemplar quota that gives a method the same total memory as the ``cap_params`` model."""
    if method_params > budget.cap_params:
        raise BudgetError(f"method uses {method_params} params, above the cap of {budget.cap_params}")
    surplus = budget.cap_params - int(method_params)
    return budget.base_buffer + params_to_exemplar_equiv(surplus, budget)

"""Class-incremental task streams under the Base-Increment protocol."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DataError, IngestionError, StateError


class LabeledSample(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray  # (n, input_dim) float64
    y: np.ndarray  # (n,) int64

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DataError(f"inconsistent dataset shapes X{X.shape} y{y.shape}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    def __iter__(self):
        for x, label in zip(self.X, self.y):
            yield LabeledSample(x, int(label))

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @classmethod
    def empty(cls, input_dim: int) -> "Dataset":
        return cls(np.zeros((0, input_dim)), np.zeros(0, dtype=np.int64))

    @classmethod
    def concat(cls, parts) -> "Dataset":
        parts = list(parts)
        return cls(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]))

    def subset(self, mask_or_idx) -> "Dataset":
        return Dataset(self.X[mask_or_idx], self.y[mask_or_idx])

    def of_classes(self, classes) -> "Dataset":
        return self.subset(np.isin(self.y, list(classes)))


def dataset_checksum(data: Dataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.X).tobytes())
    h.update(np.ascontiguousarray(data.y).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class StreamSpec:
    total_classes: int
    base: int = 0
    increment: int = 10
    shuffle_seed: int = 1993
    samples_per_class_train: int = 100
    samples_per_class_test: int = 50
    input_dim: int = 2

    def __post_init__(self):
        if self.increment < 1:
            raise ConfigError("increment must be >= 1", "increment")
        if self.total_classes < 1:
            raise ConfigError("total_classes must be >= 1", "total_classes")
        if self.base < 0 or self.base > self.total_classes:
            raise ConfigError("base must lie in [0, total_classes]", "base")
        rest = self.total_classes - self.base
        if rest % self.increment:
            field = "increment" if self.base == 0 else "base"
            raise ConfigError(
                f"{rest} classes after the base task are not divisible by increment {self.increment}", field
            )
        if self.samples_per_class_train < 1 or self.samples_per_class_test < 0:
            raise ConfigError("per-class sample counts must be positive", "samples_per_class_train")
        if self.input_dim < 1:
            raise ConfigError("input_dim must be >= 1", "input_dim")

    def task_sizes(self) -> list:
        if self.base == 0:
            return [self.increment] * (self.total_classes // self.increment)
        return [self.base] + [self.increment] * ((self.total_classes - self.base) // self.increment)


@dataclass(frozen=True)
class Task:
    index: int  # 1-based
    classes: tuple  # class ids in stream order
    train: Dataset
    test: Dataset


@dataclass(frozen=True)
class TaskStream:
    spec: StreamSpec
    class_order: tuple
    tasks: tuple

    def __len__(self):
        return len(self.tasks)

    def task(self, t: int) -> Task:
        if not 1 <= t <= len(self.tasks):
            raise StateError(f"task index {t} outside 1..{len(self.tasks)}")
        return self.tasks[t - 1]

    def seen_classes(self, t: int) -> tuple:
        """Cumulative label space after task ``t`` (empty for t=0), in stream order."""
        return tuple(c for task in self.tasks[:t] for c in task.classes)

    def test_set(self, t: int) -> Dataset:
        return Dataset.concat(task.test for task in self.tasks[:t])


def class_permutation(total_classes: int, seed: int) -> tuple:
    return tuple(int(c) for c in np.random.default_rng(seed).permutation(total_classes))


def build_stream(spec: StreamSpec, data: Dataset) -> TaskStream:
    if data.input_dim != spec.input_dim:
        raise DataError(f"data has input_dim {data.input_dim}, stream declares {spec.input_dim}")
    if len(data) and (data.y.min() < 0 or data.y.max() >= spec.total_classes):
        raise DataError(f"labels must lie in 0..{spec.total_classes - 1}")
    need = spec.samples_per_class_train + spec.samples_per_class_test
    train_idx, test_idx = {}, {}
    for c in range(spec.total_classes):
        rows = np.flatnonzero(data.y == c)
        if rows.size < need:
            raise DataError(f"class {c} has {rows.size} samples, needs {need}")
        train_idx[c] = rows[: spec.samples_per_class_train]
        test_idx[c] = rows[spec.samples_per_class_train: need]

    order = class_permutation(spec.total_classes, spec.shuffle_seed)
    tasks, start = [], 0
    for i, size in enumerate(spec.task_sizes(), start=1):
        classes = order[start:start + size]
        start += size
        tr = np.concatenate([train_idx[c] for c in classes])
        te = np.concatenate([test_idx[c] for c in classes])
        tasks.append(Task(i, classes, data.subset(tr), data.subset(te)))
    return TaskStream(spec, order, tuple(tasks))


def generate_synthetic(
    classes: int,
    per_class: int,
    dim: int,
    cluster_spread: float,
    seed: int,
    radius: float = 3.0,
    max_tries: int = 1000,
) -> Dataset:
    """Isotropic Gaussian clusters whose means sit on a sphere of ``radius``.

    Means are rejection-sampled so that every pair is at least
    ``2 * cluster_spread`` apart. Samples are stored class by class.
    """
    if classes < 1 or per_class < 1:
        raise ConfigError("classes and per_class must be >= 1", "classes")
    if dim < 2:
        raise ConfigError("dim must be >= 2", "dim")
    if cluster_spread < 0 or radius <= 0:
        raise ConfigError("cluster_spread must be >= 0 and radius > 0", "cluster_spread")
    rng = np.random.default_rng(seed)
    min_sep = 2.0 * cluster_spread
    means = []
    for c in range(classes):
        for _ in range(max_tries):
            v = rng.standard_normal(dim)
            v = radius * v / np.linalg.norm(v)
            if all(np.linalg.norm(v - m) >= min_sep for m in means):
                means.append(v)
                break
        else:
            raise ConfigError(
                f"could not place class {c} mean {min_sep:g} from the others on radius {radius:g}",
                "cluster_spread",
            )
    means = np.array(means)
    noise = rng.standard_normal((classes, per_class, dim))
    X = (means[:, None, :] + cluster_spread * noise).reshape(classes * per_class, dim)
    y = np.repeat(np.arange(classes), per_class)
    return Dataset(X, y)


def load_csv(path, label_column: int = -1, header: bool = False, num_classes: int | None = None) -> Dataset:
    """Read ``label, features...`` rows (label position configurable). Row order is kept.

    Errors report the 1-based line number in the file.
    """
    path = Path(path)
    rows, labels = [], []
    width = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise IngestionError("need a label column and at least one feature", lineno)
            elif len(row) != width:
                raise IngestionError(f"expected {width} cells, found {len(row)}", lineno)
            try:
                values = [float(cell) for cell in row]
            except ValueError as exc:
                raise IngestionError(f"non-numeric cell ({exc})", lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise IngestionError("non-finite cell", lineno)
            label = values.pop(label_column)
            if label != int(label) or label < 0:
                raise IngestionError(f"label {label:g} is not a non-negative integer", lineno)
            if num_classes is not None and label >= num_classes:
                raise IngestionError(f"unknown label {int(label)}", lineno)
            rows.append(values)
            labels.append(int(label))
    if not rows:
        raise IngestionError(f"{path} contains no data rows")
    return Dataset(np.array(rows), np.array(labels))


def training_set_for_task(stream: TaskStream, t: int, buffer) -> Dataset:
    """New-task data joined with the rehearsal exemplars."""
    task = stream.task(t)
    held = set(buffer.classes) if buffer is not None else set()
    clash = held & set(task.classes)
    if clash:
        raise StateError(f"buffer holds classes {sorted(clash)} of the current task {t}")
    stray = held - set(stream.seen_classes(t - 1))
    if stray:
        raise StateError(f"buffer holds unseen classes {sorted(stray)} at task {t}")
    if not held:
        return task.train
    return Dataset.concat([task.train, buffer.as_dataset()])

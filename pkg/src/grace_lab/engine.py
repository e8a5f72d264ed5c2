"""Task-by-task driver for GRACE and the baseline strategies."""

from __future__ import annotations

import enum
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import assess, compress, grow, nn, rehearsal
from .config import RunConfig
from .errors import ContractError, GraceError, RunError, ShapeError
from .stream import Dataset, StreamSpec, TaskStream, build_stream, generate_synthetic, load_csv, training_set_for_task

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    GRACE = "grace"
    PURE_EXPANSION = "pure_expansion"
    ALWAYS_COMPRESS = "always_compress"
    FINETUNE = "finetune"
    REPLAY = "replay"

    @property
    def expands(self) -> bool:
        return self in (Strategy.GRACE, Strategy.PURE_EXPANSION, Strategy.ALWAYS_COMPRESS)

    @property
    def uses_buffer(self) -> bool:
        return self is not Strategy.FINETUNE


@dataclass
class TaskRecord:
    task: int
    seen_classes: int
    accuracy: float
    params: int
    backbones: int
    decision: Optional[str] = None  # "expand" | "compress"; None when no decision was taken
    score: Optional[float] = None
    tau: Optional[float] = None
    lam: Optional[float] = None
    w: Optional[float] = None
    P: Optional[float] = None
    B: Optional[float] = None
    buffer_size: int = 0


@dataclass
class RunReport:
    strategy: str
    records: list = field(default_factory=list)
    # (task, epoch, kd, feat, ce, lambda)
    compression_log: list = field(default_factory=list)
    # (task, SaturationReport, tau, decision)
    saturation_log: list = field(default_factory=list)
    timings: list = field(default_factory=list)  # (task, phase, seconds); diagnostics only

    @property
    def accuracies(self) -> list:
        return [r.accuracy for r in self.records]

    def summary(self) -> dict:
        last, avg = summarize(self.accuracies)
        return {
            "strategy": self.strategy,
            "last_acc": last,
            "avg_acc": avg,
            "final_params": self.records[-1].params,
            "backbone_counts": [r.backbones for r in self.records],
            "decisions": [r.decision for r in self.records],
            "tau_trajectory": [r.tau for r in self.records if r.tau is not None],
        }


def evaluate(model: grow.CompositeModel, test: Dataset, expected_classes=None) -> float:
    """Top-1 accuracy over ``test``."""
    if expected_classes is not None and len(model.classes) != len(expected_classes):
        raise ShapeError(f"model predicts {len(model.classes)} classes, expected {len(expected_classes)}")
    if len(test) == 0:
        raise ContractError("empty test set")
    return float(np.mean(model.predict(test.X) == test.y))


def summarize(accuracies) -> tuple:
    accuracies = list(accuracies)
    if not accuracies:
        raise ContractError("no accuracies to summarise")
    return accuracies[-1], float(sum(accuracies) / len(accuracies))


def make_stream(cfg: RunConfig) -> TaskStream:
    s = cfg.stream
    if s.source == "csv":
        data = load_csv(s.csv_path, s.csv_label_column, s.csv_header, s.total_classes)
        input_dim = data.input_dim
    else:
        data = generate_synthetic(
            s.total_classes, s.samples_per_class_train + s.samples_per_class_test,
            s.input_dim, s.cluster_spread, s.data_seed, s.radius,
        )
        input_dim = s.input_dim
    spec = StreamSpec(s.total_classes, s.base, s.increment, s.shuffle_seed,
                      s.samples_per_class_train, s.samples_per_class_test, input_dim)
    return build_stream(spec, data)


def _sgd(section, seed) -> nn.SgdConfig:
    return nn.SgdConfig(section.learning_rate, section.momentum, section.weight_decay,
                        section.epochs, section.batch_size, seed)


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def _phase_seeds(base_seed: int, t: int):
    init, train, proj, distil = np.random.SeedSequence([base_seed, t]).spawn(4)
    return init, _int_seed(train), proj, _int_seed(distil)


@contextmanager
def _timed(report: "RunReport", task: int, phase: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        report.timings.append((task, phase, time.perf_counter() - t0))


def run(strategy, stream: TaskStream, config: RunConfig) -> RunReport:
    """Train ``strategy`` over every task of ``stream``; deterministic given the config seeds."""
    strategy = Strategy(strategy)
    a = config.assess
    probe_cfg = assess.ProbeConfig(a.sample_cap, config.model.seed, a.weight_norm_range, a.fisher_range,
                                   a.fisher_samples)
    ccfg_base = config.compress
    capacity = config.buffer.capacity if strategy.uses_buffer else 0
    buffer = rehearsal.ExemplarBuffer(capacity, stream.spec.input_dim)
    state = assess.ThresholdState.initial(a.tau1, a.rho) if strategy is Strategy.GRACE else None
    report = RunReport(strategy.value)
    model = None

    for t in range(1, len(stream) + 1):
        task = stream.task(t)
        init_seed, train_seed, proj_seed, distil_seed = _phase_seeds(config.model.seed, t)
        rec = TaskRecord(t, len(stream.seen_classes(t)), 0.0, 0, 0)
        try:
            data = training_set_for_task(stream, t, buffer)
            sgd = _sgd(config.grow, train_seed)
            if t == 1:
                model = grow.new_model(stream.spec.input_dim, config.model.hidden_dims, config.model.feature_dim,
                                       task.classes, init_seed)
                with _timed(report, t, "base"):
                    model, _ = grow.train_base(model, data, sgd)
            elif not strategy.expands:
                model = grow.add_classes(model, task.classes, init_seed)
                with _timed(report, t, "base"):
                    model, _ = grow.train_base(model, data, sgd)
                rep = assess.saturation_probe(a.measure, model, data, probe_cfg)
                rec.score = rep.normalized
                _log_probes(report, t, model, data, probe_cfg, a, rep, None, None)
            else:
                teacher = grow.expand(model, task.classes, init_seed)
                with _timed(report, t, "grow"):
                    teacher, _ = grow.train_expansion(teacher, data, task.classes, sgd)
                teacher = grow.align_model(teacher, task.classes)
                with _timed(report, t, "assess"):
                    rep = assess.saturation_probe(a.measure, teacher, data, probe_cfg)
                rec.score = rep.normalized
                if strategy is Strategy.GRACE:
                    decision, state = assess.threshold_decide(state, rep.normalized)
                    action, rec.tau = decision.action, decision.threshold
                elif strategy is Strategy.PURE_EXPANSION:
                    action = assess.Action.EXPAND
                else:
                    action = assess.Action.COMPRESS
                rec.decision = action.value
                _log_probes(report, t, teacher, data, probe_cfg, a, rep, rec.tau, rec.decision)

                if action is assess.Action.EXPAND:
                    model = grow.promote(teacher, len(task.classes))
                else:
                    old = len(stream.seen_classes(t - 1))
                    stats = compress.TaskStats(
                        teacher.merge_classes, len(task.classes),
                        len(task.train) / len(task.classes), len(buffer) / old,
                    )
                    plan = compress.make_plan(stats, ccfg_base.gamma)
                    lam = compress.dynamic_lambda(old, rec.seen_classes)
                    rec.lam, rec.w, rec.P, rec.B = lam, plan.w, plan.P, plan.B
                    ccfg = compress.CompressionConfig(ccfg_base.temperature, ccfg_base.alpha, ccfg_base.beta,
                                                      ccfg_base.gamma, _sgd(ccfg_base, distil_seed))
                    with _timed(report, t, "compress"):
                        model, history = compress.train_compression(teacher, data, plan, ccfg, lam, proj_seed)
                    for epoch, parts in enumerate(history, start=1):
                        report.compression_log.append((t, epoch, parts["kd"], parts["feat"], parts["ce"], lam))

            if strategy.uses_buffer:
                with _timed(report, t, "buffer"):
                    buffer = rehearsal.rebuild_buffer(buffer, stream, t, model.features)
            rec.accuracy = evaluate(model, stream.test_set(t), stream.seen_classes(t))
        except GraceError as exc:
            raise RunError(t, exc) from exc
        rec.params = model.param_count()
        rec.backbones = model.backbone_count
        rec.buffer_size = len(buffer)
        report.records.append(rec)
        log.info("%s task %d: acc=%.4f backbones=%d decision=%s score=%s",
                 strategy.value, t, rec.accuracy, rec.backbones, rec.decision, rec.score)
    return report


def _log_probes(report, t, model, data, probe_cfg, a, gate_report, tau, decision):
    report.saturation_log.append((t, gate_report, tau, decision))
    for measure in a.diagnostics:
        if measure == a.measure:
            continue
        report.saturation_log.append((t, assess.saturation_probe(measure, model, data, probe_cfg), tau, decision))

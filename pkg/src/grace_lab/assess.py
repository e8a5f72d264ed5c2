"""Saturation measures for the mergeable backbone and the expand/compress gate."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import nn
from .errors import ConfigError, ContractError, NumericalError, UnsupportedMeasureError
from .grow import CLS, MERGE, CompositeModel
from .stream import Dataset

SV_CUTOFF = 1e-12
DEFAULT_SAMPLE_CAP = 2048

IMPLEMENTED_MEASURES = ("effective_rank", "weight_norm", "mean_fisher")
# Listed for discoverability; the curvature-based probes are not provided.
UNSUPPORTED_MEASURES = ("adversarial_local_sharpness", "expected_local_sharpness", "hessian_spectral_radius")


class DegenerateFeaturesWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SaturationReport:
    measure: str
    raw: float
    normalized: float
    sample_count: int
    feature_dim: int
    k: int  # singular values kept (effective_rank) or parameter tensors/scalars inspected
    degenerate: bool = False


def spectrum_entropy_rank(singular_values, cutoff: float = SV_CUTOFF):
    """exp(Shannon entropy) of the normalised singular values; returns ``(erank, kept)``."""
    s = np.asarray(singular_values, dtype=np.float64)
    if s.size == 0 or s.max() <= 0:
        return 0.0, 0
    s = s[s >= cutoff * s.max()]
    p = s / s.sum()
    entropy = -np.sum(p * np.log(p))
    return float(np.exp(entropy)), int(s.size)


def effective_rank(Z, cap: Optional[int] = DEFAULT_SAMPLE_CAP, seed=0) -> SaturationReport:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise ContractError(f"effective rank needs a matrix with >= 2 rows, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise NumericalError("feature matrix has non-finite entries")
    if cap is not None and Z.shape[0] > cap:
        rows = np.sort(np.random.default_rng(seed).choice(Z.shape[0], size=cap, replace=False))
        Z = Z[rows]
    n, d = Z.shape
    centered = Z - Z.mean(axis=0)
    sigma = np.linalg.svd(centered, compute_uv=False)
    erank, kept = spectrum_entropy_rank(sigma)
    if kept == 0:
        warnings.warn("centered feature matrix is all zeros; saturation score set to 0", DegenerateFeaturesWarning)
        return SaturationReport("effective_rank", 0.0, 0.0, n, d, 0, degenerate=True)
    return SaturationReport("effective_rank", erank, erank / min(n, d), n, d, kept)


@dataclass(frozen=True)
class ProbeConfig:
    sample_cap: Optional[int] = DEFAULT_SAMPLE_CAP
    seed: int = 0
    # min-max ranges for the diagnostic probes; heuristic, no canonical normalisation exists
    weight_norm_range: tuple = (0.0, 10.0)
    fisher_range: tuple = (0.0, 1.0)
    fisher_samples: int = 256


def _minmax(value: float, bounds) -> float:
    lo, hi = bounds
    if hi <= lo:
        raise ConfigError(f"normalisation range {bounds} is empty", "range")
    return float(min(1.0, max(0.0, (value - lo) / (hi - lo))))


def weight_norm(phi: nn.FeatureExtractor, bounds=(0.0, 10.0)) -> SaturationReport:
    arrays = phi.arrays()
    raw = float(np.mean([np.linalg.norm(a) for a in arrays]))
    return SaturationReport("weight_norm", raw, _minmax(raw, bounds), 0, phi.feature_dim, len(arrays))


def mean_fisher(model: CompositeModel, data: Dataset, bounds=(0.0, 1.0), samples: int = 256, seed=0) -> SaturationReport:
    """Empirical Fisher diagonal of the mergeable backbone, averaged over its parameters.

    Uses per-sample gradients of the true-class log-likelihood of the full model.
    """
    n = len(data)
    if n == 0:
        raise ContractError("mean_fisher needs data")
    idx = np.arange(n)
    if samples is not None and n > samples:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=samples, replace=False))
    graph = model.graph()
    rows = model.rows(data.y)
    acc = [np.zeros_like(a) for a in model.mergeable.arrays()]
    for i in idx:
        term = nn.LossTerm("ce", "ce", CLS, rows[i:i + 1])
        _, grads, _ = nn.loss_and_grads(graph, [term], data.X[i:i + 1], [MERGE])
        for a, g in zip(acc, grads[MERGE]):
            a += g * g
    total = sum(a.size for a in acc)
    raw = float(sum(a.sum() for a in acc) / (len(idx) * total))
    return SaturationReport("mean_fisher", raw, _minmax(raw, bounds), len(idx), model.feature_dim, total)


def saturation_probe(measure: str, model: CompositeModel, data: Dataset, config: ProbeConfig = ProbeConfig()):
    if measure == "effective_rank":
        return effective_rank(nn.forward_features(model.mergeable, data.X), config.sample_cap, config.seed)
    if measure == "weight_norm":
        return weight_norm(model.mergeable, config.weight_norm_range)
    if measure == "mean_fisher":
        return mean_fisher(model, data, config.fisher_range, config.fisher_samples, config.seed)
    if measure in UNSUPPORTED_MEASURES:
        raise UnsupportedMeasureError(f"saturation measure {measure!r} is not implemented")
    raise UnsupportedMeasureError(f"unknown saturation measure {measure!r}")


class Action(str, enum.Enum):
    EXPAND = "expand"
    COMPRESS = "compress"


@dataclass(frozen=True)
class Decision:
    action: Action
    score: float
    threshold: float


@dataclass(frozen=True)
class ThresholdState:
    tau1: float
    tau: float
    rho: float
    compressions: int = 0

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ConfigError("rho must lie in (0, 1]", "rho")
        if not (self.tau1 >= 0 and math.isfinite(self.tau1)):
            raise ConfigError("tau1 must be a finite value >= 0", "tau1")

    @classmethod
    def initial(cls, tau1: float, rho: float) -> "ThresholdState":
        return cls(tau1, tau1, rho, 0)


def threshold_decide(state: ThresholdState, score: float):
    """Compress (and decay the threshold) when ``score < tau``; otherwise expand and reset."""
    if not 0.0 <= score <= 1.0:
        raise ContractError(f"saturation score {score!r} outside [0, 1]")
    if score < state.tau:
        nxt = replace(state, tau=state.rho * state.tau, compressions=state.compressions + 1)
        return Decision(Action.COMPRESS, score, state.tau), nxt
    return Decision(Action.EXPAND, score, state.tau), replace(state, tau=state.tau1, compressions=0)

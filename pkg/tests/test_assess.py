import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grace_lab import nn
from grace_lab.assess import (
    UNSUPPORTED_MEASURES,
    Action,
    DegenerateFeaturesWarning,
    ProbeConfig,
    ThresholdState,
    effective_rank,
    mean_fisher,
    saturation_probe,
    spectrum_entropy_rank,
    threshold_decide,
    weight_norm,
)
from grace_lab.errors import ConfigError, ContractError, NumericalError, UnsupportedMeasureError
from grace_lab.grow import new_model, train_base
from grace_lab.stream import Dataset


def entropy_oracle(sigmas):
    """Scalar evaluation of exp(-sum p ln p) with plain floats."""
    total = math.fsum(sigmas)
    return math.exp(-math.fsum((s / total) * math.log(s / total) for s in sigmas if s > 0))


def matrix_with_spectrum(sigmas, n=12, d=6, seed=0):
    """Centered n x d matrix whose singular values are exactly ``sigmas`` (up to rounding)."""
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(np.column_stack([np.ones(n), rng.normal(size=(n, len(sigmas)))]))
    U = basis[:, 1:]  # orthonormal and orthogonal to the all-ones vector
    V, _ = np.linalg.qr(rng.normal(size=(d, len(sigmas))))
    return U @ np.diag(sigmas) @ V.T


def test_oracle_values():
    assert entropy_oracle([3.0, 1.0]) == pytest.approx(math.exp(0.56233), abs=1e-4)
    assert entropy_oracle([3.0, 1.0]) == pytest.approx(1.75476, abs=1e-5)


def test_uniform_spectrum():
    for k in (1, 2, 4, 6):
        rep = effective_rank(matrix_with_spectrum([1.0] * k))
        assert rep.raw == pytest.approx(k, abs=1e-9)
        assert rep.k == k


def test_rank_one_matrix():
    rng = np.random.default_rng(1)
    Z = np.outer(rng.normal(size=20), rng.normal(size=5)) + 3.0
    assert effective_rank(Z).raw == pytest.approx(1.0, abs=1e-9)


def test_three_one_spectrum_against_oracle():
    rep = effective_rank(matrix_with_spectrum([3.0, 1.0]))
    assert rep.raw == pytest.approx(entropy_oracle([3.0, 1.0]), abs=1e-4)
    assert spectrum_entropy_rank([3.0, 1.0])[0] == pytest.approx(entropy_oracle([3.0, 1.0]), abs=1e-12)


def test_normalization_uses_min_rows_dim():
    rep = effective_rank(matrix_with_spectrum([1.0] * 4, n=12, d=6))
    assert rep.normalized == pytest.approx(4 / 6, abs=1e-9)
    rep = effective_rank(matrix_with_spectrum([1.0] * 3, n=5, d=8))
    assert rep.normalized == pytest.approx(3 / 5, abs=1e-9)


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
@settings(max_examples=40, deadline=None)
def test_scale_and_permutation_invariance(seed, c):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(15, 4)) @ rng.normal(size=(4, 4))
    base = effective_rank(Z).raw
    assert effective_rank(c * Z).raw == pytest.approx(base, abs=1e-9)
    assert effective_rank(Z[rng.permutation(15)]).raw == pytest.approx(base, abs=1e-9)
    rep = effective_rank(Z)
    assert 1.0 - 1e-12 <= rep.raw <= rep.k + 1e-12
    assert 0.0 < rep.normalized <= 1.0 + 1e-12


def test_degenerate_features_warn_and_score_zero():
    with pytest.warns(DegenerateFeaturesWarning):
        rep = effective_rank(np.full((5, 3), 2.5))
    assert rep.degenerate and rep.normalized == 0.0


def test_effective_rank_preconditions():
    with pytest.raises(ContractError):
        effective_rank(np.ones((1, 3)))
    with pytest.raises(NumericalError):
        effective_rank(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_sample_cap_is_seeded():
    Z = np.random.default_rng(0).normal(size=(300, 5))
    a, b = effective_rank(Z, cap=50, seed=4), effective_rank(Z, cap=50, seed=4)
    assert a == b and a.sample_count == 50
    assert effective_rank(Z, cap=None).sample_count == 300


def blobs():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-2, 0.3, size=(30, 2)), rng.normal(2, 0.3, size=(30, 2))])
    return Dataset(X, np.repeat([0, 1], 30))


def test_effective_rank_probe_delegates():
    model = new_model(2, [8], 4, (0, 1), seed=0)
    data = blobs()
    direct = effective_rank(nn.forward_features(model.mergeable, data.X))
    assert saturation_probe("effective_rank", model, data) == direct


def test_weight_norm_of_zero_backbone():
    model = new_model(2, [8], 4, (0, 1), seed=0)
    model.mergeable.set_arrays([np.zeros_like(a) for a in model.mergeable.arrays()])
    rep = weight_norm(model.mergeable)
    assert rep.raw == 0.0 and rep.normalized == 0.0


def test_weight_norm_is_mean_tensor_norm():
    phi = nn.FeatureExtractor([np.full((1, 1), 3.0)], [np.array([4.0])])
    assert weight_norm(phi, (0.0, 7.0)).raw == 3.5
    assert weight_norm(phi, (0.0, 7.0)).normalized == 0.5
    with pytest.raises(ConfigError):
        weight_norm(phi, (1.0, 1.0))


def test_mean_fisher_vanishes_on_perfect_fit():
    data = blobs()
    model, _ = train_base(new_model(2, [8], 4, (0, 1), seed=0), data, nn.SgdConfig(epochs=20))
    model.classifier.weight[:] *= 1e4
    rep = mean_fisher(model, data)
    assert rep.raw < 1e-12
    fresh = mean_fisher(new_model(2, [8], 4, (0, 1), seed=0), data)
    assert fresh.raw > rep.raw


@pytest.mark.parametrize("measure", UNSUPPORTED_MEASURES + ("bogus",))
def test_unsupported_measures(measure):
    with pytest.raises(UnsupportedMeasureError):
        saturation_probe(measure, new_model(2, [4], 2, (0, 1), seed=0), blobs(), ProbeConfig())


def test_threshold_examples():
    state = ThresholdState(tau1=0.8, tau=0.8, rho=0.9)
    decision, nxt = threshold_decide(state, 0.75)
    assert decision.action is Action.COMPRESS and nxt.tau == pytest.approx(0.72, abs=1e-15)
    assert nxt.compressions == 1

    decision, nxt = threshold_decide(ThresholdState(0.8, 0.72, 0.9, 1), 0.85)
    assert decision.action is Action.EXPAND and nxt.tau == 0.8 and nxt.compressions == 0

    decision, _ = threshold_decide(ThresholdState(0.8, 0.72, 0.9, 1), 0.72)
    assert decision.action is Action.EXPAND


def test_threshold_contract_and_config():
    with pytest.raises(ContractError):
        threshold_decide(ThresholdState.initial(0.5, 0.9), 1.5)
    with pytest.raises(ContractError):
        threshold_decide(ThresholdState.initial(0.5, 0.9), -0.01)
    with pytest.raises(ConfigError):
        ThresholdState.initial(0.5, 0.0)
    with pytest.raises(ConfigError):
        ThresholdState.initial(0.5, 1.1)


@given(st.floats(0.0, 1.0), st.lists(st.floats(0.0, 1.0), max_size=30))
def test_rho_one_keeps_threshold_constant(tau1, scores):
    state = ThresholdState.initial(tau1, 1.0)
    for s in scores:
        _, state = threshold_decide(state, s)
        assert state.tau == tau1


@given(st.floats(0.05, 1.0), st.floats(0.5, 1.0), st.lists(st.floats(0.0, 1.0), max_size=30))
def test_threshold_follows_trailing_streak(tau1, rho, scores):
    state = ThresholdState.initial(tau1, rho)
    streak = 0
    for s in scores:
        decision, state = threshold_decide(state, s)
        streak = streak + 1 if decision.action is Action.COMPRESS else 0
        assert state.compressions == streak
        assert state.tau == pytest.approx(tau1 * rho ** streak, rel=1e-12)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from grace_lab.errors import BudgetError, ConfigError, StateError
from grace_lab.rehearsal import (
    ExemplarBuffer,
    MemoryBudget,
    aligned_budget,
    herding_select,
    params_to_exemplar_equiv,
    rebuild_buffer,
)
from grace_lab.stream import Dataset, StreamSpec, build_stream

BACKBONE = 463_504  # CIFAR ResNet32 parameter count


def brute_force_herding(F, m):
    """Re-evaluate the herding criterion from scratch for every candidate at every step."""
    F = [tuple(row) for row in F]
    n, dim = len(F), len(F[0])
    mu = [sum(r[j] for r in F) / n for j in range(dim)]
    chosen = []
    for k in range(1, min(m, n) + 1):
        best, best_d = None, None
        for cand in range(n):
            if cand in chosen:
                continue
            rows = [F[i] for i in chosen] + [F[cand]]
            mean = [sum(r[j] for r in rows) / k for j in range(dim)]
            dist = sum((mu[j] - mean[j]) ** 2 for j in range(dim)) ** 0.5
            if best_d is None or dist < best_d:
                best, best_d = cand, dist
        chosen.append(best)
    return chosen


def test_herding_single_candidate():
    assert herding_select(np.array([[1.0, 2.0]]), 3) == [0]


def test_herding_five_points_matches_brute_force():
    F = np.array([[0.0, 0.0], [2.0, 1.0], [-1.0, 3.0], [0.5, -0.5], [4.0, 4.0]])
    got = herding_select(F, 3)
    assert got == brute_force_herding(F, 3)
    mu = F.mean(axis=0)
    assert got[0] == int(np.argmin(np.linalg.norm(F - mu, axis=1)))


def test_herding_returns_everything_when_quota_exceeds_candidates():
    F = np.random.default_rng(0).normal(size=(4, 3))
    got = herding_select(F, 10)
    assert sorted(got) == [0, 1, 2, 3]
    assert got == brute_force_herding(F, 10)


def test_herding_rejects_empty():
    with pytest.raises(StateError):
        herding_select(np.zeros((0, 2)), 2)


@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 3)),
              elements=st.floats(-10, 10, allow_nan=False)), st.integers(1, 8))
@settings(max_examples=60, deadline=None)
def test_herding_prefix_property_and_oracle(F, m):
    a, b = herding_select(F, m), herding_select(F, m + 1)
    assert b[:len(a)] == a
    assert len(set(b)) == len(b)


def test_herding_random_against_oracle():
    rng = np.random.default_rng(42)
    for _ in range(20):
        F = rng.normal(size=(rng.integers(2, 12), 2))
        m = int(rng.integers(1, 8))
        assert herding_select(F, m) == brute_force_herding(F, m)


def _stream(classes=6, inc=2, per_class=20):
    X = np.random.default_rng(0).normal(size=(classes * (per_class + 2), 2))
    y = np.repeat(np.arange(classes), per_class + 2)
    return build_stream(StreamSpec(classes, increment=inc, samples_per_class_train=per_class,
                                   samples_per_class_test=2), Dataset(X, y))


def test_rebuild_quota_and_prefix_truncation():
    stream = _stream(classes=6, inc=2)
    buf = ExemplarBuffer(12, 2)
    identity = lambda X: X  # noqa: E731
    buf = rebuild_buffer(buf, stream, 1, identity)
    assert {c: len(v) for c, v in buf.exemplars.items()} == {c: 6 for c in stream.task(1).classes}
    first = {c: v.copy() for c, v in buf.exemplars.items()}
    buf = rebuild_buffer(buf, stream, 2, identity)
    assert all(len(v) == 3 for v in buf.exemplars.values())
    for c, block in first.items():
        assert np.array_equal(buf.exemplars[c], block[:3])
    buf = rebuild_buffer(buf, stream, 3, identity)
    assert len(buf) <= 12 and set(buf.classes) == set(stream.seen_classes(3))


def test_quota_examples():
    assert 10 // 5 == 2
    assert 2000 // 100 == 20
    stream = _stream(classes=10, inc=5)
    buf = rebuild_buffer(ExemplarBuffer(10, 2), stream, 1, lambda X: X)
    assert all(len(v) == 2 for v in buf.exemplars.values())


def test_zero_quota_is_config_error():
    stream = _stream(classes=6, inc=2)
    with pytest.raises(ConfigError):
        rebuild_buffer(ExemplarBuffer(1, 2), stream, 1, lambda X: X)


def test_buffer_csv_export(tmp_path):
    buf = ExemplarBuffer(4, 2, {3: np.array([[1.0, 2.0], [0.0, 0.0]]), 1: np.array([[5.0, 5.0]])})
    path = tmp_path / "buffer.csv"
    buf.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# grace-lab v1"
    assert lines[1] == "class_id,selection_rank,feature_checksum"
    assert [line.split(",")[:2] for line in lines[2:]] == [["3", "0"], ["3", "1"], ["1", "0"]]


CIFAR = MemoryBudget(bytes_per_param=4, bytes_per_exemplar=3072, cap_params=20 * BACKBONE, base_buffer=2000)


def test_backbone_is_603_cifar_exemplars():
    assert params_to_exemplar_equiv(BACKBONE, CIFAR) == 603
    assert params_to_exemplar_equiv(0, CIFAR) == 0


def test_imagenet_backbone_floor_is_296():
    # 11,176,512 * 4 / 150,528 = 296.99...; the floor is 296, not the rounded 297
    imagenet = MemoryBudget(4, 224 * 224 * 3, 20 * 11_176_512, 2000)
    assert params_to_exemplar_equiv(11_176_512, imagenet) == 296


@pytest.mark.parametrize("method, cap, expected", [
    (20 * BACKBONE, 20 * BACKBONE, 2000),
    (BACKBONE, 20 * BACKBONE, 13466),
    (10 * BACKBONE, 20 * BACKBONE, 8035),
    (BACKBONE, 10 * BACKBONE, 7431),
    (5 * BACKBONE, 10 * BACKBONE, 5017),
])
def test_aligned_budget_quotas(method, cap, expected):
    assert aligned_budget(method, MemoryBudget(4, 3072, cap, 2000)) == expected


def test_over_cap_is_budget_error():
    with pytest.raises(BudgetError):
        aligned_budget(CIFAR.cap_params + 1, CIFAR)


@given(st.integers(0, 20 * BACKBONE), st.integers(0, 20 * BACKBONE))
def test_aligned_budget_monotone(a, b):
    lo, hi = sorted((a, b))
    assert aligned_budget(lo, CIFAR) >= aligned_budget(hi, CIFAR)
    assert aligned_budget(CIFAR.cap_params, CIFAR) == CIFAR.base_buffer

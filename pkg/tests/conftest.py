import contextlib

import numpy as np
import pytest

from grace_lab import nn
from grace_lab.config import RunConfig
from grace_lab.engine import make_stream

ACCEPTANCE_LINES = []


@contextlib.contextmanager
def criterion(label):
    """Record a PASS/FAIL line for the acceptance summary; re-raises failures."""
    try:
        yield
    except BaseException:
        ACCEPTANCE_LINES.append(f"FAIL  {label}")
        raise
    ACCEPTANCE_LINES.append(f"PASS  {label}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def finite_difference_check(graph, terms, X, trainable, n_samples=200, seed=0, step=1e-5):
    """Compare analytic gradients with central differences on random parameter entries.

    Returns the largest relative error seen. Relative error uses a 1e-6 floor
    so that exactly-zero gradients do not divide by zero.
    """
    _, grads, _ = nn.loss_and_grads(graph, terms, X, trainable)
    slots = [(name, k, idx)
             for name in trainable
             for k, arr in enumerate(graph.part(name).arrays())
             for idx in np.ndindex(arr.shape)]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(slots), size=min(n_samples, len(slots)), replace=False)
    worst = 0.0
    for p in picks:
        name, k, idx = slots[p]
        arr = graph.part(name).arrays()[k]
        orig = arr[idx]
        arr[idx] = orig + step
        up = nn.loss_and_grads(graph, terms, X, [])[0]
        arr[idx] = orig - step
        down = nn.loss_and_grads(graph, terms, X, [])[0]
        arr[idx] = orig
        numeric = (up - down) / (2 * step)
        analytic = grads[name][k][idx]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, rel)
    return worst


def small_config(**overrides) -> RunConfig:
    """Desk config: 10 classes in 5 tasks of 2, 2-D inputs."""
    import dataclasses

    cfg = RunConfig()
    for section, values in overrides.items():
        if section == "strategy":
            cfg = dataclasses.replace(cfg, strategy=values)
        else:
            cfg = dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **values)})
    return cfg


@pytest.fixture(scope="session")
def desk_config():
    return small_config()


@pytest.fixture(scope="session")
def desk_stream(desk_config):
    return make_stream(desk_config)


@pytest.fixture(scope="session")
def fast_config():
    return small_config(grow={"epochs": 5}, compress={"epochs": 5})

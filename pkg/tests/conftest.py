"""Shared fixtures: solved synthesis runs are expensive, so they are computed
once per session and reused across test modules."""

import numpy as np
import pytest

# pass/fail lines reported by the acceptance criteria; echoed after the run
# so they show up even when pytest captures stdout
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from sdrsynth.data import build_consistency_set
from sdrsynth.fixtures import fixture_dataset, get_fixture
from sdrsynth.synth import (
    synthesize_data,
    synthesize_data_saturated,
    synthesize_model,
    synthesize_model_saturated,
)


@pytest.fixture(scope="session")
def example1():
    return get_fixture("example1")


@pytest.fixture(scope="session")
def example3():
    return get_fixture("example3")


@pytest.fixture(scope="session")
def quadrotor():
    return get_fixture("quadrotor")


@pytest.fixture(scope="session")
def ex1_result(example1):
    return synthesize_model(example1.model, example1.radius)


@pytest.fixture(scope="session")
def ex1_sat_result(example1):
    return synthesize_model_saturated(example1.model, example1.radius, [0.5])


@pytest.fixture(scope="session")
def ex3_dataset(example3):
    return fixture_dataset(example3, seed=1)


@pytest.fixture(scope="session")
def ex3_cset(ex3_dataset):
    return build_consistency_set(ex3_dataset)


@pytest.fixture(scope="session")
def ex3_result(example3, ex3_dataset):
    return synthesize_data(example3.library, ex3_dataset, example3.radius)


@pytest.fixture(scope="session")
def ex3_sat_result(example3, ex3_dataset):
    return synthesize_data_saturated(example3.library, ex3_dataset, example3.radius, [1.0])


def closed_loop_rollout(stepper, K, x0, steps, u_max=None):
    """Plain closed-loop iteration used by convergence checks."""
    from sdrsynth.sim import saturate

    x = np.asarray(x0, dtype=float).copy()
    traj = [x.copy()]
    for _ in range(steps):
        u = K @ x
        if u_max is not None:
            u = saturate(u, u_max)
        x = stepper(x, u)
        traj.append(x.copy())
    return np.asarray(traj)


def ball_samples(n, radius, count, seed):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        v = rng.normal(size=n)
        v /= np.linalg.norm(v)
        out.append(v * radius * rng.uniform(0, 1) ** (1.0 / n))
    return out

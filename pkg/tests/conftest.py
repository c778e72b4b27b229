"""Shared fixtures: standard partitions, drivers, and helper assertions."""

import numpy as np
import pytest

from arcadeproc import (
    ArcadeConfig,
    Partition,
    brownian_driver,
    ou_driver,
    piecewise_linear_coefficients,
)


@pytest.fixture
def unit_partition():
    return Partition((0.0, 1.0), steps_per_arc=50)


@pytest.fixture
def five_arc_partition():
    return Partition((0.0, 2.0, 4.0, 6.0, 8.0, 10.0), steps_per_arc=16)


@pytest.fixture
def bridge_config(unit_partition):
    return ArcadeConfig(brownian_driver(), piecewise_linear_coefficients(unit_partition))


@pytest.fixture
def ou_unit():
    return ou_driver(theta=1.0, sigma=np.sqrt(2.0))


def assert_within_3se(estimate, target, se, label=""):
    se = max(se, 1e-300)
    z = abs(estimate - target) / se
    assert z <= 3.0, f"{label}: estimate {estimate} vs {target} is {z:.2f} SE away"


def mean_and_se(samples):
    arr = np.asarray(samples, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1)) / np.sqrt(arr.size)

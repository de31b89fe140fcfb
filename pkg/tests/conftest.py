"""Shared fixtures: discrete oracle populations and small generated samples."""

from dataclasses import replace

import numpy as np
import pytest

from mrcde import DEFAULT_CONFIG, Dataset, DiscretePopulation, generate
from mrcde.simulation import SimConfig


def _index_grid():
    x, a, z, m = np.meshgrid(*[np.arange(2)] * 4, indexing="ij")
    return x, a, z, m


def make_populations():
    """Three all-positive 16-cell populations with their integer count tables.

    Counts are small integers so the expanded dataset reproduces the joint
    law exactly; Y means mix main effects and interactions so no estimator
    collapses to a constant.
    """
    x, a, z, m = _index_grid()

    counts_a = np.arange(1, 17).reshape(2, 2, 2, 2)
    y_a = 0.5 + 1.0 * x + 2.0 * a - 1.0 * z + 1.5 * m + 0.7 * x * z - 0.4 * a * m

    counts_b = np.array([3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 9, 3]).reshape(2, 2, 2, 2)
    y_b = -1.0 + 0.5 * x - 1.5 * a + 2.0 * z + 0.25 * m + 1.2 * a * z - 0.8 * x * m + 0.3 * x * a * z

    rng = np.random.default_rng(5)
    counts_c = rng.integers(1, 10, size=(2, 2, 2, 2))
    y_c = rng.normal(0.0, 2.0, size=(2, 2, 2, 2))

    out = []
    for counts, y_mean in ((counts_a, y_a), (counts_b, y_b), (counts_c, y_c)):
        out.append((DiscretePopulation.from_counts(counts, y_mean), counts))
    return out


@pytest.fixture(scope="session")
def populations():
    return make_populations()


def small_config(n: int) -> SimConfig:
    return replace(DEFAULT_CONFIG, n=n)


@pytest.fixture(scope="session")
def sample_400() -> Dataset:
    return generate(small_config(400), seed=11)


@pytest.fixture(scope="session")
def sample_1500() -> Dataset:
    return generate(small_config(1500), seed=29)

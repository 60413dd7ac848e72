import dataclasses

import pytest

from propagate import TrainConfig, context_from_series, synthetic_series


@pytest.fixture(scope="session")
def series():
    """Seed-0 synthetic outbreak, full resolution (384 bins)."""
    return synthetic_series(seed=0)


@pytest.fixture(scope="session")
def small_series(series):
    """First 32 bins of the seed-0 series; cheap enough for FD sweeps."""
    sl = slice(0, 32)
    return dataclasses.replace(series, t=series.t[sl], raw=series.raw[sl],
                               smoothed=series.smoothed[sl])


@pytest.fixture(scope="session")
def ctx(series):
    return context_from_series(series)


@pytest.fixture(scope="session")
def quick_cfg():
    """Deliberately tiny optimizer budget for harness-shape tests."""
    return TrainConfig(adam_iters=5, lbfgs_iters=5)

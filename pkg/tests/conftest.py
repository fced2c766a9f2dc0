import time

import pytest

from mba.experiments import ma2_experiment


@pytest.fixture(scope="session")
def ma2_full():
    """Default-scale MA(2) run for seed 0, shared by the experiment and acceptance tests."""
    start = time.perf_counter()
    result = ma2_experiment(seed=0)
    return result, time.perf_counter() - start

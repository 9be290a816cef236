import numpy as np
import pytest

from dynmgp.model import Dataset, DynamicParams, OutputSeries


def make_dataset(n_sources=2, n=8, d=1, seed=0, n_src=None) -> Dataset:
    """Small random dataset: sources on their own grids, target last."""
    rng = np.random.default_rng(seed)
    n_src = n_src if n_src is not None else n
    sources = []
    for i in range(n_sources):
        times = np.arange(1, n_src + 1)
        x = np.sort(rng.uniform(0, 5, size=(n_src, d)), axis=0)
        y = rng.normal(size=n_src)
        sources.append(OutputSeries(i, times, x, y))
    times = np.arange(1, n + 1)
    x = np.sort(rng.uniform(0, 5, size=(n, d)), axis=0)
    y = rng.normal(size=n)
    return Dataset(sources=sources, target=OutputSeries(n_sources, times, x, y))


def random_params(dataset: Dataset, seed=0) -> DynamicParams:
    return DynamicParams.init_random(dataset, np.random.default_rng(seed))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

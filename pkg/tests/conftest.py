import numpy as np
import pytest
from hypothesis import settings

from frailnet.data import ClusteredDataset

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_ds(time, status, cluster=None, x=None, n_clusters=None):
    time = np.asarray(time, dtype=float)
    cluster = np.zeros(time.size, dtype=int) if cluster is None else np.asarray(cluster)
    x = np.zeros((time.size, 1)) if x is None else np.asarray(x, dtype=float).reshape(time.size, -1)
    n = int(cluster.max()) + 1 if n_clusters is None else n_clusters
    return ClusteredDataset(cluster=cluster, time=time, status=status, x=x, n_clusters=n)


def random_ds(rng, n_clusters=5, size=(2, 6), p=3, censor=0.3, ties=False):
    sizes = rng.integers(size[0], size[1] + 1, n_clusters)
    cluster = np.repeat(np.arange(n_clusters), sizes)
    n = cluster.size
    time = rng.exponential(size=n) + 0.01
    if ties:
        time = np.round(time, 1) + 0.1
    status = (rng.uniform(size=n) > censor).astype(int)
    if status.sum() == 0:
        status[0] = 1
    x = rng.normal(size=(n, p))
    return ClusteredDataset(cluster=cluster, time=time, status=status, x=x, n_clusters=n_clusters)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)

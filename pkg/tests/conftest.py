import numpy as np
import pytest

from topoguard.graph import Graph


def random_graph(n, rng, p=0.3, features=5, classes=3, train_frac=0.3):
    adj = np.triu((rng.random((n, n)) < p).astype(float), k=1)
    adj = adj + adj.T
    labels = rng.integers(0, classes, n)
    labels[:classes] = np.arange(classes)
    order = rng.permutation(n)
    train = np.zeros(n, bool)
    test = np.zeros(n, bool)
    k = max(1, int(train_frac * n))
    train[order[:k]] = True
    test[order[k:]] = True
    return Graph(adj, rng.normal(size=(n, features)), labels, train, test, classes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path3():
    adj = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float)
    return Graph(adj, np.eye(3), [0, 1, 0], [True, False, False], [False, True, True])

import numpy as np
import pytest

from xgsl.data import SynthSpec, generate_synthetic
from xgsl.graph import Graph, adjacency_from_edges


def path_graph(n: int, features=None, labels=None, n_classes: int = 2, **masks) -> Graph:
    edges = np.array([(i, i + 1) for i in range(n - 1)]).reshape(-1, 2)
    if features is None:
        features = np.eye(n)
    if labels is None:
        labels = np.arange(n) % n_classes
    return Graph(adjacency_from_edges(edges, n), np.asarray(features, float), labels, n_classes, **masks)


def random_graph(n: int, n_features: int, n_classes: int, seed: int, p: float = 0.3) -> Graph:
    rng = np.random.default_rng(seed)
    pairs = np.array([(u, v) for u in range(n) for v in range(u + 1, n)])
    edges = pairs[rng.random(len(pairs)) < p]
    labels = rng.integers(0, n_classes, size=n)
    labels[:n_classes] = np.arange(n_classes)
    train = np.zeros(n, bool)
    train[: n // 2] = True
    valid = np.zeros(n, bool)
    valid[n // 2 : 3 * n // 4] = True
    test = ~(train | valid)
    return Graph(
        adjacency_from_edges(edges, n),
        rng.standard_normal((n, n_features)),
        labels,
        n_classes,
        train_mask=train,
        valid_mask=valid,
        test_mask=test,
    )


@pytest.fixture
def small_graph() -> Graph:
    return random_graph(8, 5, 3, seed=0)


@pytest.fixture(scope="session")
def tiny_synthetic():
    return generate_synthetic(SynthSpec(n_nodes=120, n_classes=3, p_in=0.08, p_out=0.01, feature_dim=6, snr=2.0, seed=4), "tiny")

import os
from pathlib import Path

import numpy as np
import pytest

from graphfb.graph import Graph, is_canonical_dataset, load_canonical

DATA_ENV = "GRAPHFB_DATA_DIR"

_GRAPH_CACHE = {}


def dataset_path(name):
    root = os.environ.get(DATA_ENV, "")
    if root and is_canonical_dataset(Path(root) / name):
        return Path(root) / name
    return None


def require_dataset(name):
    """Load a benchmark dataset or skip the test when it is not provisioned."""
    path = dataset_path(name)
    if path is None:
        pytest.skip(
            f"canonical dataset {name!r} not found under ${DATA_ENV}; "
            "see README 'Benchmark datasets' for how to provision it"
        )
    if name not in _GRAPH_CACHE:
        _GRAPH_CACHE[name] = load_canonical(path)
    return _GRAPH_CACHE[name]


@pytest.fixture
def k3():
    """Complete graph on 3 nodes with 2 features per node."""
    feats = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    return Graph.from_edges(3, [(0, 1), (1, 2), (2, 0)], feats, [0, 1, 0], 2)


@pytest.fixture
def p3():
    """Path 0-1-2."""
    feats = np.array([[1.0], [0.0], [-1.0]])
    return Graph.from_edges(3, [(0, 1), (1, 2)], feats, [0, 1, 1], 2)


@pytest.fixture
def k2():
    """Single edge graph."""
    return Graph.from_edges(2, [(0, 1)], np.ones((2, 1)), [0, 1], 2)

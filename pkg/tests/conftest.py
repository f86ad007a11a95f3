import numpy as np
import pytest

from stsg.graph_wavelet import SensorGraph, path_graph


def cycle_graph(n):
    pos = np.stack([np.cos(2 * np.pi * np.arange(n) / n),
                    np.sin(2 * np.pi * np.arange(n) / n)], axis=1)
    edges = frozenset((i, (i + 1) % n) for i in range(n))
    return SensorGraph(n, pos, edges)


def star_graph(n):
    angles = 2 * np.pi * np.arange(n - 1) / max(n - 1, 1)
    pos = np.vstack([[0.0, 0.0],
                     np.stack([np.cos(angles), np.sin(angles)], axis=1)])
    edges = frozenset((0, i) for i in range(1, n))
    return SensorGraph(n, pos, edges)


def complete_graph(n):
    pos = np.stack([np.arange(n, dtype=float), (np.arange(n) % 2).astype(float)],
                   axis=1)
    edges = frozenset((i, j) for i in range(n) for j in range(i + 1, n))
    return SensorGraph(n, pos, edges)


def two_triangles():
    # Disconnected: two triangles far apart.
    pos = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0],
                    [10.0, 0.0], [11.0, 0.0], [10.5, 1.0]])
    edges = frozenset([(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])
    return SensorGraph(6, pos, edges)


def random_graph(n, seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 5, size=(n, 2))
    edges = set()
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.4:
                edges.add((i, j))
    # keep at least a spanning chain so adjacency pairing has material
    for i in range(n - 1):
        edges.add((i, i + 1))
    return SensorGraph(n, pos, frozenset(edges))


@pytest.fixture(scope="session")
def small_graph_fixtures():
    """All-N<=8 graph fixture set used by the brute-force equivalence gates."""
    graphs = [path_graph(n) for n in range(2, 9)]
    graphs += [cycle_graph(n) for n in (3, 4, 6, 8)]
    graphs += [star_graph(5), complete_graph(4), two_triangles()]
    graphs += [random_graph(7, seed=11), random_graph(8, seed=12)]
    return graphs

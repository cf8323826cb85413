"""Synthetic graph generators for verification sweeps and training sanity checks."""

from __future__ import annotations

import numpy as np

from .graph import Graph, is_bipartite, is_connected


def erdos_renyi(n, p, rng) -> np.ndarray:
    """Edge pairs of a G(n, p) draw (upper triangle only)."""
    iu, ju = np.triu_indices(n, k=1)
    mask = rng.random(iu.shape[0]) < p
    return np.column_stack([iu[mask], ju[mask]])


def random_connected_nonbipartite(n, p, rng, max_tries=400) -> Graph:
    """Draw G(n, p) graphs until one is connected with an odd cycle.

    The edge probability is escalated every 50 failed draws so that sparse
    settings on tiny graphs (where only the triangle qualifies at n=3) still
    terminate.
    """
    p_eff = p
    for attempt in range(max_tries):
        g = Graph.from_edges(n, erdos_renyi(n, p_eff, rng))
        if g.n_edges and is_connected(g) and not is_bipartite(g):
            return g
        if attempt % 50 == 49:
            p_eff = min(1.0, p_eff * 1.5)
    raise RuntimeError(f"no connected non-bipartite G({n},{p}) in {max_tries} tries")


def random_attributed_graph(n, n_features, n_classes, p, rng, connected=True,
                            max_tries=200) -> Graph:
    """Connected random graph with gaussian features and uniform labels."""
    for _ in range(max_tries):
        edges = erdos_renyi(n, p, rng)
        features = rng.standard_normal((n, n_features))
        labels = rng.integers(0, n_classes, size=n)
        # make sure every class occurs so masked losses are well posed
        labels[:n_classes] = np.arange(n_classes)
        g = Graph.from_edges(n, edges, features, labels, n_classes)
        if not connected or (g.n_edges and is_connected(g)):
            return g
    raise RuntimeError(f"no connected G({n},{p}) in {max_tries} tries")


def two_block_graph(n_per_block, p_in, p_out, rng, feature_shift=2.0,
                    feature_dim=4) -> Graph:
    """Two-community stochastic block model with class-shifted features.

    ``p_in > p_out`` gives a homophilic graph, ``p_in < p_out`` a
    heterophilic one. Features are gaussian around +/- feature_shift/2 on
    every dimension, so the classes are (noisily) linearly separable.
    """
    n = 2 * n_per_block
    labels = np.repeat([0, 1], n_per_block)
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, p_in, p_out)
    mask = rng.random(iu.shape[0]) < prob
    edges = np.column_stack([iu[mask], ju[mask]])
    centers = np.where(labels[:, None] == 0, -feature_shift / 2, feature_shift / 2)
    features = centers + rng.standard_normal((n, feature_dim))
    return Graph.from_edges(n, edges, features.astype(np.float64), labels, 2)

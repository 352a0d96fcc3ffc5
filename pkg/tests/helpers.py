"""Shared test utilities."""

import numpy as np

from roadgraph.graph import build_graph


def relabeled_copy(graph, seed=0):
    """Vertex-relabeled, edge-reordered copy of a graph."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(graph.num_vertices)
    inv = np.argsort(perm)
    coords = np.stack([graph.xs[perm], graph.ys[perm]], axis=1)
    edges = [(int(inv[a]), int(inv[b])) for a, b in graph.edges]
    rng.shuffle(edges)
    return build_graph(coords, edges, (graph.width, graph.height))


def translated_copy(graph, dx, dy, extent):
    coords = np.stack([graph.xs + dx, graph.ys + dy], axis=1)
    return build_graph(coords, [tuple(e) for e in graph.edges], extent)


def drop_edges(graph, fraction, seed=0):
    """Copy with a random fraction of edges removed; orphaned vertices kept
    out by rebuilding from the surviving edges."""
    rng = np.random.default_rng(seed)
    n_drop = int(round(graph.num_edges * fraction))
    drop = set(rng.choice(graph.num_edges, size=n_drop, replace=False).tolist())
    kept = [tuple(e) for k, e in enumerate(graph.edges) if k not in drop]
    used = sorted({v for e in kept for v in e})
    remap = {v: i for i, v in enumerate(used)}
    coords = [(float(graph.xs[v]), float(graph.ys[v])) for v in used]
    return build_graph(coords, [(remap[a], remap[b]) for a, b in kept],
                       (graph.width, graph.height))

"""Undirected planar road graphs in pixel coordinates.

Coordinate convention used throughout the package: x is the column, y is the
row, origin at the top-left corner, coordinates are continuous floats.
Graphs are immutable after construction; derived quantities (degrees,
adjacency, spatial index) are built once in ``build_graph``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Node",
    "RoadGraph",
    "SpatialIndex",
    "GraphBuildError",
    "build_graph",
    "nodes_within",
    "shortest_path_length",
    "simplify_graph",
    "chain_decomposition",
]


class GraphBuildError(ValueError):
    """Raised when raw vertex/edge input violates a graph invariant."""


@dataclass(frozen=True)
class Node:
    """A graph vertex: dense integer id, pixel coordinates, cached degree."""

    id: int
    x: float
    y: float
    degree: int

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


class SpatialIndex:
    """Uniform grid over vertex coordinates for radius queries.

    Cell size defaults to the largest radius used by the pipeline (16 px) so
    a query only has to visit a one-ring of cells plus the boundary cells of
    the disk's bounding box.
    """

    def __init__(self, xs: np.ndarray, ys: np.ndarray, cell_size: float = 16.0):
        if cell_size <= 0:
            raise ValueError("cell_size must be positive")
        self.cell_size = float(cell_size)
        self._xs = xs
        self._ys = ys
        buckets: dict[tuple[int, int], list[int]] = {}
        inv = 1.0 / self.cell_size
        for i in range(len(xs)):
            key = (int(xs[i] * inv), int(ys[i] * inv))
            buckets.setdefault(key, []).append(i)
        self._buckets = buckets

    def query(self, x: float, y: float, radius: float) -> np.ndarray:
        """Ids of all vertices with Euclidean distance <= radius, unsorted."""
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        inv = 1.0 / self.cell_size
        cx0 = int(math.floor((x - radius) * inv))
        cx1 = int(math.floor((x + radius) * inv))
        cy0 = int(math.floor((y - radius) * inv))
        cy1 = int(math.floor((y + radius) * inv))
        hits: list[int] = []
        for cx in range(cx0, cx1 + 1):
            for cy in range(cy0, cy1 + 1):
                bucket = self._buckets.get((cx, cy))
                if bucket:
                    hits.extend(bucket)
        if not hits:
            return np.empty(0, dtype=np.int64)
        ids = np.asarray(hits, dtype=np.int64)
        dx = self._xs[ids] - x
        dy = self._ys[ids] - y
        keep = dx * dx + dy * dy <= radius * radius + 0.0
        return ids[keep]


class RoadGraph:
    """Immutable undirected graph of pixel-coordinate vertices.

    Edge weights default to the Euclidean distance between endpoints; graphs
    produced by ``simplify_graph`` carry explicit per-edge polyline lengths
    instead. Construct through ``build_graph``.
    """

    __slots__ = (
        "xs",
        "ys",
        "edges",
        "edge_lengths",
        "degrees",
        "width",
        "height",
        "_adj",
        "_index",
    )

    def __init__(
        self,
        xs: np.ndarray,
        ys: np.ndarray,
        edges: np.ndarray,
        width: float,
        height: float,
        edge_lengths: np.ndarray,
        cell_size: float = 16.0,
    ):
        self.xs = xs
        self.ys = ys
        self.edges = edges
        self.edge_lengths = edge_lengths
        self.width = float(width)
        self.height = float(height)
        self.degrees = np.zeros(len(xs), dtype=np.int64)
        if len(edges):
            np.add.at(self.degrees, edges[:, 0], 1)
            np.add.at(self.degrees, edges[:, 1], 1)
        adj: list[list[tuple[int, int]]] = [[] for _ in range(len(xs))]
        for k in range(len(edges)):
            a, b = int(edges[k, 0]), int(edges[k, 1])
            adj[a].append((b, k))
            if b != a:
                adj[b].append((a, k))
        self._adj = adj
        self._index = SpatialIndex(xs, ys, cell_size=cell_size)

    @property
    def num_vertices(self) -> int:
        return len(self.xs)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def node(self, vid: int) -> Node:
        if not 0 <= vid < len(self.xs):
            raise ValueError(f"unknown vertex id {vid}")
        return Node(vid, float(self.xs[vid]), float(self.ys[vid]), int(self.degrees[vid]))

    def nodes(self) -> list[Node]:
        return [self.node(i) for i in range(len(self.xs))]

    def neighbors(self, vid: int) -> list[tuple[int, int]]:
        """(neighbor id, edge index) pairs incident to vid."""
        return self._adj[vid]

    def total_length(self) -> float:
        return float(np.sum(self.edge_lengths)) if len(self.edges) else 0.0

    def is_empty(self) -> bool:
        return len(self.xs) == 0


def _euclidean_edge_lengths(xs: np.ndarray, ys: np.ndarray, edges: np.ndarray) -> np.ndarray:
    if not len(edges):
        return np.empty(0, dtype=np.float64)
    dx = xs[edges[:, 0]] - xs[edges[:, 1]]
    dy = ys[edges[:, 0]] - ys[edges[:, 1]]
    return np.hypot(dx, dy)


def build_graph(
    vertices,
    edges,
    extent: tuple[float, float],
    cell_size: float = 16.0,
    _allow_loops: bool = False,
    _edge_lengths=None,
) -> RoadGraph:
    """Validate raw vertices/edges and build an immutable RoadGraph.

    ``vertices`` is a sequence of (x, y) pairs; ids are their positions in the
    sequence. ``edges`` is an iterable of (a, b) id pairs; duplicates under
    unordered comparison are collapsed and the edge list is stored in
    canonical lexicographic order.

    Raises GraphBuildError naming the index of the offending element for
    self-loops, unknown ids and out-of-extent coordinates.
    """
    width, height = float(extent[0]), float(extent[1])
    coords = np.asarray(list(vertices), dtype=np.float64)
    if coords.size == 0:
        coords = coords.reshape(0, 2)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise GraphBuildError("vertices must be (x, y) pairs")
    xs = np.ascontiguousarray(coords[:, 0])
    ys = np.ascontiguousarray(coords[:, 1])
    if not np.all(np.isfinite(coords)):
        bad = int(np.flatnonzero(~np.isfinite(coords).all(axis=1))[0])
        raise GraphBuildError(f"vertex {bad}: non-finite coordinate")
    out = (xs < 0) | (xs >= width) | (ys < 0) | (ys >= height)
    if np.any(out):
        bad = int(np.flatnonzero(out)[0])
        raise GraphBuildError(
            f"vertex {bad}: coordinate ({xs[bad]}, {ys[bad]}) outside extent "
            f"[0, {width}) x [0, {height})"
        )

    nv = len(xs)
    raw = list(edges)
    seen: dict[tuple[int, int], int] = {}
    lengths_in = None if _edge_lengths is None else list(_edge_lengths)
    kept_lengths: dict[tuple[int, int], float] = {}
    for k, pair in enumerate(raw):
        a, b = int(pair[0]), int(pair[1])
        if not (0 <= a < nv and 0 <= b < nv):
            raise GraphBuildError(f"edge {k}: vertex id out of range: ({a}, {b})")
        if a == b and not _allow_loops:
            raise GraphBuildError(f"edge {k}: self-loop at vertex {a}")
        key = (a, b) if a <= b else (b, a)
        if key not in seen:
            seen[key] = k
            if lengths_in is not None:
                kept_lengths[key] = float(lengths_in[k])
    if seen:
        edge_arr = np.array(sorted(seen), dtype=np.int64)
    else:
        edge_arr = np.empty((0, 2), dtype=np.int64)

    if lengths_in is not None:
        lengths = np.array([kept_lengths[(int(a), int(b))] for a, b in edge_arr], dtype=np.float64)
    else:
        lengths = _euclidean_edge_lengths(xs, ys, edge_arr)
    return RoadGraph(xs, ys, edge_arr, width, height, lengths, cell_size=cell_size)


def nodes_within(
    graph: RoadGraph,
    center: tuple[float, float],
    radius: float,
    exclude_center: bool = False,
) -> list[Node]:
    """All nodes with Euclidean distance <= radius of center.

    Sorted by (distance, id). With ``exclude_center`` a node lying exactly at
    the center coordinate is omitted.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    cx, cy = float(center[0]), float(center[1])
    ids = graph._index.query(cx, cy, radius)
    if not len(ids):
        return []
    dx = graph.xs[ids] - cx
    dy = graph.ys[ids] - cy
    dist = np.hypot(dx, dy)
    if exclude_center:
        keep = dist > 0.0
        ids, dist = ids[keep], dist[keep]
    order = np.lexsort((ids, dist))
    return [graph.node(int(i)) for i in ids[order]]


def dijkstra(
    graph: RoadGraph,
    source: int,
    target: int | None = None,
    budget: float = math.inf,
) -> np.ndarray:
    """Distances from source along edge-length weights.

    Stops early once ``target`` is settled or all reachable vertices within
    ``budget`` are settled. Unreached vertices get inf.
    """
    dist = np.full(graph.num_vertices, math.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(graph.num_vertices, dtype=bool)
    lengths = graph.edge_lengths
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if target is not None and u == target:
            break
        for v, k in graph._adj[u]:
            nd = d + lengths[k]
            if nd < dist[v] and nd <= budget:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def shortest_path_length(graph: RoadGraph, a: int, b: int) -> float:
    """Exact shortest-path length in pixels; math.inf when unreachable."""
    for vid in (a, b):
        if not 0 <= vid < graph.num_vertices:
            raise ValueError(f"unknown vertex id {vid}")
    if a == b:
        return 0.0
    return float(dijkstra(graph, a, target=b)[b])


def _coord_key(graph: RoadGraph, vid: int) -> tuple[float, float, int]:
    return (float(graph.xs[vid]), float(graph.ys[vid]), vid)


def chain_decomposition(graph: RoadGraph) -> list[list[int]]:
    """Maximal degree-2 chains of the graph, as vertex-id paths.

    Anchors are vertices with degree != 2. Each chain runs anchor-to-anchor
    with only degree-2 vertices in between; components that are pure cycles
    yield one closed chain (first id repeated at the end). Ordering and
    orientation depend only on vertex coordinates, never on id labels, so a
    relabeled copy of a graph decomposes into geometrically identical chains.
    """
    visited = np.zeros(graph.num_edges, dtype=bool)
    anchors = [v for v in range(graph.num_vertices) if graph.degrees[v] != 2]
    anchors.sort(key=lambda v: _coord_key(graph, v))
    chains: list[list[int]] = []

    def walk(start: int, nbr: int, k: int) -> list[int]:
        path = [start, nbr]
        visited[k] = True
        prev, cur = start, nbr
        while graph.degrees[cur] == 2 and cur != start:
            nxt = None
            for w, ek in graph._adj[cur]:
                if not visited[ek]:
                    nxt = (w, ek)
                    break
            if nxt is None:
                break
            visited[nxt[1]] = True
            path.append(nxt[0])
            prev, cur = cur, nxt[0]
        return path

    for a in anchors:
        for nbr, k in sorted(graph._adj[a], key=lambda t: _coord_key(graph, t[0])):
            if not visited[k]:
                chains.append(walk(a, nbr, k))

    # leftover edges belong to pure degree-2 cycles
    remaining = np.flatnonzero(~visited)
    while len(remaining):
        ends = sorted({int(graph.edges[k, j]) for k in remaining for j in (0, 1)},
                      key=lambda v: _coord_key(graph, v))
        start = ends[0]
        nbrs = sorted(
            [(w, ek) for w, ek in graph._adj[start] if not visited[ek]],
            key=lambda t: _coord_key(graph, t[0]),
        )
        chains.append(walk(start, nbrs[0][0], nbrs[0][1]))
        remaining = np.flatnonzero(~visited)

    def chain_sort_key(path: list[int]):
        return tuple(_coord_key(graph, v) for v in path[: min(3, len(path))])

    def canonical(path: list[int]) -> list[int]:
        if path[0] == path[-1]:
            return path
        fwd = (_coord_key(graph, path[0]), _coord_key(graph, path[1]))
        rev = (_coord_key(graph, path[-1]), _coord_key(graph, path[-2]))
        return path if fwd <= rev else path[::-1]

    chains = [canonical(p) for p in chains]
    chains.sort(key=chain_sort_key)
    return chains


def chain_length(graph: RoadGraph, path: list[int]) -> float:
    xs, ys = graph.xs, graph.ys
    total = 0.0
    for u, v in zip(path[:-1], path[1:]):
        total += math.hypot(xs[u] - xs[v], ys[u] - ys[v])
    return total


def simplify_graph(graph: RoadGraph) -> RoadGraph:
    """Collapse degree-2 chains into single edges carrying polyline length.

    Junction and endpoint vertices are retained. An isolated cycle keeps one
    anchor vertex and becomes a loop edge whose length is the cycle length.
    Where a collapse would create a duplicate edge (two distinct chains
    joining the same anchor pair) or a loop through an anchor, one or two
    interior vertices are retained so the output stays a valid simple graph
    with correct lengths.
    """
    if graph.is_empty():
        return build_graph([], [], (graph.width, graph.height))

    chains = chain_decomposition(graph)
    keep: list[int] = []
    keep_pos: dict[int, int] = {}

    def intern(vid: int) -> int:
        if vid not in keep_pos:
            keep_pos[vid] = len(keep)
            keep.append(vid)
        return keep_pos[vid]

    new_edges: list[tuple[int, int]] = []
    new_lengths: list[float] = []
    edge_seen: set[tuple[int, int]] = set()

    def interior_at(path: list[int], fraction: float) -> int:
        """Interior vertex of the chain nearest the given length fraction."""
        total = chain_length(graph, path)
        want = total * fraction
        run = 0.0
        best, best_err = path[1], math.inf
        for u, v in zip(path[:-1], path[1:]):
            run += math.hypot(graph.xs[u] - graph.xs[v], graph.ys[u] - graph.ys[v])
            if v != path[-1]:
                err = abs(run - want)
                if err < best_err:
                    best, best_err = v, err
        return best

    def emit(a: int, b: int, length: float):
        key = (min(a, b), max(a, b))
        new_edges.append(key)
        new_lengths.append(length)
        edge_seen.add(key)

    def sub_length(path: list[int], i: int, j: int) -> float:
        return chain_length(graph, path[i : j + 1])

    for path in chains:
        closed = path[0] == path[-1]
        a, b = path[0], path[-1]
        if closed and graph.degrees[a] == 2:
            # isolated cycle: one anchor, loop edge
            ia = intern(a)
            emit(ia, ia, chain_length(graph, path))
            continue
        if closed:
            # cycle through an anchor: keep two interior vertices
            m1 = interior_at(path, 1.0 / 3.0)
            m2 = interior_at(path, 2.0 / 3.0)
            i1, i2 = path.index(m1), path.index(m2)
            if i1 == i2:
                i2 = i1 + 1 if i1 + 1 < len(path) - 1 else i1
            ia, im1, im2 = intern(a), intern(path[i1]), intern(path[i2])
            emit(ia, im1, sub_length(path, 0, i1))
            if im1 != im2:
                emit(im1, im2, sub_length(path, i1, i2))
            emit(im2, ia, sub_length(path, i2, len(path) - 1))
            continue
        ia, ib = intern(a), intern(b)
        key = (min(ia, ib), max(ia, ib))
        if key in edge_seen and len(path) > 2:
            # parallel chain: retain its midpoint to avoid a duplicate edge
            mid = interior_at(path, 0.5)
            i = path.index(mid)
            im = intern(mid)
            emit(ia, im, sub_length(path, 0, i))
            emit(im, ib, sub_length(path, i, len(path) - 1))
        else:
            emit(ia, ib, chain_length(graph, path))

    coords = [(float(graph.xs[v]), float(graph.ys[v])) for v in keep]
    # vertices not on any edge (isolated anchors) are preserved
    for v in range(graph.num_vertices):
        if graph.degrees[v] == 0:
            intern(v)
            coords.append((float(graph.xs[v]), float(graph.ys[v])))
    return build_graph(
        coords,
        new_edges,
        (graph.width, graph.height),
        _allow_loops=True,
        _edge_lengths=new_lengths,
    )

"""Training-pair construction: source sampling, target gathering, labels,
and mask-guided target resampling.

Sources are drawn from the ground-truth graph with inverse degree-class
weighting so rare junction degrees stay represented. Targets are every node
within the gather radius; a pair is labeled positive when the ground-truth
path between the two nodes is no longer than the positive-path budget.
Resampling then moves each target to the strongest road-mask pixel nearby,
aligning training coordinates with what peak extraction produces at
inference time. Source nodes are never moved.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .graph import Node, RoadGraph, dijkstra, nodes_within
from .raster import ProbabilityMask

__all__ = [
    "SamplerConfig",
    "Provenance",
    "NodePairSample",
    "sample_sources",
    "gather_targets",
    "resample_targets",
]


class Provenance(enum.Enum):
    GROUND_TRUTH_TARGET = "ground-truth-target"
    RESAMPLED_TARGET = "resampled-target"
    INFERENCE_CANDIDATE = "inference-candidate"


@dataclass(frozen=True)
class SamplerConfig:
    num_sources: int = 512
    gather_radius: float = 16.0
    resample_radius: float = 8.0
    positive_path_budget: float = 32.0
    # a pair is positive only if its path is also direct: within this factor
    # of the straight-line distance. Keeps detour pairs (corner cuts through
    # a junction) negative so emitted graphs trace the road geometry.
    positive_stretch_factor: float = 1.2

    def __post_init__(self):
        if self.num_sources < 1:
            raise ValueError("num_sources must be >= 1")
        if not self.gather_radius > self.resample_radius > 0:
            raise ValueError("need gather_radius > resample_radius > 0")
        if self.positive_path_budget <= 0:
            raise ValueError("positive path budget must be positive")
        if self.positive_stretch_factor < 1.0:
            raise ValueError("stretch factor must be >= 1")


@dataclass(frozen=True)
class NodePairSample:
    source: tuple[float, float]
    target: tuple[float, float]
    label: int | None
    provenance: Provenance

    def __post_init__(self):
        if self.label is None and self.provenance is not Provenance.INFERENCE_CANDIDATE:
            raise ValueError("training samples must carry a label")


def sample_sources(
    gt: RoadGraph,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    within: np.ndarray | None = None,
) -> list[Node]:
    """Up to ``num_sources`` distinct nodes, weighted by inverse frequency of
    each node's degree class so the sampled degree histogram is flatter than
    the population's. ``within`` restricts the population (and the degree
    frequencies) to a subset of vertex ids, e.g. the nodes of one patch.
    Empty graph gives an empty result."""
    pool = np.arange(gt.num_vertices) if within is None else np.asarray(within, dtype=np.int64)
    if len(pool) == 0:
        return []
    if cfg.num_sources >= len(pool):
        return [gt.node(int(i)) for i in pool]
    degrees = gt.degrees[pool]
    _, inverse, counts = np.unique(degrees, return_inverse=True, return_counts=True)
    weights = 1.0 / counts[inverse]
    weights /= weights.sum()
    picked = pool[rng.choice(len(pool), size=cfg.num_sources, replace=False, p=weights)]
    return [gt.node(int(i)) for i in picked]


def gather_targets(gt: RoadGraph, source: Node, cfg: SamplerConfig) -> list[tuple[Node, int]]:
    """Every node within the gather radius of the source (closed ball,
    excluding the source itself) with a binary label: positive when the
    ground-truth path from the source is within the positive-path budget and
    within ``positive_stretch_factor`` of the straight-line distance."""
    candidates = [
        n for n in nodes_within(gt, source.xy, cfg.gather_radius) if n.id != source.id
    ]
    if not candidates:
        return []
    dist = dijkstra(gt, source.id, budget=cfg.positive_path_budget)
    out = []
    for n in candidates:
        euclid = math.hypot(n.x - source.x, n.y - source.y)
        label = int(
            dist[n.id] <= cfg.positive_path_budget
            and dist[n.id] <= cfg.positive_stretch_factor * max(euclid, 1e-9)
        )
        out.append((n, label))
    return out


def _disk_argmax(mask: np.ndarray, cx: float, cy: float, radius: float) -> tuple[float, float]:
    """Pixel (x, y) holding the maximum value within Euclidean ``radius`` of
    (cx, cy).

    Ties on the maximum go to the pixel nearest the disk center, then to the
    smallest (row, col). Nearest-first matters on saturated masks, where the
    whole road plateau shares the maximum: a target already on the plateau
    must stay put rather than slide along the road.
    """
    h, w = mask.shape
    x0 = max(0, int(math.ceil(cx - radius)))
    x1 = min(w - 1, int(math.floor(cx + radius)))
    y0 = max(0, int(math.ceil(cy - radius)))
    y1 = min(h - 1, int(math.floor(cy + radius)))
    if x0 > x1 or y0 > y1:
        return (cx, cy)
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    d2 = (xs - cx) ** 2 + (ys - cy) ** 2
    inside = d2 <= radius * radius
    if not inside.any():
        return (cx, cy)
    vals = np.where(inside, mask[y0 : y1 + 1, x0 : x1 + 1], -1.0)
    peak = vals.max()
    cand = np.where(vals == peak, d2, np.inf)
    flat = int(np.argmin(cand))  # row-major scan breaks distance ties by (row, col)
    dy, dx = divmod(flat, vals.shape[1])
    return (float(x0 + dx), float(y0 + dy))


def resample_targets(
    pairs: list[NodePairSample],
    road_mask: ProbabilityMask,
    cfg: SamplerConfig,
) -> list[NodePairSample]:
    """Move each target to the road-mask argmax within the resample radius.

    Sources and labels are untouched; duplicates (two targets argmaxing to
    the same pixel) are kept as distinct samples.
    """
    out = []
    values = road_mask.values
    for p in pairs:
        nx, ny = _disk_argmax(values, p.target[0], p.target[1], cfg.resample_radius)
        out.append(
            NodePairSample(
                source=p.source,
                target=(nx, ny),
                label=p.label,
                provenance=Provenance.RESAMPLED_TARGET,
            )
        )
    return out

"""Orchestration: training over scenes and the full inference procedure.

Inference runs the mask pipeline end to end: per-patch crops are blended
onto the scene canvas, road and keypoint peaks are extracted globally, every
node pair within the pairing radius is scored in both directions by the
connectivity classifier, directed scores are averaged per unordered pair,
and edges at or above the decision threshold form the output graph.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .classifier import (
    Classifier,
    LineSamplingParams,
    ThresholdSet,
    TrainState,
    assemble_features_batch,
    backward_and_step,
)
from .config import RunConfig
from .graph import RoadGraph, build_graph
from .metrics import TopoConfig, TopoEvaluator
from .raster import FeatureMap, NmsConfig, ProbabilityMask, blend_masks, nms_extract
from .sampling import (
    NodePairSample,
    Provenance,
    SamplerConfig,
    gather_targets,
    resample_targets,
    sample_sources,
)

__all__ = [
    "PatchPlan",
    "EdgeCandidate",
    "InferenceBundle",
    "TrainScene",
    "TrainResult",
    "run_training",
    "extract_nodes",
    "score_pairs",
    "emit_graph",
    "run_inference",
    "search_thresholds",
]


@dataclass(frozen=True)
class PatchPlan:
    """Offsets of overlapping square patches covering a scene."""

    patch_size: int
    stride: int
    offsets: tuple[tuple[int, int], ...]

    @classmethod
    def cover(cls, width: int, height: int, patch_size: int, stride_fraction: float) -> "PatchPlan":
        size = min(patch_size, width, height)
        stride = max(1, int(round(size * stride_fraction)))

        def starts(total: int) -> list[int]:
            out = [0]
            while out[-1] + size < total:
                out.append(min(out[-1] + stride, total - size))
            return sorted(set(out))

        offsets = tuple((x, y) for y in starts(height) for x in starts(width))
        return cls(size, stride, offsets)


@dataclass(frozen=True)
class EdgeCandidate:
    """Unordered node pair with its directed scores and their mean."""

    a: int
    b: int
    scores: tuple[float, ...]

    @property
    def fused(self) -> float:
        return sum(self.scores) / len(self.scores)


@dataclass(frozen=True)
class InferenceBundle:
    """Full-scene rasters after patch blending."""

    road: ProbabilityMask
    keypoint: ProbabilityMask
    features: FeatureMap

    def __post_init__(self):
        shapes = {
            (self.road.height, self.road.width),
            (self.keypoint.height, self.keypoint.width),
            (self.features.height, self.features.width),
        }
        if len(shapes) != 1:
            raise ValueError("bundle rasters must share spatial dimensions")


@dataclass(frozen=True)
class TrainScene:
    """A training scene: ground truth plus the mask/feature providers."""

    gt: RoadGraph
    road: ProbabilityMask
    features: FeatureMap

    def __post_init__(self):
        if self.gt is None or self.gt.num_vertices == 0:
            raise ValueError("training scene lacks a ground-truth graph")


@dataclass
class TrainResult:
    classifier: Classifier
    state: TrainState
    loss_history: list[float] = field(default_factory=list)


def _line_params(cfg: RunConfig) -> LineSamplingParams:
    return LineSamplingParams(
        extension_length=cfg.extension_length,
        line_width=cfg.line_width,
        samples_per_extension=cfg.samples_per_extension,
        samples_on_segment=cfg.samples_on_segment,
    )


def _sampler_config(cfg: RunConfig) -> SamplerConfig:
    return SamplerConfig(
        num_sources=cfg.num_sources,
        gather_radius=cfg.gather_radius,
        resample_radius=cfg.resample_radius,
        positive_path_budget=cfg.positive_path_budget,
        positive_stretch_factor=cfg.positive_stretch_factor,
    )


def run_training(scenes: list[TrainScene], cfg: RunConfig, seed: int) -> TrainResult:
    """Train the connectivity classifier over the given scenes.

    Per epoch and patch: sample sources (inverse degree-class weights inside
    the patch), gather labeled targets within the gather radius, optionally
    resample targets onto the road mask, assemble feature vectors and take
    one Adam step on the patch batch. Fully deterministic in (scenes, cfg,
    seed).
    """
    if not scenes:
        raise ValueError("no training scenes")
    channels = scenes[0].features.channels
    for s in scenes:
        if s.features.channels != channels:
            raise ValueError("training scenes disagree on feature channels")
    line = _line_params(cfg)
    width = 2 * channels + (line.block_width if cfg.use_extended_line else 0)
    clf = Classifier(width, hidden=cfg.hidden_sizes, seed=seed)
    state = TrainState(learning_rate=cfg.learning_rate)
    sampler = _sampler_config(cfg)
    history: list[float] = []

    for epoch in range(cfg.epochs):
        losses = []
        for si, scene in enumerate(scenes):
            h, w = scene.road.height, scene.road.width
            plan = PatchPlan.cover(w, h, cfg.patch_size, cfg.patch_stride_fraction)
            for pi, (ox, oy) in enumerate(plan.offsets):
                rng = np.random.default_rng(
                    np.random.SeedSequence([seed, epoch, si, pi, 0x7A71])
                )
                inside = np.flatnonzero(
                    (scene.gt.xs >= ox)
                    & (scene.gt.xs < ox + plan.patch_size)
                    & (scene.gt.ys >= oy)
                    & (scene.gt.ys < oy + plan.patch_size)
                )
                if len(inside) == 0:
                    continue
                sources = sample_sources(scene.gt, sampler, rng, within=inside)
                pairs: list[NodePairSample] = []
                for src in sources:
                    for tgt, label in gather_targets(scene.gt, src, sampler):
                        pairs.append(
                            NodePairSample(
                                source=src.xy,
                                target=tgt.xy,
                                label=label,
                                provenance=Provenance.GROUND_TRUTH_TARGET,
                            )
                        )
                if not pairs:
                    continue
                if cfg.use_resampling:
                    pairs = resample_targets(pairs, scene.road, sampler)
                sources_arr = np.array([p.source for p in pairs])
                targets_arr = np.array([p.target for p in pairs])
                keep = np.hypot(
                    sources_arr[:, 0] - targets_arr[:, 0],
                    sources_arr[:, 1] - targets_arr[:, 1],
                ) > 1e-9
                if not keep.any():
                    continue
                x = assemble_features_batch(
                    scene.features,
                    scene.road,
                    sources_arr[keep],
                    targets_arr[keep],
                    line,
                    cfg.use_extended_line,
                )
                y = np.array([p.label for p in pairs], dtype=np.float64)[keep]
                losses.append(backward_and_step(clf, state, x, y))
        history.append(float(np.mean(losses)) if losses else math.nan)
    return TrainResult(classifier=clf, state=state, loss_history=history)


def extract_nodes(
    bundle: InferenceBundle,
    thresholds: ThresholdSet,
    cfg: RunConfig,
) -> tuple[np.ndarray, list[str]]:
    """Node positions from both masks, merged.

    Road-mask peaks within ``node_merge_distance`` of a keypoint peak are
    dropped in favor of the keypoint member. Returns (N, 2) positions and a
    per-node provenance tag ("keypoint" or "road").
    """
    v1 = nms_extract(bundle.road, NmsConfig(thresholds.t1, cfg.nms_radius_road))
    v2 = nms_extract(bundle.keypoint, NmsConfig(thresholds.t2, cfg.nms_radius_keypoint))
    merged: list[tuple[float, float]] = list(v2)
    tags = ["keypoint"] * len(v2)
    if v2:
        tree = cKDTree(np.asarray(v2))
        for p in v1:
            if not tree.query_ball_point(p, r=cfg.node_merge_distance - 1e-12):
                merged.append(p)
                tags.append("road")
    else:
        merged.extend(v1)
        tags.extend(["road"] * len(v1))
    pts = np.asarray(merged, dtype=np.float64).reshape(-1, 2)
    return pts, tags


def score_pairs(
    nodes: np.ndarray,
    bundle: InferenceBundle,
    classifier: Classifier,
    cfg: RunConfig,
) -> list[EdgeCandidate]:
    """Score every unordered node pair within ``pair_radius`` in both
    directions; the fused score is the mean of the two directed scores.
    Candidates come back sorted by fused score descending."""
    if len(nodes) < 2:
        return []
    tree = cKDTree(nodes)
    pairs = sorted(tree.query_pairs(r=cfg.pair_radius))
    if not pairs:
        return []
    arr = np.asarray(pairs, dtype=np.int64)
    line = _line_params(cfg)
    fwd = assemble_features_batch(
        bundle.features, bundle.road, nodes[arr[:, 0]], nodes[arr[:, 1]],
        line, cfg.use_extended_line,
    )
    bwd = assemble_features_batch(
        bundle.features, bundle.road, nodes[arr[:, 1]], nodes[arr[:, 0]],
        line, cfg.use_extended_line,
    )
    s_fwd = classifier.forward(fwd)
    s_bwd = classifier.forward(bwd)
    cands = [
        EdgeCandidate(int(a), int(b), (float(sf), float(sb)))
        for (a, b), sf, sb in zip(pairs, s_fwd, s_bwd)
    ]
    cands.sort(key=lambda c: (-c.fused, c.a, c.b))
    return cands


def emit_graph(
    nodes: np.ndarray,
    candidates: list[EdgeCandidate],
    t3: float,
    extent: tuple[float, float],
    drop_isolated: bool = True,
) -> RoadGraph:
    """Keep candidates with fused score >= t3 and build the road graph."""
    kept = [(c.a, c.b) for c in candidates if c.fused >= t3]
    if drop_isolated:
        used = sorted({v for e in kept for v in e})
    else:
        used = list(range(len(nodes)))
    remap = {v: i for i, v in enumerate(used)}
    coords = [(float(nodes[v, 0]), float(nodes[v, 1])) for v in used]
    return build_graph(coords, [(remap[a], remap[b]) for a, b in kept], extent)


def _blend_scene(road: ProbabilityMask, keypoint: ProbabilityMask,
                 features: FeatureMap, cfg: RunConfig) -> InferenceBundle:
    """Crop the provider rasters into the patch plan and blend them back.

    With mean blending of crops from a single canvas this is the identity,
    which is exactly the property global NMS relies on.
    """
    h, w = road.height, road.width
    plan = PatchPlan.cover(w, h, cfg.patch_size, cfg.patch_stride_fraction)
    size = plan.patch_size

    def crops(values):
        return [
            (ProbabilityMask(values[oy : oy + size, ox : ox + size]), (ox, oy))
            for ox, oy in plan.offsets
        ]

    road_b = blend_masks(crops(road.values), w, h)
    kp_b = blend_masks(crops(keypoint.values), w, h)
    # features may hold arbitrary finite reals, so blend them directly
    acc = np.zeros_like(features.values)
    cnt = np.zeros((h, w, 1), dtype=np.int64)
    for ox, oy in plan.offsets:
        acc[oy : oy + size, ox : ox + size, :] += features.values[oy : oy + size, ox : ox + size, :]
        cnt[oy : oy + size, ox : ox + size, 0] += 1
    feats_b = FeatureMap(np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0))
    return InferenceBundle(road=road_b, keypoint=kp_b, features=feats_b)


def run_inference(
    road: ProbabilityMask,
    keypoint: ProbabilityMask,
    features: FeatureMap,
    classifier: Classifier,
    thresholds: ThresholdSet,
    cfg: RunConfig,
) -> tuple[RoadGraph, dict]:
    """Masks and features to road graph; returns (graph, diagnostics)."""
    diags: dict = {}
    t0 = time.perf_counter()
    bundle = _blend_scene(road, keypoint, features, cfg)
    t1 = time.perf_counter()
    nodes, tags = extract_nodes(bundle, thresholds, cfg)
    t2 = time.perf_counter()
    cands = score_pairs(nodes, bundle, classifier, cfg)
    t3_t = time.perf_counter()
    graph = emit_graph(
        nodes, cands, thresholds.t3, (road.width, road.height), cfg.drop_isolated_nodes
    )
    t4 = time.perf_counter()
    diags["n_nodes"] = len(nodes)
    diags["n_nodes_keypoint"] = sum(1 for t in tags if t == "keypoint")
    diags["n_nodes_road"] = sum(1 for t in tags if t == "road")
    diags["n_candidates"] = len(cands)
    diags["n_edges"] = graph.num_edges
    diags["timings"] = {
        "blend_s": t1 - t0,
        "extract_s": t2 - t1,
        "score_s": t3_t - t2,
        "emit_s": t4 - t3_t,
    }
    return graph, diags


# ---------------------------------------------------------------------------
# validation-driven threshold search


def _nms_cached(mask: ProbabilityMask, threshold: float, radius: float, cache: dict):
    """NMS result keyed by the set of surviving pixels, so thresholds that
    zero the same pixels share one run."""
    keep = mask.values >= threshold
    key = (radius, np.packbits(keep).tobytes())
    if key not in cache:
        cache[key] = nms_extract(mask, NmsConfig(threshold, radius))
    return cache[key]


def search_thresholds(
    val_scenes: list[tuple[RoadGraph, ProbabilityMask, ProbabilityMask, FeatureMap]],
    classifier: Classifier,
    cfg: RunConfig,
) -> ThresholdSet:
    """Grid search (t1, t2, t3) over {0.05, ..., 0.95} maximizing mean TOPO
    F1 on the validation scenes; ties break toward lower thresholds.

    Identical node sets and edge sets across grid cells are deduplicated, so
    the search evaluates each distinct outcome exactly once per scene.
    """
    if not val_scenes:
        raise ValueError("threshold search needs at least one validation scene")
    step = cfg.threshold_grid_step
    grid = [round(t, 10) for t in np.arange(step, 1.0 - step / 2, step)]
    topo_cfg = TopoConfig(
        seed_interval=cfg.topo_seed_interval,
        propagation_distance=cfg.topo_propagation_distance,
        marker_spacing=cfg.topo_marker_spacing,
        matching_radius=cfg.topo_matching_radius,
    )
    total_f1 = np.zeros((len(grid), len(grid), len(grid)))

    for gt, road, keypoint, features in val_scenes:
        bundle = _blend_scene(road, keypoint, features, cfg)
        evaluator = TopoEvaluator(gt, topo_cfg)
        nms_cache: dict = {}
        v1_sets = [
            _nms_cached(bundle.road, t1, cfg.nms_radius_road, nms_cache) for t1 in grid
        ]
        v2_sets = [
            _nms_cached(bundle.keypoint, t2, cfg.nms_radius_keypoint, nms_cache)
            for t2 in grid
        ]
        node_cache: dict = {}
        f1_cache: dict = {}
        for i1, t1 in enumerate(grid):
            for i2, t2 in enumerate(grid):
                nkey = (id(v1_sets[i1]), id(v2_sets[i2]))
                if nkey not in node_cache:
                    node_cache[nkey] = _merge_and_score(
                        v1_sets[i1], v2_sets[i2], bundle, classifier, cfg
                    )
                nodes, cands = node_cache[nkey]
                fused = np.array([c.fused for c in cands])
                for i3, t3 in enumerate(grid):
                    kept = tuple(k for k in range(len(cands)) if fused[k] >= t3)
                    fkey = (nkey, kept)
                    if fkey not in f1_cache:
                        graph = emit_graph(
                            nodes,
                            [cands[k] for k in kept],
                            -1.0,
                            (road.width, road.height),
                            cfg.drop_isolated_nodes,
                        )
                        f1_cache[fkey] = evaluator.evaluate(graph)[2]
                    total_f1[i1, i2, i3] += f1_cache[fkey]

    best = None
    for i1 in range(len(grid)):
        for i2 in range(len(grid)):
            for i3 in range(len(grid)):
                score = total_f1[i1, i2, i3]
                if best is None or score > best[0] + 1e-12:
                    best = (score, i1, i2, i3)
    _, i1, i2, i3 = best
    return ThresholdSet(t1=grid[i1], t2=grid[i2], t3=grid[i3])


def _merge_and_score(v1, v2, bundle: InferenceBundle, classifier: Classifier, cfg: RunConfig):
    merged: list[tuple[float, float]] = list(v2)
    if v2:
        tree = cKDTree(np.asarray(v2))
        for p in v1:
            if not tree.query_ball_point(p, r=cfg.node_merge_distance - 1e-12):
                merged.append(p)
    else:
        merged.extend(v1)
    nodes = np.asarray(merged, dtype=np.float64).reshape(-1, 2)
    cands = score_pairs(nodes, bundle, classifier, cfg)
    return nodes, cands

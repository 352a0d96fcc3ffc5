"""Procedural road scenes standing in for a vision backbone.

Generates ground-truth graphs (jittered lattices, smooth random curves, or
both), renders clean road/keypoint probability masks from them, and applies
configurable corruption (smooth localization warp, occlusion ellipses, blur,
noise) plus a fixed six-channel feature-map surrogate. Everything is
bit-deterministic in (spec, seed).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .graph import RoadGraph, build_graph, chain_decomposition
from .raster import FeatureMap, ProbabilityMask

__all__ = [
    "SceneSpec",
    "CorruptionSpec",
    "SyntheticScene",
    "generate_graph",
    "render_masks",
    "corrupt",
    "make_scene",
    "FEATURE_CHANNELS",
]

STYLES = ("urban-grid", "rural-curves", "mixed")
FEATURE_CHANNELS = 6
KEYPOINT_SIGMA = 2.0
# on-road keypoint bumps keep this distance from chain ends so an NMS pass
# with radius 8 can never suppress a junction peak
KEYPOINT_JUNCTION_CLEARANCE = 10.0
MIN_JUNCTION_SPACING = 10.0
EDGE_MARGIN = 3.0


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic ground-truth scene.

    ``keypoint_road_interval`` optionally adds keypoint bumps every so many
    pixels along roads in addition to the junction bumps; 0 disables them.
    On-road bumps interleave with road-mask peaks at sub-pairing-radius
    spacing, which makes the extracted graph double-cover those stretches,
    so they default to off.
    """

    extent: int = 256
    style: str = "urban-grid"
    road_width: float = 3.0
    junction_density: float = 250.0  # junctions per 10^6 px^2
    seed: int = 0
    jitter: float = 4.0
    diagonal_prob: float = 0.25
    vertex_spacing: float = 8.0
    keypoint_road_interval: float = 0.0

    def __post_init__(self):
        if self.extent < 128:
            raise ValueError("extent must be >= 128")
        if self.road_width < 1:
            raise ValueError("road width must be >= 1")
        if self.style not in STYLES:
            raise ValueError(f"style must be one of {STYLES}")
        if self.junction_density < 0:
            raise ValueError("junction density must be nonnegative")


@dataclass(frozen=True)
class CorruptionSpec:
    """Mask corruption model; all-zero means identity."""

    occlusion_count: int = 0
    occlusion_size: tuple[float, float] = (8.0, 16.0)
    warp_max_displacement: float = 0.0
    noise_sigma: float = 0.0
    blur_radius: float = 0.0

    def __post_init__(self):
        if self.occlusion_count < 0 or self.warp_max_displacement < 0:
            raise ValueError("corruption magnitudes must be nonnegative")
        if self.noise_sigma < 0 or self.blur_radius < 0:
            raise ValueError("corruption magnitudes must be nonnegative")
        if self.occlusion_size[0] <= 0 or self.occlusion_size[1] < self.occlusion_size[0]:
            raise ValueError("occlusion size range must be positive and ordered")

    def is_identity(self) -> bool:
        return (
            self.occlusion_count == 0
            and self.warp_max_displacement == 0.0
            and self.noise_sigma == 0.0
            and self.blur_radius == 0.0
        )


@dataclass(frozen=True)
class SyntheticScene:
    gt: RoadGraph
    clean_road: ProbabilityMask
    clean_keypoint: ProbabilityMask
    road: ProbabilityMask
    keypoint: ProbabilityMask
    features: FeatureMap
    scene_spec: SceneSpec
    corruption_spec: CorruptionSpec

    @property
    def extent(self) -> int:
        return self.scene_spec.extent


# ---------------------------------------------------------------------------
# ground-truth graph generation


def _lattice(rng, spec: SceneSpec) -> tuple[list, list]:
    extent = spec.extent
    n = max(1, round(math.sqrt(spec.junction_density * (extent / 1000.0) ** 2)))
    spacing = extent / (n + 1)
    coords = []
    for i in range(n):
        for j in range(n):
            x = spacing * (j + 1) + rng.uniform(-spec.jitter, spec.jitter)
            y = spacing * (i + 1) + rng.uniform(-spec.jitter, spec.jitter)
            coords.append((float(np.clip(x, EDGE_MARGIN, extent - EDGE_MARGIN)),
                           float(np.clip(y, EDGE_MARGIN, extent - EDGE_MARGIN))))
    edges = []
    for i in range(n):
        for j in range(n):
            v = i * n + j
            if j + 1 < n:
                edges.append((v, v + 1))
            if i + 1 < n:
                edges.append((v, v + n))
    # one random diagonal per cell, at most, so diagonals never cross each other
    for i in range(n - 1):
        for j in range(n - 1):
            if rng.random() < spec.diagonal_prob:
                v = i * n + j
                if rng.random() < 0.5:
                    edges.append((v, v + n + 1))
                else:
                    edges.append((v + 1, v + n))
    return coords, edges


def _curves(rng, spec: SceneSpec, n_curves: int) -> tuple[list, list]:
    extent = spec.extent
    step = spec.vertex_spacing
    coords: list[tuple[float, float]] = []
    edges: list[tuple[int, int]] = []
    max_steps = int(3 * extent / step)
    for _ in range(n_curves):
        side = rng.integers(0, 4)
        t = rng.uniform(0.15, 0.85) * extent
        m = EDGE_MARGIN
        if side == 0:
            x, y, theta = t, m, math.pi / 2
        elif side == 1:
            x, y, theta = t, extent - m, -math.pi / 2
        elif side == 2:
            x, y, theta = m, t, 0.0
        else:
            x, y, theta = extent - m, t, math.pi
        theta += rng.uniform(-0.5, 0.5)
        amp = rng.uniform(0.005, 0.03)
        freq = rng.uniform(2 * math.pi / 500.0, 2 * math.pi / 120.0)
        phase = rng.uniform(0, 2 * math.pi)
        pts = [(x, y)]
        s = 0.0
        for _ in range(max_steps):
            s += step
            theta += amp * math.sin(freq * s + phase) * step
            nx = pts[-1][0] + step * math.cos(theta)
            ny = pts[-1][1] + step * math.sin(theta)
            if not (m <= nx <= extent - m and m <= ny <= extent - m):
                break
            pts.append((nx, ny))
        if len(pts) < 2:
            continue
        base = len(coords)
        coords.extend(pts)
        edges.extend((base + i, base + i + 1) for i in range(len(pts) - 1))
    return coords, edges


def _segments_cross(p, r, q, s):
    """Proper intersection point of segments p-r and q-s, or None."""
    d1 = (r[0] - p[0], r[1] - p[1])
    d2 = (s[0] - q[0], s[1] - q[1])
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-12:
        return None
    qp = (q[0] - p[0], q[1] - p[1])
    t = (qp[0] * d2[1] - qp[1] * d2[0]) / den
    u = (qp[0] * d1[1] - qp[1] * d1[0]) / den
    eps = 1e-9
    if t < -eps or t > 1 + eps or u < -eps or u > 1 + eps:
        return None
    # crossings at shared endpoints are not proper
    if (t < 1e-7 or t > 1 - 1e-7) and (u < 1e-7 or u > 1 - 1e-7):
        return None
    return (p[0] + t * d1[0], p[1] + t * d1[1], t, u)


def _planarize(coords: list, edges: list, snap_radius: float = 6.0):
    """Split crossing edges at their intersections.

    Intersection points within ``snap_radius`` of an existing vertex are
    snapped onto that vertex (the crossing road takes a small kink) so
    junctions never crowd each other; the pass iterates until no proper
    crossings remain.
    """
    coords = [tuple(map(float, c)) for c in coords]
    edges = [tuple(map(int, e)) for e in edges]
    for _ in range(6):
        pts = np.asarray(coords)
        arr = np.asarray(edges)
        if len(arr) == 0:
            break
        a = pts[arr[:, 0]]
        b = pts[arr[:, 1]]
        lo = np.minimum(a, b) - 1e-9
        hi = np.maximum(a, b) + 1e-9
        splits: dict[int, list] = {}
        found = False
        for i in range(len(arr)):
            overlap = ~(
                (hi[i, 0] < lo[:, 0])
                | (lo[i, 0] > hi[:, 0])
                | (hi[i, 1] < lo[:, 1])
                | (lo[i, 1] > hi[:, 1])
            )
            for j in np.flatnonzero(overlap):
                if j <= i:
                    continue
                if len(set(edges[i]) & set(edges[j])):
                    continue
                hit = _segments_cross(a[i], b[i], a[j], b[j])
                if hit is None:
                    continue
                found = True
                x, y, t, u = hit
                # snap onto a nearby existing vertex to keep junctions apart
                d = np.hypot(pts[:, 0] - x, pts[:, 1] - y)
                near = int(np.argmin(d))
                if d[near] <= snap_radius:
                    vid = near
                else:
                    coords.append((x, y))
                    pts = np.asarray(coords)
                    vid = len(coords) - 1
                splits.setdefault(i, []).append((t, vid))
                splits.setdefault(int(j), []).append((u, vid))
        if not found:
            break
        new_edges = []
        for k, (va, vb) in enumerate(edges):
            if k not in splits:
                new_edges.append((va, vb))
                continue
            stops = sorted(splits[k])
            seq = [va] + [vid for _, vid in stops] + [vb]
            for u0, v0 in zip(seq[:-1], seq[1:]):
                if u0 != v0:
                    new_edges.append((u0, v0))
        edges = new_edges
    # drop exact duplicates and degenerate edges
    dedup = []
    seen = set()
    for va, vb in edges:
        key = (min(va, vb), max(va, vb))
        if va != vb and key not in seen:
            seen.add(key)
            dedup.append(key)
    return coords, dedup


def _keep_largest_components(coords, edges, max_components=3):
    n = len(coords)
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    comp: dict[int, list] = {}
    for a, b in edges:
        comp.setdefault(find(a), []).append((a, b))
    sized = sorted(
        comp.items(),
        key=lambda kv: (-len({v for e in kv[1] for v in e}), kv[0]),
    )
    kept_edges = [e for _, es in sized[:max_components] for e in es]
    used = sorted({v for e in kept_edges for v in e})
    remap = {v: i for i, v in enumerate(used)}
    return [coords[v] for v in used], [(remap[a], remap[b]) for a, b in kept_edges]


def _subdivide(coords, edges, spacing):
    coords = list(coords)
    out = []
    for a, b in edges:
        ax, ay = coords[a]
        bx, by = coords[b]
        length = math.hypot(bx - ax, by - ay)
        pieces = max(1, round(length / spacing))
        prev = a
        for i in range(1, pieces):
            t = i / pieces
            coords.append((ax + t * (bx - ax), ay + t * (by - ay)))
            out.append((prev, len(coords) - 1))
            prev = len(coords) - 1
        out.append((prev, b))
    return coords, out


def _min_junction_spacing(graph: RoadGraph) -> float:
    ids = np.flatnonzero(graph.degrees != 2)
    if len(ids) < 2:
        return math.inf
    xs, ys = graph.xs[ids], graph.ys[ids]
    best = math.inf
    for i in range(len(ids)):
        d = np.hypot(xs - xs[i], ys - ys[i])
        d[i] = math.inf
        best = min(best, float(d.min()))
    return best


def generate_graph(spec: SceneSpec) -> RoadGraph:
    """Procedural ground-truth road graph, deterministic per (spec, seed).

    The structural layout is planarized (crossings become junction vertices),
    trimmed to at most three connected components and subdivided so vertices
    sit roughly ``vertex_spacing`` apart. Generation retries with derived
    seeds until junctions are at least MIN_JUNCTION_SPACING apart.
    """
    if spec.junction_density == 0:
        warnings.warn("junction density 0 produces an empty graph")
        return build_graph([], [], (spec.extent, spec.extent))

    last = None
    for attempt in range(24):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, attempt, 0x5EED]))
        if spec.style == "urban-grid":
            coords, edges = _lattice(rng, spec)
        elif spec.style == "rural-curves":
            n_curves = max(2, round(spec.junction_density * (spec.extent / 1000.0) ** 2 / 4))
            coords, edges = _curves(rng, spec, n_curves)
        else:
            gspec = replace(spec, junction_density=spec.junction_density * 0.6)
            coords, edges = _lattice(rng, gspec)
            ccoords, cedges = _curves(rng, spec, 2)
            base = len(coords)
            coords = coords + ccoords
            edges = edges + [(a + base, b + base) for a, b in cedges]
        coords, edges = _planarize(coords, edges)
        coords, edges = _keep_largest_components(coords, edges)
        if not edges:
            continue
        coords, edges = _subdivide(coords, edges, spec.vertex_spacing)
        graph = build_graph(coords, edges, (spec.extent, spec.extent))
        last = graph
        if _min_junction_spacing(graph) >= MIN_JUNCTION_SPACING and graph.total_length() >= spec.extent:
            return graph
    warnings.warn("graph generation exhausted retries; returning last attempt")
    return last if last is not None else build_graph([], [], (spec.extent, spec.extent))


# ---------------------------------------------------------------------------
# mask rendering


def _distance_field(graph: RoadGraph, extent: int, reach: float) -> np.ndarray:
    dist = np.full((extent, extent), np.inf)
    for k in range(graph.num_edges):
        a, b = graph.edges[k]
        ax, ay = graph.xs[a], graph.ys[a]
        bx, by = graph.xs[b], graph.ys[b]
        x0 = max(0, int(math.floor(min(ax, bx) - reach)))
        x1 = min(extent - 1, int(math.ceil(max(ax, bx) + reach)))
        y0 = max(0, int(math.floor(min(ay, by) - reach)))
        y1 = min(extent - 1, int(math.ceil(max(ay, by) + reach)))
        if x0 > x1 or y0 > y1:
            continue
        ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        vx, vy = bx - ax, by - ay
        den = vx * vx + vy * vy
        if den == 0:
            d = np.hypot(xs - ax, ys - ay)
        else:
            t = np.clip(((xs - ax) * vx + (ys - ay) * vy) / den, 0.0, 1.0)
            d = np.hypot(xs - (ax + t * vx), ys - (ay + t * vy))
        np.minimum(dist[y0 : y1 + 1, x0 : x1 + 1], d, out=dist[y0 : y1 + 1, x0 : x1 + 1])
    return dist


def _keypoint_centers(graph: RoadGraph, road_interval: float = 0.0) -> np.ndarray:
    """Junction vertices (degree != 2), optionally plus points every
    ``road_interval`` px along chains.

    On-road points keep KEYPOINT_JUNCTION_CLEARANCE distance from every
    junction (their own chain's ends and any other chain passing close by)
    so that suppression with radius 8 always recovers the junctions first.
    """
    junctions = [
        (float(graph.xs[v]), float(graph.ys[v]))
        for v in range(graph.num_vertices)
        if graph.degrees[v] != 2
    ]
    centers = list(junctions)
    if road_interval <= 0:
        return np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    jarr = np.asarray(junctions, dtype=np.float64).reshape(-1, 2)

    def clear_of_junctions(x: float, y: float) -> bool:
        if not len(jarr):
            return True
        d = np.hypot(jarr[:, 0] - x, jarr[:, 1] - y)
        return bool(d.min() >= KEYPOINT_JUNCTION_CLEARANCE)

    for path in chain_decomposition(graph):
        seg_len = [
            math.hypot(graph.xs[u] - graph.xs[v], graph.ys[u] - graph.ys[v])
            for u, v in zip(path[:-1], path[1:])
        ]
        total = sum(seg_len)
        marks = np.arange(
            road_interval,
            total - KEYPOINT_JUNCTION_CLEARANCE + 1e-9,
            road_interval,
        )
        run, si = 0.0, 0
        for s in marks:
            while si < len(seg_len) and run + seg_len[si] < s:
                run += seg_len[si]
                si += 1
            if si >= len(seg_len):
                break
            t = (s - run) / seg_len[si]
            u, v = path[si], path[si + 1]
            x = float(graph.xs[u] + t * (graph.xs[v] - graph.xs[u]))
            y = float(graph.ys[u] + t * (graph.ys[v] - graph.ys[u]))
            if clear_of_junctions(x, y):
                centers.append((x, y))
    return np.asarray(centers, dtype=np.float64).reshape(-1, 2)


def render_masks(graph: RoadGraph, spec: SceneSpec) -> tuple[ProbabilityMask, ProbabilityMask]:
    """Clean road and keypoint masks from a ground-truth graph.

    The road mask is 1 within half the road width of any edge and falls off
    linearly to 0 over the next 2 px. The keypoint mask is the pointwise max
    of unit-peak Gaussian bumps (sigma 2) at junctions and at points sampled
    every 32 px along roads.
    """
    extent = spec.extent
    if graph.is_empty() or graph.num_edges == 0:
        zero = ProbabilityMask(np.zeros((extent, extent)))
        return zero, zero
    hw = spec.road_width / 2.0
    dist = _distance_field(graph, extent, hw + 2.0 + 1.0)
    road = np.where(dist <= hw, 1.0, np.clip((hw + 2.0 - dist) / 2.0, 0.0, 1.0))

    kp = np.zeros((extent, extent))
    sigma = KEYPOINT_SIGMA
    reach = int(math.ceil(4 * sigma))
    for cx, cy in _keypoint_centers(graph, spec.keypoint_road_interval):
        x0, x1 = max(0, int(cx) - reach), min(extent, int(cx) + reach + 1)
        y0, y1 = max(0, int(cy) - reach), min(extent, int(cy) + reach + 1)
        ys, xs = np.mgrid[y0:y1, x0:x1]
        bump = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma * sigma))
        np.maximum(kp[y0:y1, x0:x1], bump, out=kp[y0:y1, x0:x1])
    return ProbabilityMask(road), ProbabilityMask(kp)


# ---------------------------------------------------------------------------
# corruption and the feature surrogate


def _displacement_field(rng, shape, max_disp: float) -> np.ndarray:
    """Smooth random field as a sum of 8 low-frequency sinusoids, rescaled so
    the maximum displacement magnitude equals ``max_disp`` exactly."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = np.zeros(shape)
    dy = np.zeros(shape)
    scale = max(h, w)
    for _ in range(8):
        wavelength = rng.uniform(scale / 4.0, scale)
        wave_angle = rng.uniform(0, 2 * math.pi)
        kx = math.cos(wave_angle) / wavelength
        ky = math.sin(wave_angle) / wavelength
        phase = rng.uniform(0, 2 * math.pi)
        amp_angle = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.5, 1.0)
        s = np.sin(2 * math.pi * (kx * xs + ky * ys) + phase)
        dx += amp * math.cos(amp_angle) * s
        dy += amp * math.sin(amp_angle) * s
    mag = np.hypot(dx, dy)
    peak = mag.max()
    if peak > 0:
        dx *= max_disp / peak
        dy *= max_disp / peak
    return np.stack([dx, dy], axis=-1)


def _warp(values: np.ndarray, disp: np.ndarray) -> np.ndarray:
    h, w = values.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = np.clip(xs - disp[..., 0], 0.0, w - 1.0)
    sy = np.clip(ys - disp[..., 1], 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    top = values[y0, x0] * (1 - fx) + values[y0, x1] * fx
    bot = values[y1, x0] * (1 - fx) + values[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _occlusion_factor(rng, shape, cspec: CorruptionSpec) -> np.ndarray:
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    factor = np.ones(shape)
    lo, hi = cspec.occlusion_size
    for _ in range(cspec.occlusion_count):
        cx = rng.uniform(0, w)
        cy = rng.uniform(0, h)
        sa = rng.uniform(lo, hi)
        sb = rng.uniform(lo, hi)
        ang = rng.uniform(0, math.pi)
        ca, si = math.cos(ang), math.sin(ang)
        u = (xs - cx) * ca + (ys - cy) * si
        v = -(xs - cx) * si + (ys - cy) * ca
        e = np.hypot(u / sa, v / sb)
        # 0 inside the ellipse, ramping to 1 over a ~2 px soft edge
        edge = np.clip((e - 1.0) * min(sa, sb) / 2.0, 0.0, 1.0)
        factor = np.minimum(factor, edge)
    return factor


def corrupt(
    clean_road: ProbabilityMask,
    clean_keypoint: ProbabilityMask,
    cspec: CorruptionSpec,
    seed: int,
) -> tuple[ProbabilityMask, ProbabilityMask, FeatureMap]:
    """Apply warp, occlusion, blur and noise (in that order) to both masks
    and build the six-channel feature surrogate from the results.

    With an all-zero corruption spec the masks pass through bit-identical.
    """
    ss = np.random.SeedSequence([seed, 0xC0DE])
    warp_ss, occl_ss, noise_ss, feat_ss = ss.spawn(4)
    road = clean_road.values.copy()
    kp = clean_keypoint.values.copy()
    shape = road.shape

    if cspec.warp_max_displacement > 0:
        disp = _displacement_field(np.random.default_rng(warp_ss), shape,
                                   cspec.warp_max_displacement)
        road = _warp(road, disp)
        kp = _warp(kp, disp)
    if cspec.occlusion_count > 0:
        factor = _occlusion_factor(np.random.default_rng(occl_ss), shape, cspec)
        road *= factor
        kp *= factor
    if cspec.blur_radius > 0:
        road = gaussian_filter(road, sigma=cspec.blur_radius, mode="nearest")
        kp = gaussian_filter(kp, sigma=cspec.blur_radius, mode="nearest")
    if cspec.noise_sigma > 0:
        nrng = np.random.default_rng(noise_ss)
        road = road + nrng.normal(0, cspec.noise_sigma, shape)
        kp = kp + nrng.normal(0, cspec.noise_sigma, shape)
    road = np.clip(road, 0.0, 1.0)
    kp = np.clip(kp, 0.0, 1.0)

    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    frng = np.random.default_rng(feat_ss)
    feats = np.stack(
        [
            road,
            kp,
            gaussian_filter(road, sigma=4.0, mode="nearest"),
            xs / w,
            ys / h,
            frng.random(shape),
        ],
        axis=-1,
    )
    return ProbabilityMask(road), ProbabilityMask(kp), FeatureMap(feats)


def make_scene(spec: SceneSpec, cspec: CorruptionSpec) -> SyntheticScene:
    """Full scene: graph, clean renders, corrupted masks, feature map."""
    gt = generate_graph(spec)
    clean_road, clean_kp = render_masks(gt, spec)
    road, kp, feats = corrupt(clean_road, clean_kp, cspec, spec.seed)
    return SyntheticScene(
        gt=gt,
        clean_road=clean_road,
        clean_keypoint=clean_kp,
        road=road,
        keypoint=kp,
        features=feats,
        scene_spec=spec,
        corruption_spec=cspec,
    )

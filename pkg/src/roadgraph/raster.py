"""Raster grids and the mask-space primitives of the extraction head.

Holds the probability-mask and feature-map containers plus the operations
that read them: greedy peak extraction (NMS), bilinear point sampling, the
widened line sampler used by the pair classifier, and tile blending.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ProbabilityMask",
    "FeatureMap",
    "NmsConfig",
    "LineGeometry",
    "nms_extract",
    "sample_bilinear",
    "sample_bilinear_batch",
    "sample_extended_line",
    "blend_masks",
]


@dataclass(frozen=True)
class ProbabilityMask:
    """H x W grid of per-pixel probabilities in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("mask must be a 2-D grid with positive dimensions")
        if not np.all(np.isfinite(v)):
            raise ValueError("mask values must be finite")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FeatureMap:
    """H x W x C grid of finite real-valued per-pixel features."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] < 1:
            raise ValueError("feature map must be H x W x C with C >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class NmsConfig:
    threshold: float
    radius: float

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.radius <= 0:
            raise ValueError("radius must be positive")


@dataclass(frozen=True)
class LineGeometry:
    """Sampling geometry for a node pair: segment plus outward extensions.

    ``samples_per_extension`` points are read beyond each endpoint (spread
    uniformly over ``extension_length``), ``samples_on_segment`` points on
    the segment itself including both endpoints. Each sample averages
    ``line_width`` bilinear reads at unit perpendicular offsets, mimicking a
    road of that pixel width.
    """

    a: tuple[float, float]
    b: tuple[float, float]
    extension_length: float = 8.0
    line_width: int = 3
    samples_per_extension: int = 15
    samples_on_segment: int = 20

    def __post_init__(self):
        if tuple(self.a) == tuple(self.b):
            raise ValueError("line endpoints must differ")
        if self.extension_length < 0:
            raise ValueError("extension length must be nonnegative")
        if self.line_width < 1 or self.line_width % 2 == 0:
            raise ValueError("line width must be odd and >= 1")
        if self.samples_per_extension < 1 or self.samples_on_segment < 1:
            raise ValueError("sample counts must be >= 1")


def nms_extract(mask: ProbabilityMask, cfg: NmsConfig) -> list[tuple[float, float]]:
    """Greedy peak extraction with a Euclidean suppression disk.

    Pixels below the threshold are zeroed, then repeatedly the global
    maximum is recorded and a disk of the configured radius around it is
    zeroed, until nothing remains. Ties on the maximum go to the smallest
    (row, col). Returns (x, y) points in extraction order, so any two
    returned points are more than ``radius`` apart.
    """
    work = mask.values.copy()
    work[work < cfg.threshold] = 0.0
    h, w = work.shape
    r = cfg.radius
    ri = int(math.floor(r))
    dy, dx = np.mgrid[-ri : ri + 1, -ri : ri + 1]
    disk = dy * dy + dx * dx <= r * r
    points: list[tuple[float, float]] = []
    flat = work.ravel()
    while True:
        idx = int(np.argmax(flat))
        if flat[idx] <= 0.0:
            break
        row, col = divmod(idx, w)
        points.append((float(col), float(row)))
        y0, y1 = max(0, row - ri), min(h, row + ri + 1)
        x0, x1 = max(0, col - ri), min(w, col + ri + 1)
        sub = disk[y0 - row + ri : y1 - row + ri, x0 - col + ri : x1 - col + ri]
        work[y0:y1, x0:x1][sub] = 0.0
    return points


def _clamped_bilinear(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear reads at continuous (x, y); coordinates clamp to the grid."""
    h, w = grid.shape[:2]
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if grid.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = grid[y0, x0]
    v01 = grid[y0, x1]
    v10 = grid[y1, x0]
    v11 = grid[y1, x1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def sample_bilinear(grid: ProbabilityMask | FeatureMap, p: tuple[float, float]):
    """Bilinear interpolation at point p; scalar for masks, C-vector for
    feature maps. Out-of-grid points are clamped to the border, never an
    error."""
    xs = np.asarray([p[0]], dtype=np.float64)
    ys = np.asarray([p[1]], dtype=np.float64)
    out = _clamped_bilinear(grid.values, xs, ys)
    if isinstance(grid, FeatureMap):
        return out[0]
    return float(out[0])


def sample_bilinear_batch(grid: ProbabilityMask | FeatureMap, points: np.ndarray) -> np.ndarray:
    """Vectorized form of sample_bilinear over an (N, 2) array of (x, y)."""
    pts = np.asarray(points, dtype=np.float64)
    return _clamped_bilinear(grid.values, pts[..., 0], pts[..., 1])


def extended_line_points(geom: LineGeometry) -> np.ndarray:
    """Center coordinates of every sample, ordered
    [extension beyond a (outward), segment a to b, extension beyond b
    (outward)], shape (2n + m, 2)."""
    a = np.asarray(geom.a, dtype=np.float64)
    b = np.asarray(geom.b, dtype=np.float64)
    u = b - a
    u /= np.hypot(*u)
    n = geom.samples_per_extension
    m = geom.samples_on_segment
    steps = np.arange(1, n + 1, dtype=np.float64) * (geom.extension_length / n)
    ext_a = a[None, :] - steps[:, None] * u[None, :]
    ext_b = b[None, :] + steps[:, None] * u[None, :]
    if m == 1:
        ts = np.array([0.0])
    else:
        ts = np.linspace(0.0, 1.0, m)
    seg = a[None, :] + ts[:, None] * (b - a)[None, :]
    return np.concatenate([ext_a, seg, ext_b], axis=0)


def sample_extended_line(mask: ProbabilityMask, geom: LineGeometry) -> np.ndarray:
    """Mask profile along a node pair's segment and outward extensions.

    Each of the 2n + m sample positions is the mean of ``line_width``
    bilinear reads taken at perpendicular pixel offsets, so a 3-px-wide road
    registers fully even when the segment rides its centerline. Reads beyond
    the mask borders clamp.
    """
    centers = extended_line_points(geom)
    a = np.asarray(geom.a, dtype=np.float64)
    b = np.asarray(geom.b, dtype=np.float64)
    u = b - a
    u /= np.hypot(*u)
    perp = np.array([-u[1], u[0]])
    half = (geom.line_width - 1) // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    pts = centers[:, None, :] + offsets[None, :, None] * perp[None, None, :]
    vals = _clamped_bilinear(mask.values, pts[..., 0], pts[..., 1])
    return vals.mean(axis=1)


def blend_masks(
    tiles: list[tuple[ProbabilityMask, tuple[int, int]]],
    width: int,
    height: int,
) -> ProbabilityMask:
    """Assemble per-patch masks onto a canvas by mean over overlapping
    contributions; pixels covered by no tile are 0. Offsets are (x, y) of
    each tile's top-left corner and every tile must fit in the canvas."""
    acc = np.zeros((height, width), dtype=np.float64)
    cnt = np.zeros((height, width), dtype=np.int64)
    for i, (tile, (ox, oy)) in enumerate(tiles):
        th, tw = tile.values.shape
        if ox < 0 or oy < 0 or ox + tw > width or oy + th > height:
            raise ValueError(f"tile {i} at ({ox}, {oy}) size ({tw}x{th}) exceeds canvas")
        acc[oy : oy + th, ox : ox + tw] += tile.values
        cnt[oy : oy + th, ox : ox + tw] += 1
    out = np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)
    return ProbabilityMask(out)

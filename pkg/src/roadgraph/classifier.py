"""Pairwise road-connectivity classifier.

A small fully-connected network (tanh hidden layers, logistic output)
written directly in numpy with analytic gradients and an Adam optimizer, so
training is exactly reproducible and the gradients can be verified against
finite differences. Feature vectors concatenate the feature-map reads at the
two nodes with the widened mask profile along their connecting line
([source | target | line]); the line block is dropped when extended-line
features are disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .raster import (
    FeatureMap,
    LineGeometry,
    ProbabilityMask,
    extended_line_points,
    sample_bilinear_batch,
)

__all__ = [
    "LineSamplingParams",
    "PairFeatures",
    "Classifier",
    "TrainState",
    "ThresholdSet",
    "assemble_features",
    "assemble_features_batch",
    "feature_width",
    "bce_loss",
    "backward_and_step",
]

BCE_EPS = 1e-7


@dataclass(frozen=True)
class LineSamplingParams:
    """Geometry knobs of the extended-line feature block."""

    extension_length: float = 8.0
    line_width: int = 3
    samples_per_extension: int = 15
    samples_on_segment: int = 20

    @property
    def block_width(self) -> int:
        return 2 * self.samples_per_extension + self.samples_on_segment


@dataclass(frozen=True)
class ThresholdSet:
    """Binary decision thresholds: road-mask NMS, keypoint-mask NMS, edge score."""

    t1: float = 0.5
    t2: float = 0.5
    t3: float = 0.5

    def __post_init__(self):
        for name in ("t1", "t2", "t3"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass(frozen=True)
class PairFeatures:
    source_feature: np.ndarray
    target_feature: np.ndarray
    line_samples: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.source_feature, self.target_feature, self.line_samples])


def feature_width(channels: int, line: LineSamplingParams, use_extended_line: bool) -> int:
    return 2 * channels + (line.block_width if use_extended_line else 0)


def assemble_features(
    featmap: FeatureMap,
    road_mask: ProbabilityMask,
    source: tuple[float, float],
    target: tuple[float, float],
    line: LineSamplingParams = LineSamplingParams(),
    use_extended_line: bool = True,
) -> PairFeatures:
    """Feature vector for one ordered (source, target) pair."""
    batch = assemble_features_batch(
        featmap, road_mask, np.asarray([source]), np.asarray([target]), line,
        use_extended_line,
    )
    c = featmap.channels
    vec = batch[0]
    return PairFeatures(vec[:c], vec[c : 2 * c], vec[2 * c :])


def assemble_features_batch(
    featmap: FeatureMap,
    road_mask: ProbabilityMask,
    sources: np.ndarray,
    targets: np.ndarray,
    line: LineSamplingParams = LineSamplingParams(),
    use_extended_line: bool = True,
) -> np.ndarray:
    """(P, 2C [+ 2n+m]) feature matrix for P ordered pairs."""
    sources = np.asarray(sources, dtype=np.float64).reshape(-1, 2)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    src_feat = sample_bilinear_batch(featmap, sources)
    tgt_feat = sample_bilinear_batch(featmap, targets)
    if not use_extended_line:
        return np.concatenate([src_feat, tgt_feat], axis=1)

    n = line.samples_per_extension
    m = line.samples_on_segment
    d = targets - sources
    norm = np.hypot(d[:, 0], d[:, 1])
    safe = np.where(norm > 0, norm, 1.0)
    u = d / safe[:, None]
    perp = np.stack([-u[:, 1], u[:, 0]], axis=1)
    steps = np.arange(1, n + 1, dtype=np.float64) * (line.extension_length / n)
    ext_a = sources[:, None, :] - steps[None, :, None] * u[:, None, :]
    ext_b = targets[:, None, :] + steps[None, :, None] * u[:, None, :]
    ts = np.linspace(0.0, 1.0, m) if m > 1 else np.array([0.0])
    seg = sources[:, None, :] + ts[None, :, None] * d[:, None, :]
    centers = np.concatenate([ext_a, seg, ext_b], axis=1)  # (P, 2n+m, 2)
    half = (line.line_width - 1) // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    pts = centers[:, :, None, :] + offsets[None, None, :, None] * perp[:, None, None, :]
    vals = sample_bilinear_batch(road_mask, pts)
    line_block = vals.mean(axis=2)
    return np.concatenate([src_feat, tgt_feat, line_block], axis=1)


class Classifier:
    """Feed-forward net [D, H1, H2, 1]: tanh hiddens, logistic output.

    Initialization is symmetric uniform with fan-in scaling, fully seeded.
    """

    def __init__(self, input_dim: int, hidden: tuple[int, ...] = (64, 64), seed: int = 0):
        if input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        self.sizes = [int(input_dim)] + [int(h) for h in hidden] + [1]
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x11A5]))
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def _forward_full(self, x: np.ndarray):
        acts = [x]
        h = x
        last = len(self.weights) - 1
        z_out = None
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.tanh(z)
                acts.append(h)
            else:
                z_out = z
        return acts, z_out

    def forward(self, features: np.ndarray) -> np.ndarray | float:
        """Probability of a road between the pair(s); (P,) for a batch,
        scalar for a single vector."""
        x = np.asarray(features, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.input_dim:
            raise ValueError(
                f"feature width {x.shape[1]} does not match input layer {self.input_dim}"
            )
        _, z = self._forward_full(x)
        p = 1.0 / (1.0 + np.exp(-z[:, 0]))
        return float(p[0]) if single else p

    def gradients(self, x: np.ndarray, y: np.ndarray):
        """Analytic gradient of the mean binary cross-entropy over the batch.

        Returns (loss, [dW1, db1, dW2, db2, ...]).
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        acts, z = self._forward_full(x)
        p = 1.0 / (1.0 + np.exp(-z[:, 0]))
        loss = bce_loss(p, y)
        batch = x.shape[0]
        delta = ((p - y) / batch)[:, None]  # dL/dz at the output
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            a_prev = acts[i]
            gw = a_prev.T @ delta
            gb = delta.sum(axis=0)
            grads.append(gb)
            grads.append(gw)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        grads.reverse()
        return loss, grads


@dataclass
class TrainState:
    """Adam moments and step counter; shaped like the classifier parameters."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure_shapes(self, params: list[np.ndarray]):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]


def bce_loss(predicted: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy; predictions clamped to [eps, 1 - eps]."""
    p = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError("prediction and label lengths differ")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def backward_and_step(
    classifier: Classifier,
    state: TrainState,
    features: np.ndarray,
    labels: np.ndarray,
) -> float:
    """One Adam update from the analytic gradient; returns the batch loss.

    Aborts with a diagnostic if the loss or any gradient is non-finite.
    """
    loss, grads = classifier.gradients(features, labels)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite training loss {loss}")
    params = classifier.parameters()
    state.ensure_shapes(params)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient encountered")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return loss

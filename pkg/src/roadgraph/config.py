"""Run configuration: every knob of the extraction head in one place.

Defaults follow the reference operating point (512-px patches, 512 sources
per patch, 16/8 px sampling radii, 8-px extensions sampled 15 times per end
and 20 times on the segment at width 3, NMS radii 16/8, Adam learning rate
0.001). Unknown keys in a config file are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

__all__ = ["RunConfig", "config_hash"]


@dataclass(frozen=True)
class RunConfig:
    # patching
    patch_size: int = 512
    patch_stride_fraction: float = 0.75
    # pair sampling
    num_sources: int = 512
    gather_radius: float = 16.0
    resample_radius: float = 8.0
    positive_path_budget: float = 32.0
    positive_stretch_factor: float = 1.2
    # extended-line geometry
    extension_length: float = 8.0
    line_width: int = 3
    samples_per_extension: int = 15
    samples_on_segment: int = 20
    # node extraction
    nms_radius_road: float = 16.0
    nms_radius_keypoint: float = 8.0
    node_merge_distance: float = 4.0
    # classifier and training
    hidden_sizes: tuple[int, ...] = (64, 64)
    learning_rate: float = 0.001
    epochs: int = 60
    use_resampling: bool = True
    use_extended_line: bool = True
    # inference
    pair_radius: float = 22.0
    drop_isolated_nodes: bool = True
    # threshold search
    threshold_grid_step: float = 0.05
    # evaluation
    topo_seed_interval: float = 50.0
    topo_propagation_distance: float = 300.0
    topo_marker_spacing: float = 5.0
    topo_matching_radius: float = 8.0
    apls_snap_radius: float = 8.0
    apls_max_control_pairs: int = 500
    apls_injection_interval: float = 50.0

    def __post_init__(self):
        if isinstance(self.hidden_sizes, list):
            object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        if self.patch_size < 1 or not 0 < self.patch_stride_fraction <= 1:
            raise ValueError("invalid patch plan parameters")
        if not self.gather_radius > self.resample_radius > 0:
            raise ValueError("need gather_radius > resample_radius > 0")
        if self.line_width < 1 or self.line_width % 2 == 0:
            raise ValueError("line width must be odd and >= 1")
        if min(self.samples_per_extension, self.samples_on_segment) < 1:
            raise ValueError("sample counts must be >= 1")
        if min(self.nms_radius_road, self.nms_radius_keypoint) <= 0:
            raise ValueError("NMS radii must be positive")
        if self.learning_rate <= 0 or self.epochs < 1:
            raise ValueError("invalid training parameters")
        if self.pair_radius <= 0 or self.positive_path_budget <= 0:
            raise ValueError("invalid pairing parameters")
        if not 0 < self.threshold_grid_step < 1:
            raise ValueError("invalid threshold grid step")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def config_hash(cfg: RunConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()

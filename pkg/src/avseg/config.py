"""Run configuration: schema-validated desk-scale defaults for every switch."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


class ConfigurationError(ValueError):
    """Unknown key, bad type, or out-of-range configuration value."""


FUSION_MODES = ("none", "visual_only", "audio_only", "bilateral")
QUERY_MODES = ("all", "add")
CONSISTENCY_SOURCES = ("probs", "logits")
ANNOTATION_MODES = ("all", "first")


@dataclass
class RunConfig:
    # clip geometry
    frames: int = 3                      # T
    height: int = 32
    width: int = 32
    num_classes: int = 3                 # K_c (real classes, background excluded)

    # model widths
    audio_dim: int = 16                  # D
    embed_dim: int = 32                  # d, shared attention width
    pixel_dim: int = 32                  # C, pixel-decoder output width
    stage_channels: tuple = (16, 32, 64, 128)
    num_queries: int = 8                 # N_q
    decoder_rounds: int = 3              # L; 3L decoder layers in total

    # ablation switches
    use_siam: bool = True
    shared_weights: bool = False
    fusion_mode: str = "bilateral"
    query_mode: str = "add"
    per_frame_attention: bool = False
    consistency_source: str = "probs"
    annotations: str = "all"             # "first" = first-frame-only supervision

    # loss weights
    lambda_cls: float = 2.0
    lambda_mask: float = 5.0
    lambda_ada: float = 10.0
    no_object_weight: float = 0.1
    background_threshold: float | None = None   # default 0.02

    # data generation
    mask_capacity: int = 100             # palette / padded proposal capacity
    audio_noise: float = 0.3
    pixel_noise: float = 0.1
    clutter: int = 2
    proposal_perturb: int = 2

    # optimization
    seed: int = 0
    iterations: int = 2000
    batch_size: int = 4
    learning_rate: float = 1e-3
    lr_schedule: str = "constant"        # "constant" or "cosine" (decay to 0)
    weight_decay: float = 0.05
    log_every: int = 50

    def __post_init__(self):
        if self.height % 32 or self.width % 32:
            raise ConfigurationError(
                f"height/width must be divisible by 32, got {self.height}x{self.width}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigurationError(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.query_mode not in QUERY_MODES:
            raise ConfigurationError(f"unknown query_mode {self.query_mode!r}")
        if self.consistency_source not in CONSISTENCY_SOURCES:
            raise ConfigurationError(
                f"unknown consistency_source {self.consistency_source!r}")
        if self.annotations not in ANNOTATION_MODES:
            raise ConfigurationError(f"unknown annotations {self.annotations!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigurationError(f"unknown lr_schedule {self.lr_schedule!r}")
        if len(self.stage_channels) != 4:
            raise ConfigurationError("stage_channels must list exactly 4 widths")
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        for name in ("lambda_cls", "lambda_mask", "lambda_ada"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.embed_dim % 4:
            raise ConfigurationError("embed_dim must be a multiple of 4 "
                                     "(paired sine/cosine positional channels)")
        for name in ("frames", "num_classes", "num_queries", "decoder_rounds",
                     "iterations", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    @property
    def bg_threshold(self) -> float:
        if self.background_threshold is not None:
            return self.background_threshold
        return 0.02

    @property
    def num_layers(self) -> int:
        return 3 * self.decoder_rounds

    @property
    def consistency_layer(self) -> int:
        """Deep-supervision layer whose masks feed the consistency loss."""
        return self.num_layers // 2

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        coerced = {}
        for key, value in raw.items():
            field = known[key]
            if field.type in ("int", int) and not isinstance(value, bool) \
                    and isinstance(value, (int, float)) and float(value).is_integer():
                value = int(value)
            coerced[key] = value
        try:
            return cls(**coerced)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["stage_channels"] = list(self.stage_channels)
        return out

    def to_file(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

"""Twin image/maskige encoders and channel-weighted feature fusion.

Each encoder is a small four-stage conv pyramid: a stride-4 stem followed by
three stride-2 stages, so stage i emits (T, C_i, H/2^{i+1}, W/2^{i+1}).  The
maskige branch is merged into the visual branch per stage by gating the
maskige features with a learned linear map of their pooled channel statistics
and adding the result to the visual features.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .params import ParamStore
from .tensor import DimensionError, Tensor


@dataclass
class EncoderConfig:
    stage_channels: tuple = (16, 32, 64, 128)
    shared_weights: bool = False
    in_channels: int = 3


class SiamEncoder:
    """Image encoder plus (optionally weight-shared) maskige encoder."""

    def __init__(self, cfg: EncoderConfig, store: ParamStore, use_siam: bool = True):
        self.cfg = cfg
        self.use_siam = use_siam
        self._build_branch(store, "enc_v")
        if use_siam:
            if not cfg.shared_weights:
                self._build_branch(store, "enc_m")
            for i, c in enumerate(cfg.stage_channels):
                store.linear(f"fuse/w{i + 1}", c, c)
        self.store = store

    def _build_branch(self, store: ParamStore, prefix: str):
        c = self.cfg.stage_channels
        store.conv(f"{prefix}/stem", c[0], self.cfg.in_channels, 5)
        store.zeros(f"{prefix}/stem_b", (c[0],))
        store.conv(f"{prefix}/s1c2", c[0], c[0], 3)
        store.zeros(f"{prefix}/s1c2_b", (c[0],))
        for i in range(1, 4):
            store.conv(f"{prefix}/s{i + 1}c1", c[i], c[i - 1], 3)
            store.zeros(f"{prefix}/s{i + 1}c1_b", (c[i],))
            store.conv(f"{prefix}/s{i + 1}c2", c[i], c[i], 3)
            store.zeros(f"{prefix}/s{i + 1}c2_b", (c[i],))

    def _branch_prefix(self, which: str) -> str:
        if which == "image" or self.cfg.shared_weights:
            return "enc_v"
        return "enc_m"

    def encode(self, x: Tensor, which: str) -> list[Tensor]:
        """Four-stage pyramid for a (B, 3, H, W) frame or maskige batch."""
        if x.ndim != 4:
            raise DimensionError(f"encoder expects (B,3,H,W), got {x.shape}")
        if x.shape[-2] % 32 or x.shape[-1] % 32:
            raise DimensionError(
                f"spatial size must be divisible by 32, got {x.shape[-2:]}")
        p = self.store.params
        pre = self._branch_prefix(which)
        h = T.relu(T.conv2d(x, p[f"{pre}/stem"], p[f"{pre}/stem_b"], stride=4))
        h = T.relu(T.conv2d(h, p[f"{pre}/s1c2"], p[f"{pre}/s1c2_b"], stride=1))
        stages = [h]
        for i in range(2, 5):
            h = T.relu(T.conv2d(h, p[f"{pre}/s{i}c1"], p[f"{pre}/s{i}c1_b"], stride=2))
            h = T.relu(T.conv2d(h, p[f"{pre}/s{i}c2"], p[f"{pre}/s{i}c2_b"], stride=1))
            stages.append(h)
        return stages


def channel_weighted_fuse(f_v: Tensor, f_m: Tensor, w: Tensor) -> Tensor:
    """f_m gated per (frame, channel) by GAP(f_m) @ w, added onto f_v."""
    if f_v.shape != f_m.shape:
        raise DimensionError(f"fuse shapes disagree: {f_v.shape} vs {f_m.shape}")
    if w.shape != (f_m.shape[1], f_m.shape[1]):
        raise DimensionError(f"fuse weight {w.shape} does not match "
                             f"channel width {f_m.shape[1]}")
    gate = T.matmul(T.global_avg_pool(f_m), w)                 # (B, C)
    gate = T.reshape(gate, (f_m.shape[0], f_m.shape[1], 1, 1))
    return T.add(T.mul(f_m, gate), f_v)


def forward_pyramid(encoder: SiamEncoder, frames: Tensor,
                    maskiges: Tensor | None) -> list[Tensor]:
    """Fused pyramid; without the siam branch this is the visual pyramid."""
    visual = encoder.encode(frames, "image")
    if not encoder.use_siam:
        return visual
    if maskiges is None:
        raise DimensionError("siam branch enabled but no maskiges supplied")
    prior = encoder.encode(maskiges, "maskige")
    p = encoder.store.params
    return [channel_weighted_fuse(v, m, p[f"fuse/w{i + 1}"])
            for i, (v, m) in enumerate(zip(visual, prior))]

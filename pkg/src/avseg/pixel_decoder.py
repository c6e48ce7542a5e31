"""Lateral/top-down upsampling of the fused pyramid into per-pixel embeddings.

Each pyramid stage passes through a 1x1 conv + ReLU lateral to a common width,
then coarser levels are merged downward with nearest-neighbor upsampling:
P4 = lateral(F4), P_i = lateral(F_i) + up2(P_{i+1}).
"""

from __future__ import annotations

from . import tensor as T
from .params import ParamStore
from .tensor import Tensor


class PixelDecoder:
    def __init__(self, stage_channels, out_channels: int, store: ParamStore):
        self.out_channels = out_channels
        for i, c in enumerate(stage_channels):
            store.conv(f"pixdec/lat{i + 1}", out_channels, c, 1)
            store.zeros(f"pixdec/lat{i + 1}_b", (out_channels,))
        self.store = store

    def decode(self, pyramid: list[Tensor]) -> list[Tensor]:
        """[F1..F4] -> [P1..P4], all with the common channel width."""
        p = self.store.params
        laterals = [T.relu(T.conv2d(f, p[f"pixdec/lat{i + 1}"],
                                    p[f"pixdec/lat{i + 1}_b"], stride=1))
                    for i, f in enumerate(pyramid)]
        out = [None] * 4
        out[3] = laterals[3]
        for i in (2, 1, 0):
            out[i] = T.add(laterals[i], T.upsample_nearest2(out[i + 1]))
        return out

"""Bilateral audio-visual fusion with one shared similarity matrix.

Pixel tokens (flattened per clip across frames and space) and per-frame audio
features are projected to a common width d.  The scaled query-key similarity
S is computed exactly once per forward; its row-softmax drives the
audio-to-visual update and the row-softmax of its transpose drives the
visual-to-audio update.  Both residual streams are first projected to width d.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import tensor as T
from .config import ConfigurationError, FUSION_MODES
from .params import ParamStore
from .tensor import DimensionError, ParameterError, Tensor


@lru_cache(maxsize=None)
def _sine_encoding_cached(h: int, w: int, c: int) -> np.ndarray:
    if c % 2:
        raise ParameterError(f"positional channels must be even, got {c}")
    half = c // 2
    i = np.arange(half)
    inv_freq = 1.0 / (10000.0 ** ((2 * (i // 2)) / half))     # (half,)
    ys = np.arange(h)[:, None] * inv_freq[None, :]            # (h, half)
    xs = np.arange(w)[:, None] * inv_freq[None, :]
    y_enc = np.where(i % 2 == 0, np.sin(ys), np.cos(ys))      # (h, half)
    x_enc = np.where(i % 2 == 0, np.sin(xs), np.cos(xs))
    enc = np.empty((c, h, w))
    enc[:half] = y_enc.T[:, :, None]
    enc[half:] = x_enc.T[:, None, :]
    return enc


def sine_positional_encoding(h: int, w: int, c: int) -> np.ndarray:
    """Fixed 2-d sine/cosine grid encoding, (c, h, w); half the channels per
    axis, wavelengths geometric from 2*pi to 2*pi*1e4."""
    return _sine_encoding_cached(h, w, c).copy()


class BilateralFusion:
    def __init__(self, pixel_dim: int, audio_dim: int, embed_dim: int,
                 frames: int, store: ParamStore, per_frame: bool = False):
        self.c = pixel_dim
        self.d_audio = audio_dim
        self.d = embed_dim
        self.per_frame = per_frame
        store.linear("bfm/w_q", pixel_dim, embed_dim)
        store.linear("bfm/w_k", audio_dim, embed_dim)
        store.linear("bfm/w_v_vis", pixel_dim, embed_dim)
        store.linear("bfm/w_v_aud", audio_dim, embed_dim)
        store.linear("bfm/vis_proj", pixel_dim, embed_dim)
        store.linear("bfm/audio_in", audio_dim, embed_dim)
        store.linear("bfm/audio_out", embed_dim, embed_dim)
        store.embedding("bfm/audio_pos", (frames, audio_dim))
        self.store = store
        self.similarity_evaluations = 0  # instrumentation: S computations

    def add_positional(self, p1: Tensor, f_a: Tensor) -> tuple[Tensor, Tensor]:
        """Sine spatial encoding onto P1, learnable encoding onto F_a."""
        enc = sine_positional_encoding(p1.shape[-2], p1.shape[-1], p1.shape[-3])
        return T.add(p1, enc), T.add(f_a, self.store.params["bfm/audio_pos"])

    def forward(self, p1: Tensor, f_a: Tensor, mode: str = "bilateral"):
        """(B,T,C,H1,W1) pixels and (B,T,D) audio (positional encodings
        already added) -> (B,T,d,H1,W1) fused pixels and (B,T,d) fused audio."""
        if mode not in FUSION_MODES:
            raise ConfigurationError(f"unknown fusion mode {mode!r}")
        if p1.ndim != 5 or f_a.ndim != 3:
            raise DimensionError(f"bad input ranks: {p1.shape}, {f_a.shape}")
        b, t, c, h1, w1 = p1.shape
        if c != self.c or f_a.shape[-1] != self.d_audio:
            raise DimensionError(f"width mismatch: pixels {c} vs {self.c}, "
                                 f"audio {f_a.shape[-1]} vs {self.d_audio}")
        p = self.store.params
        n_tok = t * h1 * w1
        x = T.reshape(T.transpose(p1, (0, 1, 3, 4, 2)), (b, n_tok, c))
        x_res = T.matmul(x, p["bfm/vis_proj"])               # (B, P, d)
        a_res = T.matmul(f_a, p["bfm/audio_in"])             # (B, T, d)

        if mode == "none":
            vis_out = x_res
            aud_out = a_res
        else:
            q = T.matmul(x, p["bfm/w_q"])                    # (B, P, d)
            k = T.matmul(f_a, p["bfm/w_k"])                  # (B, T, d)
            s = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(self.d))
            self.similarity_evaluations += 1
            if self.per_frame:
                s = T.add(s, self._frame_bias(t, h1 * w1))
            if mode in ("visual_only", "bilateral"):
                v_a = T.matmul(f_a, p["bfm/w_v_aud"])        # (B, T, d)
                vis_out = T.add(T.matmul(T.softmax(s, axis=-1), v_a), x_res)
            else:
                vis_out = x_res
            if mode in ("audio_only", "bilateral"):
                v_v = T.matmul(x, p["bfm/w_v_vis"])          # (B, P, d)
                att = T.softmax(T.transpose(s, (0, 2, 1)), axis=-1)
                aud_out = T.add(T.matmul(T.matmul(att, v_v), p["bfm/audio_out"]),
                                a_res)
            else:
                aud_out = a_res

        fused_pixels = T.transpose(
            T.reshape(vis_out, (b, t, h1, w1, self.d)), (0, 1, 4, 2, 3))
        return fused_pixels, aud_out

    @staticmethod
    @lru_cache(maxsize=None)
    def _frame_bias(t: int, tokens_per_frame: int) -> np.ndarray:
        """Additive mask restricting pixel tokens to their own frame's audio."""
        frame_of_token = np.repeat(np.arange(t), tokens_per_frame)
        return np.where(frame_of_token[:, None] == np.arange(t)[None, :],
                        0.0, -1e9)
